//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use hlq_core::gptq::{accumulate_hessian, hlq_gptq_layer, BlockSchedule, CalibrationSet, DEFAULT_DAMPING};
use hlq_core::io::{load_hlqp, save_hlqp, HlqpContainer, Layout};
use hlq_core::lut::{decompose_bitplanes, lut_gemm, mirror_transform, rearrange_tiles, reference_gemm, TableMode};
use hlq_core::metrics::{model_footprint, ModelShapeConfig, ModelShapes};
use hlq_core::quant::{
    build_codebook, hlq_alternating, hlq_dequantize, hlq_gradient, rtn_quantize, BitAssignment, Format, HlqParams,
    QuantConfig,
};
use hlq_core::{HlqError, WeightMatrix};

fn to_py(err: HlqError) -> PyErr {
    match err {
        HlqError::Io { .. } => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f32>>) -> PyResult<WeightMatrix> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    WeightMatrix::new(n, k, rows.into_iter().flatten().collect()).map_err(to_py)
}

fn rows(m: &WeightMatrix) -> Vec<Vec<f32>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn parse<T: std::str::FromStr<Err = HlqError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// One quantized linear layer: codes plus per-group scales and zero-points.
#[pyclass(module = "hlq")]
struct QuantizedLayer {
    format: Format,
    params: HlqParams,
    codes: BitAssignment,
}

#[pymethods]
impl QuantizedLayer {
    /// Quantize an `n x k` weight matrix.
    ///
    /// `method` is one of `rtn`, `hlq-alt`, `hlq-grad`, `hlq-gptq`; the last
    /// needs `calib`, an `m x k` activation matrix.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (weights, bits, group_size, method = "hlq-alt", t_max = 10, calib = None, block_size = 128))]
    fn quantize(
        py: Python<'_>,
        weights: Vec<Vec<f32>>,
        bits: u32,
        group_size: usize,
        method: &str,
        t_max: usize,
        calib: Option<Vec<Vec<f32>>>,
        block_size: usize,
    ) -> PyResult<Self> {
        let w = matrix(weights)?;
        let x = calib.map(matrix).transpose()?;
        let cfg = QuantConfig::new(bits, group_size).with_t_max(t_max);
        let method = method.to_owned();
        py.detach(move || {
            let (format, (params, codes)) = match method.as_str() {
                "rtn" => (Format::Uniform, rtn_quantize(&w, &cfg)?.to_hlq()?),
                "hlq-alt" => (Format::Hlq, hlq_alternating(&w, &cfg)?),
                "hlq-grad" => (Format::Hlq, hlq_gradient(&w, &cfg)?),
                "hlq-gptq" => {
                    let x = x.ok_or_else(|| HlqError::Config("hlq-gptq needs calib".into()))?;
                    let h = accumulate_hessian(&CalibrationSet::new(x), DEFAULT_DAMPING)?;
                    (
                        Format::Hlq,
                        hlq_gptq_layer(&w, &h, &cfg, &BlockSchedule::new(block_size))?,
                    )
                }
                other => return Err(HlqError::Config(format!("unknown method {other:?}"))),
            };
            Ok(Self { format, params, codes })
        })
        .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = load_hlqp(&path).map_err(to_py)?;
        Ok(Self {
            format: c.header.format,
            params: c.params(),
            codes: c.assignment().map_err(to_py)?,
        })
    }

    #[pyo3(signature = (path, layout = "tiles", mirrored = false))]
    fn save(&self, path: PathBuf, layout: &str, mirrored: bool) -> PyResult<()> {
        let layout = match layout {
            "tiles" => Layout::Tiles,
            "planes" => Layout::Planes,
            other => return Err(PyValueError::new_err(format!("unknown layout {other:?}"))),
        };
        let c = HlqpContainer::new(self.format, &self.params, &self.codes, layout, mirrored).map_err(to_py)?;
        save_hlqp(&path, &c).map_err(to_py)
    }

    fn dequantize(&self) -> PyResult<Vec<Vec<f32>>> {
        let cb = build_codebook(self.params.bits).map_err(to_py)?;
        Ok(rows(&hlq_dequantize(&self.codes, &self.params, &cb).map_err(to_py)?))
    }

    /// `x @ W_hat.T` through lookup tables; `table` is `float` or `int8`.
    #[pyo3(signature = (x, table = "float"))]
    fn gemm(&self, py: Python<'_>, x: Vec<Vec<f32>>, table: &str) -> PyResult<Vec<Vec<f32>>> {
        let mode: TableMode = parse(table)?;
        let x = matrix(x)?;
        py.detach(|| {
            let packed = rearrange_tiles(&decompose_bitplanes(&self.codes)?, self.params.group_size)?;
            let mirrored = mirror_transform(&self.params)?;
            lut_gemm(&packed, &mirrored, &x, mode)
        })
        .map(|y| rows(&y))
        .map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.params.rows, self.params.cols)
    }

    #[getter]
    fn bits(&self) -> u32 {
        self.params.bits
    }

    #[getter]
    fn group_size(&self) -> usize {
        self.params.group_size
    }

    #[getter]
    fn format(&self) -> &'static str {
        self.format.as_str()
    }

    /// Flat `[n, k / g, q]` scales.
    #[getter]
    fn scales(&self) -> Vec<f32> {
        self.params.scales.clone()
    }

    #[getter]
    fn zeros(&self) -> Vec<f32> {
        self.params.zeros.clone()
    }

    #[getter]
    fn codes(&self) -> Vec<Vec<u8>> {
        (0..self.codes.rows).map(|i| self.codes.row(i).to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "QuantizedLayer(shape=({}, {}), format={}, bits={}, group_size={})",
            self.params.rows, self.params.cols, self.format, self.params.bits, self.params.group_size
        )
    }
}

#[pyfunction]
fn bpw(bits: u32, group_size: usize, format: &str) -> PyResult<f64> {
    if group_size == 0 {
        return Err(PyValueError::new_err("group_size must be positive"));
    }
    Ok(hlq_core::metrics::bpw(bits, group_size, parse(format)?))
}

#[pyfunction]
fn mse(a: Vec<Vec<f32>>, b: Vec<Vec<f32>>) -> PyResult<f64> {
    hlq_core::metrics::mse(&matrix(a)?, &matrix(b)?).map_err(to_py)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    hlq_core::metrics::cosine_similarity(&a, &b).map_err(to_py)
}

/// `x @ w.T` with f32 accumulation.
#[pyfunction]
fn dense_gemm(w: Vec<Vec<f32>>, x: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
    Ok(rows(&reference_gemm(&matrix(w)?, &matrix(x)?).map_err(to_py)?))
}

/// Quantized model size as `(bytes, compression_rate)`; the bundled
/// LLaMA-3.1-8B shapes unless `shapes_json` is given.
#[pyfunction]
#[pyo3(signature = (bits, group_size, format, shapes_json = None))]
fn footprint(bits: u32, group_size: usize, format: &str, shapes_json: Option<&str>) -> PyResult<(f64, f64)> {
    let shapes = match shapes_json {
        Some(text) => ModelShapes::from_json(text).map_err(to_py)?,
        None => ModelShapes::llama31_8b(),
    };
    let fp = model_footprint(&ModelShapeConfig {
        shapes,
        format: parse(format)?,
        bits,
        group_size,
    })
    .map_err(to_py)?;
    Ok((fp.bytes, fp.compression_rate))
}

#[pymodule]
fn hlq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<QuantizedLayer>()?;
    m.add_function(wrap_pyfunction!(bpw, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(dense_gemm, m)?)?;
    m.add_function(wrap_pyfunction!(footprint, m)?)?;
    Ok(())
}
