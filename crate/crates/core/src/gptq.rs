//! Calibration Hessians and block-wise HLQ with GPTQ-style error
//! compensation.
//!
//! Columns are quantized one block at a time. Once a block is fixed, its
//! residual is pushed onto the columns that have not been quantized yet,
//! weighted by the inverse Hessian, so later blocks absorb the error.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{HlqError, Result};
use crate::matrix::WeightMatrix;
use crate::quant::{build_codebook, hlq_alternating, hlq_dequantize, BitAssignment, HlqParams, QuantConfig};

/// Default damping as a fraction of the mean Hessian diagonal.
pub const DEFAULT_DAMPING: f64 = 0.01;

/// Samples per partial product when accumulating `X^T X`. Fixed so the
/// summation tree does not depend on the worker count.
const SAMPLE_CHUNK: usize = 64;

/// Calibration activations for one linear layer: `samples x features`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet(WeightMatrix);

impl CalibrationSet {
    pub fn new(x: WeightMatrix) -> Self {
        Self(x)
    }

    pub fn samples(&self) -> usize {
        self.0.rows()
    }

    pub fn features(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &WeightMatrix {
        &self.0
    }
}

/// Damped symmetric `k x k` Hessian `2 X^T X + lambda I`, row-major `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianAccumulator {
    dim: usize,
    h: Vec<f64>,
    lambda: f64,
}

impl HessianAccumulator {
    /// Wraps an explicit matrix. It must be square and symmetric.
    pub fn from_matrix(dim: usize, h: Vec<f64>) -> Result<Self> {
        if dim == 0 || h.len() != dim * dim {
            return Err(HlqError::data(format!("expected a {dim}x{dim} Hessian")));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let (a, b) = (h[i * dim + j], h[j * dim + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(HlqError::data(format!("Hessian not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { dim, h, lambda: 0.0 })
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut h = vec![0.0; dim * dim];
        for i in 0..dim {
            h[i * dim + i] = c;
        }
        Self { dim, h, lambda: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Damping that was added to the diagonal.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.h
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.dim + j]
    }
}

/// `H = 2 X^T X + lambda I` with `lambda = lambda_frac * mean(diag(2 X^T X))`.
pub fn accumulate_hessian(x: &CalibrationSet, lambda_frac: f64) -> Result<HessianAccumulator> {
    if !lambda_frac.is_finite() || lambda_frac <= 0.0 {
        return Err(HlqError::config("damping fraction must be positive"));
    }
    let k = x.features();
    let data = x.matrix().data();

    let partials: Vec<Vec<f64>> = data
        .par_chunks(SAMPLE_CHUNK * k)
        .map(|rows| {
            let mut acc = vec![0f64; k * k];
            for sample in rows.chunks_exact(k) {
                for (i, &xi) in sample.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let xi = xi as f64;
                    let out = &mut acc[i * k..(i + 1) * k];
                    for (o, &xj) in out[i..].iter_mut().zip(&sample[i..]) {
                        *o += xi * xj as f64;
                    }
                }
            }
            acc
        })
        .collect();
    let mut h = tree_sum(partials).unwrap_or_else(|| vec![0.0; k * k]);

    for i in 0..k {
        for j in i..k {
            let v = 2.0 * h[i * k + j];
            h[i * k + j] = v;
            h[j * k + i] = v;
        }
    }
    let mean_diag = (0..k).map(|i| h[i * k + i]).sum::<f64>() / k as f64;
    if mean_diag == 0.0 {
        return Err(HlqError::Calibration(
            "calibration activations are all zero; the Hessian diagonal vanishes".into(),
        ));
    }
    let lambda = lambda_frac * mean_diag;
    for i in 0..k {
        h[i * k + i] += lambda;
    }
    Ok(HessianAccumulator { dim: k, h, lambda })
}

/// Pairwise sum in a fixed shape.
fn tree_sum(mut parts: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSchedule {
    /// Columns quantized together; a multiple of the group size.
    pub block_size: usize,
}

impl Default for BlockSchedule {
    fn default() -> Self {
        Self { block_size: 128 }
    }
}

impl BlockSchedule {
    pub fn new(block_size: usize) -> Self {
        Self { block_size }
    }

    fn validate(&self, cols: usize, group_size: usize) -> Result<()> {
        if self.block_size == 0 || !self.block_size.is_multiple_of(group_size) {
            return Err(HlqError::config(format!(
                "block size {} is not a multiple of group size {group_size}",
                self.block_size
            )));
        }
        if !cols.is_multiple_of(self.block_size) {
            return Err(HlqError::config(format!(
                "block size {} does not divide {cols} columns",
                self.block_size
            )));
        }
        Ok(())
    }
}

/// Upper Cholesky factor `U` of `H^-1` (so `H^-1 = U^T U`).
///
/// Row `b` of `U` carries the inverse Hessian of the columns `b..` with
/// the earlier columns eliminated, which is what the sequential block update
/// needs.
fn inverse_cholesky_upper(h: &HessianAccumulator) -> Result<DMatrix<f64>> {
    let k = h.dim();
    let hm = DMatrix::from_row_slice(k, k, h.as_slice());
    let chol = hm
        .cholesky()
        .ok_or_else(|| HlqError::Numerical("Hessian is not positive definite; increase the damping fraction".into()))?;
    let mut hinv = chol.inverse();
    // Re-symmetrize away rounding so the second factorization sees an exact
    // symmetric matrix.
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (hinv[(i, j)] + hinv[(j, i)]);
            hinv[(i, j)] = v;
            hinv[(j, i)] = v;
        }
    }
    let l = hinv.cholesky().ok_or_else(|| {
        HlqError::Numerical("inverse Hessian lost definiteness; increase the damping fraction".into())
    })?;
    Ok(l.l().transpose())
}

/// HLQ-GPTQ: alternating HLQ on each column block of the current
/// (compensated) weights, then `W_R -= E * U_BB^-1 * U_BR` on the remaining
/// columns, where `E` is the block residual and `U` the upper Cholesky factor
/// of `H^-1`. This equals `E (H^-1_BB)^-1 H^-1_BR` taken over the inverse
/// Hessian of the not-yet-quantized columns.
pub fn hlq_gptq_layer(
    w: &WeightMatrix,
    h: &HessianAccumulator,
    cfg: &QuantConfig,
    sched: &BlockSchedule,
) -> Result<(HlqParams, BitAssignment)> {
    let (rows, cols) = w.shape();
    cfg.validate(cols)?;
    sched.validate(cols, cfg.group_size)?;
    if h.dim() != cols {
        return Err(HlqError::data(format!(
            "Hessian is {0}x{0}, layer has {cols} input channels",
            h.dim()
        )));
    }
    let u = inverse_cholesky_upper(h)?;
    let cb = build_codebook(cfg.bits)?;
    let bs = sched.block_size;

    let mut work = w.clone();
    let mut block_params = Vec::with_capacity(cols / bs);
    let mut block_bits = Vec::with_capacity(cols / bs);
    for start in (0..cols).step_by(bs) {
        let end = start + bs;
        let block = work.columns(start, end);
        let (params, bits) = hlq_alternating(&block, cfg)?;
        if end < cols {
            let deq = hlq_dequantize(&bits, &params, &cb)?;
            let u_bb = u.view((start, start), (bs, bs)).into_owned();
            let u_br = u.view((start, end), (bs, cols - end)).into_owned();
            let coupling = u_bb
                .solve_upper_triangular(&u_br)
                .ok_or_else(|| HlqError::Numerical("singular inverse-Hessian block".into()))?;
            if coupling.iter().any(|&v| v != 0.0) {
                let err = DMatrix::from_fn(rows, bs, |i, c| block.get(i, c) as f64 - deq.get(i, c) as f64);
                let update = err * coupling;
                for i in 0..rows {
                    let row = &mut work.row_mut(i)[end..];
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = (*v as f64 - update[(i, c)]) as f32;
                    }
                }
            }
        }
        block_params.push(params);
        block_bits.push(bits);
    }
    Ok((hstack_params(&block_params), hstack_bits(&block_bits)))
}

fn hstack_params(parts: &[HlqParams]) -> HlqParams {
    let first = &parts[0];
    let rows = first.rows;
    let q = first.bits as usize;
    let cols = parts.iter().map(|p| p.cols).sum();
    let mut out = HlqParams::zeroed(rows, cols, first.bits, first.group_size);
    out.scales.clear();
    out.zeros.clear();
    for i in 0..rows {
        for p in parts {
            let gpr = p.groups_per_row();
            out.scales.extend_from_slice(&p.scales[i * gpr * q..(i + 1) * gpr * q]);
            out.zeros.extend_from_slice(&p.zeros[i * gpr..(i + 1) * gpr]);
        }
    }
    out
}

fn hstack_bits(parts: &[BitAssignment]) -> BitAssignment {
    let first = &parts[0];
    let cols = parts.iter().map(|p| p.cols).sum();
    let mut codes = Vec::with_capacity(first.rows * cols);
    for i in 0..first.rows {
        for p in parts {
            codes.extend_from_slice(p.row(i));
        }
    }
    BitAssignment {
        rows: first.rows,
        cols,
        bits: first.bits,
        codes,
    }
}

/// `tr((W - W_hat) H (W - W_hat)^T)`.
pub fn proxy_loss(w: &WeightMatrix, w_hat: &WeightMatrix, h: &HessianAccumulator) -> Result<f64> {
    w.ensure_same_shape(w_hat)?;
    let k = w.cols();
    if h.dim() != k {
        return Err(HlqError::data("Hessian dimension does not match the weights"));
    }
    let total: f64 = (0..w.rows())
        .into_par_iter()
        .map(|i| {
            let e: Vec<f64> = w
                .row(i)
                .iter()
                .zip(w_hat.row(i))
                .map(|(&a, &b)| a as f64 - b as f64)
                .collect();
            let mut acc = 0.0;
            for (a, &ea) in e.iter().enumerate() {
                if ea == 0.0 {
                    continue;
                }
                let hrow = &h.as_slice()[a * k..(a + 1) * k];
                acc += ea * hrow.iter().zip(&e).map(|(hv, eb)| hv * eb).sum::<f64>();
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total.max(0.0))
}
