//! Layer-output reconstruction.
//!
//! Stage 1 fits `(s, z, b)` to each layer's weights in isolation. Stage 2
//! freezes the codes and tunes `(s, z)` so that the quantized layer
//! reproduces the full-precision outputs `X W^T` on calibration inputs.

use rayon::prelude::*;

use crate::error::{HlqError, Result};
use crate::matrix::WeightMatrix;
use crate::quant::{codeword_value, hlq_alternating, BitAssignment, HlqParams, QuantConfig};

/// Stage-2 optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Calibration rows per gradient step.
    pub batch: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 2,
            batch: 32,
        }
    }
}

impl TuneConfig {
    /// `lr == 0` is accepted and leaves the parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(HlqError::config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(HlqError::config("epochs must be at least 1"));
        }
        if self.batch == 0 {
            return Err(HlqError::config("batch must be at least 1"));
        }
        Ok(())
    }
}

/// Calibration inputs `X` (`m x k`) and the layer's full-precision weights
/// `W` (`n x k`).
#[derive(Debug, Clone)]
pub struct LayerSample {
    pub inputs: WeightMatrix,
    pub weights: WeightMatrix,
}

impl LayerSample {
    pub fn new(inputs: WeightMatrix, weights: WeightMatrix) -> Result<Self> {
        if inputs.cols() != weights.cols() {
            return Err(HlqError::data(format!(
                "inputs have {} features, weights expect {}",
                inputs.cols(),
                weights.cols()
            )));
        }
        Ok(Self { inputs, weights })
    }
}

pub fn reconstruct_stage1(w: &WeightMatrix, cfg: &QuantConfig) -> Result<(HlqParams, BitAssignment)> {
    hlq_alternating(w, cfg)
}

/// Stage 1 over several layers; each is fitted independently.
pub fn reconstruct_stage1_layers(
    layers: &[WeightMatrix],
    cfg: &QuantConfig,
) -> Result<Vec<(HlqParams, BitAssignment)>> {
    layers.iter().map(|w| reconstruct_stage1(w, cfg)).collect()
}

/// `L(s, z) = ||Y - X W_hat(s, z)^T||_F^2 / (m n)` with `Y = X W^T` fixed.
///
/// The full-precision weights are read once to form `Y`.
#[derive(Debug, Clone)]
pub struct OutputObjective {
    inputs: Vec<f64>,
    /// `[m, n]`.
    target: Vec<f64>,
    m: usize,
    n: usize,
    k: usize,
}

/// `(loss, dL/ds, dL/dz)`, gradients laid out like the parameter buffers.
pub type ObjectiveGrad = (f64, Vec<f64>, Vec<f64>);

impl OutputObjective {
    pub fn new(sample: &LayerSample) -> Self {
        let (m, k) = sample.inputs.shape();
        let n = sample.weights.rows();
        let inputs: Vec<f64> = sample.inputs.data().iter().map(|&v| v as f64).collect();
        let w: Vec<f64> = sample.weights.data().iter().map(|&v| v as f64).collect();
        let target = product(&inputs, &w, 0..m, n, k);
        Self {
            inputs,
            target,
            m,
            n,
            k,
        }
    }

    pub fn samples(&self) -> usize {
        self.m
    }

    fn check(&self, bits: &BitAssignment, params: &HlqParams) -> Result<()> {
        params.check()?;
        if (params.rows, params.cols) != (self.n, self.k) || (bits.rows, bits.cols) != (self.n, self.k) {
            return Err(HlqError::data(format!(
                "parameters are {}x{}, codes {}x{}, layer is {}x{}",
                params.rows, params.cols, bits.rows, bits.cols, self.n, self.k
            )));
        }
        if bits.bits != params.bits {
            return Err(HlqError::data("code and parameter bit widths differ"));
        }
        Ok(())
    }

    /// Loss over all samples.
    pub fn loss(&self, bits: &BitAssignment, params: &HlqParams) -> Result<f64> {
        self.check(bits, params)?;
        let w_hat = dequantize_f64(bits, params);
        Ok(self.residual(&w_hat, 0..self.m).1)
    }

    /// Loss and exact gradient over all samples.
    pub fn gradient(&self, bits: &BitAssignment, params: &HlqParams) -> Result<ObjectiveGrad> {
        self.check(bits, params)?;
        Ok(self.batch_gradient(bits, params, 0..self.m))
    }

    /// Residual `X_b W_hat^T - Y_b` for a row range and the loss on it.
    fn residual(&self, w_hat: &[f64], rows: std::ops::Range<usize>) -> (Vec<f64>, f64) {
        let (n, k) = (self.n, self.k);
        let mut r = product(&self.inputs, w_hat, rows.clone(), n, k);
        let target = &self.target[rows.start * n..rows.end * n];
        let mut sq = 0.0;
        for (v, &t) in r.iter_mut().zip(target) {
            *v -= t;
            sq += *v * *v;
        }
        (r, sq / (rows.len() * n) as f64)
    }

    fn batch_gradient(&self, bits: &BitAssignment, params: &HlqParams, rows: std::ops::Range<usize>) -> ObjectiveGrad {
        let (n, k) = (self.n, self.k);
        let mb = rows.len();
        let w_hat = dequantize_f64(bits, params);
        let (resid, loss) = self.residual(&w_hat, rows.clone());
        let x = &self.inputs[rows.start * k..rows.end * k];
        let q = params.bits as usize;
        let g = params.group_size;
        let gpr = params.groups_per_row();
        let norm = 2.0 / (mb * n) as f64;

        let mut d_s = vec![0f64; params.scales.len()];
        let mut d_z = vec![0f64; params.zeros.len()];
        d_s.par_chunks_mut(gpr * q)
            .zip(d_z.par_chunks_mut(gpr))
            .enumerate()
            .for_each(|(i, (ds_row, dz_row))| {
                // dL/dW_hat[i, :] = norm * sum_r resid[r, i] * x[r, :]
                let mut gw = vec![0f64; k];
                for r in 0..mb {
                    let coef = norm * resid[r * n + i];
                    for (gc, &xv) in gw.iter_mut().zip(&x[r * k..(r + 1) * k]) {
                        *gc += coef * xv;
                    }
                }
                let codes = bits.row(i);
                for (c, &gc) in gw.iter().enumerate() {
                    let grp = c / g;
                    dz_row[grp] += gc;
                    for j in 0..q {
                        if (codes[c] >> j) & 1 == 1 {
                            ds_row[grp * q + j] += gc;
                        }
                    }
                }
            });
        (loss, d_s, d_z)
    }
}

fn dequantize_f64(bits: &BitAssignment, params: &HlqParams) -> Vec<f64> {
    let g = params.group_size;
    let mut out = vec![0f64; params.rows * params.cols];
    out.par_chunks_mut(params.cols).enumerate().for_each(|(i, row)| {
        for (c, (o, &code)) in row.iter_mut().zip(bits.row(i)).enumerate() {
            *o = codeword_value(params.group_scales(i, c / g), params.zero(i, c / g), code);
        }
    });
    out
}

/// `X[rows] W^T` as a `rows.len() x n` row-major buffer.
fn product(x: &[f64], w: &[f64], rows: std::ops::Range<usize>, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0f64; rows.len() * n];
    out.par_chunks_mut(n).zip(rows.into_par_iter()).for_each(|(o_row, r)| {
        let xr = &x[r * k..(r + 1) * k];
        for (i, o) in o_row.iter_mut().enumerate() {
            *o = w[i * k..(i + 1) * k].iter().zip(xr).map(|(a, b)| a * b).sum();
        }
    });
    out
}

/// Loss history of a stage-2 run.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub initial_loss: f64,
    /// Full-sample loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TuneReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

pub fn reconstruct_stage2(
    sample: &LayerSample,
    bits: &BitAssignment,
    params: &HlqParams,
    tune: &TuneConfig,
) -> Result<HlqParams> {
    reconstruct_stage2_report(sample, bits, params, tune).map(|(p, _)| p)
}

/// Mini-batch gradient descent on `(s, z)` with the codes held fixed.
///
/// Batches are taken in sample order. Fails with [`HlqError::Tuning`] if
/// the loss ever exceeds ten times its starting value.
pub fn reconstruct_stage2_report(
    sample: &LayerSample,
    bits: &BitAssignment,
    params: &HlqParams,
    tune: &TuneConfig,
) -> Result<(HlqParams, TuneReport)> {
    tune.validate()?;
    let objective = OutputObjective::new(sample);
    let initial_loss = objective.loss(bits, params)?;
    let mut current = params.clone();
    let mut epoch_losses = Vec::with_capacity(tune.epochs);
    let diverged = |loss: f64| !loss.is_finite() || loss > 10.0 * initial_loss;
    let m = objective.samples();

    for epoch in 0..tune.epochs {
        for start in (0..m).step_by(tune.batch) {
            let (loss, d_s, d_z) = objective.batch_gradient(bits, &current, start..(start + tune.batch).min(m));
            if start == 0 && epoch == 0 && !loss.is_finite() {
                return Err(HlqError::Tuning("non-finite loss on the first batch".into()));
            }
            for (s, d) in current.scales.iter_mut().zip(&d_s) {
                *s = (*s as f64 - tune.lr * d) as f32;
            }
            for (z, d) in current.zeros.iter_mut().zip(&d_z) {
                *z = (*z as f64 - tune.lr * d) as f32;
            }
        }
        let loss = objective.loss(bits, &current)?;
        log::debug!("stage 2 epoch {epoch}: loss {loss:.6e}");
        if diverged(loss) {
            return Err(HlqError::Tuning(format!(
                "loss grew from {initial_loss:.3e} to {loss:.3e} in epoch {epoch}; try a smaller learning rate (now {})",
                tune.lr
            )));
        }
        epoch_losses.push(loss);
    }
    Ok((
        current,
        TuneReport {
            initial_loss,
            epoch_losses,
        },
    ))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::quant::{build_codebook, hlq_dequantize};
    use crate::synth;

    fn random_case(
        n: usize,
        k: usize,
        m: usize,
        q: u32,
        g: usize,
        seed: u64,
    ) -> (LayerSample, HlqParams, BitAssignment) {
        let w = synth::gaussian_matrix(n, k, 0.02, seed);
        let x = synth::gaussian_matrix(m, k, 1.0, seed + 1);
        let (params, bits) = reconstruct_stage1(&w, &QuantConfig::new(q, g)).unwrap();
        (LayerSample::new(x, w).unwrap(), params, bits)
    }

    #[test]
    fn stage1_is_alternating() {
        let w = synth::gaussian_matrix(8, 128, 0.02, 1);
        let cfg = QuantConfig::new(2, 64);
        assert_eq!(
            reconstruct_stage1(&w, &cfg).unwrap(),
            hlq_alternating(&w, &cfg).unwrap()
        );
    }

    #[test]
    fn layers_are_independent() {
        let a = synth::gaussian_matrix(8, 128, 0.02, 2);
        let b = synth::gaussian_matrix(4, 64, 0.05, 3);
        let cfg = QuantConfig::new(3, 32);
        let both = reconstruct_stage1_layers(&[a.clone(), b.clone()], &cfg).unwrap();
        assert_eq!(both[0], reconstruct_stage1(&a, &cfg).unwrap());
        assert_eq!(both[1], reconstruct_stage1(&b, &cfg).unwrap());
    }

    #[test]
    fn stage1_beats_rtn() {
        let w = synth::gaussian_matrix(16, 256, 0.02, 4);
        let cfg = QuantConfig::new(2, 128);
        let (params, bits) = reconstruct_stage1(&w, &cfg).unwrap();
        let hlq = hlq_dequantize(&bits, &params, &build_codebook(2).unwrap()).unwrap();
        let rtn = crate::quant::rtn_dequantize(&crate::quant::rtn_quantize(&w, &cfg).unwrap()).unwrap();
        let mse = |a: &WeightMatrix| {
            a.data()
                .iter()
                .zip(w.data())
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
        };
        assert!(mse(&hlq) < mse(&rtn));
    }

    #[test]
    fn representable_weights_stay_put() {
        let mut params = HlqParams::zeroed(4, 8, 2, 4);
        for (i, s) in params.scales.iter_mut().enumerate() {
            *s = [0.5, 1.0][i % 2];
        }
        params.zeros.fill(-1.0);
        let mut rng = synth::rng(5);
        let bits = BitAssignment::new(4, 8, 2, synth::random_codes(&mut rng, 32, 2)).unwrap();
        let w = hlq_dequantize(&bits, &params, &build_codebook(2).unwrap()).unwrap();
        let x = synth::gaussian_matrix(6, 8, 1.0, 6);
        let sample = LayerSample::new(x, w).unwrap();
        let (out, report) = reconstruct_stage2_report(&sample, &bits, &params, &TuneConfig::default()).unwrap();
        assert_eq!(report.initial_loss, 0.0);
        assert_eq!(out, params);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (sample, params, bits) = random_case(6, 64, 20, 2, 32, 7);
        let obj = OutputObjective::new(&sample);
        let (_, d_s, d_z) = obj.gradient(&bits, &params).unwrap();
        // Loss is quadratic in (s, z), so central differences are exact up
        // to rounding; probe in f64 by nudging a copy.
        let mut rng = synth::rng(8);
        for _ in 0..40 {
            let use_scale = rng.random_bool(0.5);
            let len = if use_scale { d_s.len() } else { d_z.len() };
            let idx = rng.random_range(0..len);
            let h = 1e-3f32;
            let eval = |delta: f32| {
                let mut p = params.clone();
                if use_scale {
                    p.scales[idx] += delta;
                } else {
                    p.zeros[idx] += delta;
                }
                let actual = if use_scale {
                    p.scales[idx] - params.scales[idx]
                } else {
                    p.zeros[idx] - params.zeros[idx]
                };
                (obj.loss(&bits, &p).unwrap(), actual as f64)
            };
            let ((lp, hp), (lm, hm)) = (eval(h), eval(-h));
            let fd = (lp - lm) / (hp - hm);
            let an = if use_scale { d_s[idx] } else { d_z[idx] };
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn default_lr_does_not_increase_loss() {
        for seed in 0..5 {
            let (sample, params, bits) = random_case(16, 128, 64, 2, 64, 100 + seed);
            let (out, report) = reconstruct_stage2_report(&sample, &bits, &params, &TuneConfig::default()).unwrap();
            assert!(report.final_loss() <= report.initial_loss, "seed {seed}: {report:?}");
            assert_eq!((out.rows, out.cols), (16, 128));
        }
    }

    #[test]
    fn larger_lr_reduces_loss_clearly() {
        let (sample, params, bits) = random_case(16, 128, 64, 2, 64, 9);
        let tune = TuneConfig {
            lr: 2e-2,
            epochs: 20,
            batch: 16,
        };
        let (_, report) = reconstruct_stage2_report(&sample, &bits, &params, &tune).unwrap();
        assert!(report.final_loss() < 0.95 * report.initial_loss, "{report:?}");
    }

    #[test]
    fn zero_lr_is_identity() {
        let (sample, params, bits) = random_case(8, 64, 16, 3, 32, 10);
        let tune = TuneConfig {
            lr: 0.0,
            epochs: 3,
            batch: 4,
        };
        assert_eq!(reconstruct_stage2(&sample, &bits, &params, &tune).unwrap(), params);
    }

    #[test]
    fn huge_lr_reports_divergence() {
        let (sample, params, bits) = random_case(8, 64, 16, 2, 32, 11);
        let tune = TuneConfig {
            lr: 10.0,
            epochs: 2,
            batch: 16,
        };
        assert!(matches!(
            reconstruct_stage2(&sample, &bits, &params, &tune),
            Err(HlqError::Tuning(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_data_error() {
        let (sample, params, _) = random_case(8, 64, 16, 2, 32, 12);
        let bits = BitAssignment::new(8, 32, 2, vec![0; 256]).unwrap();
        assert!(matches!(
            reconstruct_stage2(&sample, &bits, &params, &TuneConfig::default()),
            Err(HlqError::Data(_))
        ));
    }
}
