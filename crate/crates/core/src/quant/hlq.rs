use rayon::prelude::*;

use crate::error::{HlqError, Result};
use crate::matrix::WeightMatrix;

use super::codebook::Codebook;
use super::lstsq::min_norm_solve;
use super::QuantConfig;

/// Per-group HLQ parameters for an `n x k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HlqParams {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    pub group_size: usize,
    /// `[rows, cols / group_size, bits]`, bit index fastest.
    pub scales: Vec<f32>,
    /// `[rows, cols / group_size]`.
    pub zeros: Vec<f32>,
}

impl HlqParams {
    pub fn zeroed(rows: usize, cols: usize, bits: u32, group_size: usize) -> Self {
        let groups = rows * (cols / group_size);
        Self {
            rows,
            cols,
            bits,
            group_size,
            scales: vec![0.0; groups * bits as usize],
            zeros: vec![0.0; groups],
        }
    }

    #[inline]
    pub fn groups_per_row(&self) -> usize {
        self.cols / self.group_size
    }

    #[inline]
    pub fn group_scales(&self, row: usize, grp: usize) -> &[f32] {
        let q = self.bits as usize;
        let base = (row * self.groups_per_row() + grp) * q;
        &self.scales[base..base + q]
    }

    #[inline]
    pub fn zero(&self, row: usize, grp: usize) -> f32 {
        self.zeros[row * self.groups_per_row() + grp]
    }

    pub fn check(&self) -> Result<()> {
        if self.group_size == 0 || !self.cols.is_multiple_of(self.group_size) {
            return Err(HlqError::data(format!(
                "group size {} does not divide {} columns",
                self.group_size, self.cols
            )));
        }
        let groups = self.rows * self.groups_per_row();
        if self.scales.len() != groups * self.bits as usize || self.zeros.len() != groups {
            return Err(HlqError::data("HLQ parameter buffers do not match their shape"));
        }
        Ok(())
    }
}

/// Selected codeword index per weight, row-major `[rows, cols]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitAssignment {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    pub codes: Vec<u8>,
}

impl BitAssignment {
    pub fn new(rows: usize, cols: usize, bits: u32, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(HlqError::data(format!(
                "expected {} codes, got {}",
                rows * cols,
                codes.len()
            )));
        }
        if let Some(bad) = codes.iter().find(|&&c| (c as u32) >> bits != 0) {
            return Err(HlqError::data(format!("code {bad} does not fit in {bits} bits")));
        }
        Ok(Self {
            rows,
            cols,
            bits,
            codes,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.codes[i * self.cols..(i + 1) * self.cols]
    }
}

/// The reconstruction values `V = s C^T + z` of every codeword, per group.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub rows: usize,
    pub groups_per_row: usize,
    pub size: usize,
    /// `[rows, groups_per_row, size]`.
    pub values: Vec<f32>,
}

/// Result of fitting one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub scales: Vec<f32>,
    pub zero: f32,
    pub codes: Vec<u8>,
}

/// Value of codeword `code` under `(scales, zero)`.
///
/// Summation runs in `f64` from the zero-point upward through the bits, so
/// assignment, the search objective and dequantization all see the same
/// number.
#[inline]
pub fn codeword_value(scales: &[f32], zero: f32, code: u8) -> f64 {
    let mut v = zero as f64;
    for (j, &s) in scales.iter().enumerate() {
        if (code >> j) & 1 == 1 {
            v += s as f64;
        }
    }
    v
}

fn candidates(scales: &[f32], zero: f32, out: &mut [f64]) {
    for (m, slot) in out.iter_mut().enumerate() {
        *slot = codeword_value(scales, zero, m as u8);
    }
}

pub fn candidate_set(params: &HlqParams, cb: &Codebook) -> Result<CandidateSet> {
    params.check()?;
    check_codebook(params.bits, cb)?;
    let gpr = params.groups_per_row();
    let size = cb.len();
    let mut values = Vec::with_capacity(params.rows * gpr * size);
    let mut buf = vec![0f64; size];
    for i in 0..params.rows {
        for grp in 0..gpr {
            candidates(params.group_scales(i, grp), params.zero(i, grp), &mut buf);
            values.extend(buf.iter().map(|&v| v as f32));
        }
    }
    Ok(CandidateSet {
        rows: params.rows,
        groups_per_row: gpr,
        size,
        values,
    })
}

fn check_codebook(bits: u32, cb: &Codebook) -> Result<()> {
    if cb.bits() != bits {
        return Err(HlqError::data(format!(
            "codebook has {} bits, parameters have {bits}",
            cb.bits()
        )));
    }
    Ok(())
}

fn min_max(w: &[f32]) -> (f32, f32) {
    w.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// Uniform-grid starting point: `s = [d, 2d, .., 2^(q-1) d]`, `z = min`.
pub fn init_group(w: &[f32], bits: u32) -> (Vec<f32>, f32) {
    let (lo, hi) = min_max(w);
    let levels = ((1u32 << bits) - 1) as f32;
    let delta = if hi > lo { (hi - lo) / levels } else { 0.0 };
    let scales = (0..bits).map(|j| delta * (1u32 << j) as f32).collect();
    (scales, lo)
}

/// Nearest-codeword selection for one group. Ties go to the lower index.
pub fn assign_group(w: &[f32], scales: &[f32], zero: f32, codes: &mut [u8]) {
    let mut cand = [0f64; 256];
    let cand = &mut cand[..1usize << scales.len()];
    candidates(scales, zero, cand);
    for (c, &x) in codes.iter_mut().zip(w) {
        let x = x as f64;
        let mut best = 0usize;
        let mut best_err = (x - cand[0]).abs();
        for (m, &v) in cand.iter().enumerate().skip(1) {
            let err = (x - v).abs();
            if err < best_err {
                best = m;
                best_err = err;
            }
        }
        *c = best as u8;
    }
}

/// Mean squared error of a group's reconstruction, in `f64`.
pub fn group_mse(w: &[f32], codes: &[u8], scales: &[f32], zero: f32) -> f64 {
    let sum: f64 = w
        .iter()
        .zip(codes)
        .map(|(&x, &c)| {
            let r = x as f64 - codeword_value(scales, zero, c);
            r * r
        })
        .sum();
    sum / w.len() as f64
}

/// Least-squares refit of `(s, z)` with the codes held fixed.
///
/// Solves the normal equations of the design `[B | 1]` in `f64`, taking the
/// minimum-norm solution when `B` is rank deficient.
pub fn lse_group(w: &[f32], codes: &[u8], bits: u32) -> (Vec<f32>, f32) {
    let q = bits as usize;
    let dim = q + 1;
    let mut gram = vec![0f64; dim * dim];
    let mut rhs = vec![0f64; dim];
    let mut row = [0f64; 9];
    for (&x, &c) in w.iter().zip(codes) {
        for (j, slot) in row[..q].iter_mut().enumerate() {
            *slot = ((c >> j) & 1) as f64;
        }
        row[q] = 1.0;
        let x = x as f64;
        for a in 0..dim {
            if row[a] == 0.0 {
                continue;
            }
            rhs[a] += x;
            for b in 0..dim {
                gram[a * dim + b] += row[b];
            }
        }
    }
    let sol = min_norm_solve(&mut gram, &rhs, dim);
    let scales = sol[..q].iter().map(|&v| v as f32).collect();
    (scales, sol[q] as f32)
}

/// Gradient of `mean((w - w_hat)^2)` with respect to `(s, z)` for fixed
/// codes. Returns `(loss, d_scales, d_zero)`.
pub fn reconstruction_grad(w: &[f32], codes: &[u8], scales: &[f32], zero: f32) -> (f64, Vec<f64>, f64) {
    let q = scales.len();
    let mut loss = 0.0;
    let mut d_s = vec![0f64; q];
    let mut d_z = 0.0;
    for (&x, &c) in w.iter().zip(codes) {
        let r = x as f64 - codeword_value(scales, zero, c);
        loss += r * r;
        for (j, d) in d_s.iter_mut().enumerate() {
            if (c >> j) & 1 == 1 {
                *d += r;
            }
        }
        d_z += r;
    }
    let norm = w.len() as f64;
    let k = -2.0 / norm;
    d_s.iter_mut().for_each(|d| *d *= k);
    (loss / norm, d_s, d_z * k)
}

/// Alternating bit-pattern selection and least-squares refit on one group,
/// for exactly `t_max` rounds. When `trace` is given, the MSE at
/// initialization and after every round is appended to it.
pub fn alternating_group(w: &[f32], bits: u32, t_max: usize, mut trace: Option<&mut Vec<f64>>) -> GroupFit {
    let (mut scales, mut zero) = init_group(w, bits);
    let mut codes = vec![0u8; w.len()];
    if let Some(t) = trace.as_deref_mut() {
        assign_group(w, &scales, zero, &mut codes);
        t.push(group_mse(w, &codes, &scales, zero));
    }
    for _ in 0..t_max {
        assign_group(w, &scales, zero, &mut codes);
        (scales, zero) = lse_group(w, &codes, bits);
        if let Some(t) = trace.as_deref_mut() {
            t.push(group_mse(w, &codes, &scales, zero));
        }
    }
    GroupFit { scales, zero, codes }
}

/// Gradient search on one group.
///
/// Each round assigns codes under the current `(s, z)`, evaluates the
/// reconstruction MSE and takes one Nesterov step. The step is taken in the
/// mirrored coordinates `s' = s / 2`, `z' = z + sum(s) / 2`, whose `+-1`
/// design columns are close to orthogonal to the zero-point column; the
/// gradient there is the chain-rule image of [`reconstruction_grad`]. After
/// each step `s >= 0` and `z` is clipped to the group's `[min, max]`. The
/// loop ends after `t_max` rounds or once the loss improves by less than
/// `epsilon`. With `momentum = 0` this is plain gradient descent.
pub fn gradient_group(w: &[f32], cfg: &QuantConfig) -> GroupFit {
    let q = cfg.bits as usize;
    let (lo, hi) = min_max(w);
    let (mut scales, mut zero) = init_group(w, cfg.bits);
    let mut codes = vec![0u8; w.len()];
    // Velocity in (s, z) coordinates; the last slot is the zero-point.
    let mut vel = vec![0f64; q + 1];
    let mut ahead_s = vec![0f32; q];
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.t_max {
        assign_group(w, &scales, zero, &mut codes);
        let loss = group_mse(w, &codes, &scales, zero);
        if prev - loss < cfg.epsilon {
            break;
        }
        prev = loss;

        for (a, (&s, &v)) in ahead_s.iter_mut().zip(scales.iter().zip(&vel)) {
            *a = (s as f64 + cfg.momentum * v) as f32;
        }
        let ahead_z = (zero as f64 + cfg.momentum * vel[q]) as f32;
        let (_, d_s, d_z) = reconstruction_grad(w, &codes, &ahead_s, ahead_z);

        // dL/ds'_j = 2 dL/ds_j - dL/dz and dL/dz' = dL/dz; a step in the
        // mirrored coordinates maps back to ds_j = 2 ds'_j, dz = dz' - sum ds'.
        let mut sum_mirrored = 0.0;
        for (j, &d) in d_s.iter().enumerate() {
            let g = 2.0 * d - d_z;
            sum_mirrored += g;
            vel[j] = cfg.momentum * vel[j] - cfg.lr * 2.0 * g;
        }
        vel[q] = cfg.momentum * vel[q] - cfg.lr * (d_z - sum_mirrored);

        for (s, &v) in scales.iter_mut().zip(&vel) {
            *s = ((*s as f64 + v) as f32).max(0.0);
        }
        zero = ((zero as f64 + vel[q]) as f32).clamp(lo, hi);
    }
    assign_group(w, &scales, zero, &mut codes);
    GroupFit { scales, zero, codes }
}

fn check_shapes(w: &WeightMatrix, params: &HlqParams) -> Result<()> {
    params.check()?;
    if w.shape() != (params.rows, params.cols) {
        return Err(HlqError::data(format!(
            "weights are {:?}, parameters describe {:?}",
            w.shape(),
            (params.rows, params.cols)
        )));
    }
    Ok(())
}

/// Runs `fit` on every group, chunk by chunk over rows, writing into fresh
/// parameter and code buffers. Each group is independent, so the result
/// does not depend on `chunk_rows` or the worker count.
fn fit_groups<F>(w: &WeightMatrix, cfg: &QuantConfig, fit: F) -> (HlqParams, BitAssignment)
where
    F: Fn(usize, usize, &[f32]) -> GroupFit + Sync,
{
    let (rows, cols) = w.shape();
    let g = cfg.group_size;
    let q = cfg.bits as usize;
    let gpr = cols / g;
    let mut params = HlqParams::zeroed(rows, cols, cfg.bits, g);
    let mut codes = vec![0u8; rows * cols];

    let chunk = cfg.chunk_rows;
    let chunks = params
        .scales
        .chunks_mut(chunk * gpr * q)
        .zip(params.zeros.chunks_mut(chunk * gpr))
        .zip(codes.chunks_mut(chunk * cols));
    for (ci, ((s_chunk, z_chunk), c_chunk)) in chunks.enumerate() {
        s_chunk
            .par_chunks_mut(gpr * q)
            .zip(z_chunk.par_chunks_mut(gpr))
            .zip(c_chunk.par_chunks_mut(cols))
            .enumerate()
            .for_each(|(r, ((s_row, z_row), c_row))| {
                let i = ci * chunk + r;
                let row = w.row(i);
                for grp in 0..gpr {
                    let fitted = fit(i, grp, &row[grp * g..(grp + 1) * g]);
                    s_row[grp * q..(grp + 1) * q].copy_from_slice(&fitted.scales);
                    z_row[grp] = fitted.zero;
                    c_row[grp * g..(grp + 1) * g].copy_from_slice(&fitted.codes);
                }
            });
    }
    let bits = BitAssignment {
        rows,
        cols,
        bits: cfg.bits,
        codes,
    };
    (params, bits)
}

pub fn hlq_init(w: &WeightMatrix, cfg: &QuantConfig) -> Result<HlqParams> {
    cfg.validate(w.cols())?;
    let (params, _) = fit_groups(w, cfg, |_, _, grp| {
        let (scales, zero) = init_group(grp, cfg.bits);
        GroupFit {
            scales,
            zero,
            codes: vec![0; grp.len()],
        }
    });
    Ok(params)
}

pub fn hlq_assign(w: &WeightMatrix, params: &HlqParams, cb: &Codebook) -> Result<BitAssignment> {
    check_shapes(w, params)?;
    check_codebook(params.bits, cb)?;
    let (rows, cols) = w.shape();
    let g = params.group_size;
    let mut codes = vec![0u8; rows * cols];
    codes.par_chunks_mut(cols).enumerate().for_each(|(i, c_row)| {
        let row = w.row(i);
        for grp in 0..params.groups_per_row() {
            let span = grp * g..(grp + 1) * g;
            assign_group(
                &row[span.clone()],
                params.group_scales(i, grp),
                params.zero(i, grp),
                &mut c_row[span],
            );
        }
    });
    Ok(BitAssignment {
        rows,
        cols,
        bits: params.bits,
        codes,
    })
}

pub fn hlq_lse(w: &WeightMatrix, bits: &BitAssignment, cfg: &QuantConfig) -> Result<HlqParams> {
    cfg.validate(w.cols())?;
    if (bits.rows, bits.cols) != w.shape() || bits.bits != cfg.bits {
        return Err(HlqError::data("bit assignment does not match weights/config"));
    }
    let g = cfg.group_size;
    let (params, _) = fit_groups(w, cfg, |i, j, grp| {
        let codes = &bits.row(i)[j * g..(j + 1) * g];
        let (scales, zero) = lse_group(grp, codes, cfg.bits);
        GroupFit {
            scales,
            zero,
            codes: codes.to_vec(),
        }
    });
    Ok(params)
}

pub fn hlq_alternating(w: &WeightMatrix, cfg: &QuantConfig) -> Result<(HlqParams, BitAssignment)> {
    cfg.validate(w.cols())?;
    Ok(fit_groups(w, cfg, |_, _, grp| {
        alternating_group(grp, cfg.bits, cfg.t_max, None)
    }))
}

pub fn hlq_gradient(w: &WeightMatrix, cfg: &QuantConfig) -> Result<(HlqParams, BitAssignment)> {
    cfg.validate(w.cols())?;
    Ok(fit_groups(w, cfg, |_, _, grp| gradient_group(grp, cfg)))
}

pub fn hlq_dequantize(bits: &BitAssignment, params: &HlqParams, cb: &Codebook) -> Result<WeightMatrix> {
    params.check()?;
    check_codebook(params.bits, cb)?;
    if (bits.rows, bits.cols) != (params.rows, params.cols) || bits.codes.len() != bits.rows * bits.cols {
        return Err(HlqError::data(format!(
            "assignment is {}x{}, parameters describe {}x{}",
            bits.rows, bits.cols, params.rows, params.cols
        )));
    }
    let g = params.group_size;
    let mut out = vec![0f32; bits.rows * bits.cols];
    out.par_chunks_mut(bits.cols).enumerate().for_each(|(i, o_row)| {
        let c_row = bits.row(i);
        for (c, (o, &code)) in o_row.iter_mut().zip(c_row).enumerate() {
            let grp = c / g;
            *o = codeword_value(params.group_scales(i, grp), params.zero(i, grp), code) as f32;
        }
    });
    Ok(WeightMatrix::from_parts(bits.rows, bits.cols, out))
}
