use rayon::prelude::*;

use crate::error::{HlqError, Result};
use crate::matrix::WeightMatrix;

use super::hlq::{BitAssignment, HlqParams};
use super::QuantConfig;

/// Group-wise asymmetric uniform quantization: `w_int = clamp(round(w/s) + z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformQuant {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    pub group_size: usize,
    /// `[rows, cols]` integer codes in `[0, 2^bits)`.
    pub w_int: Vec<u8>,
    /// `[rows, cols / group_size]` step sizes.
    pub scale: Vec<f32>,
    /// `[rows, cols / group_size]` integer zero-points.
    pub zero: Vec<i32>,
}

impl UniformQuant {
    pub fn groups_per_row(&self) -> usize {
        self.cols / self.group_size
    }

    /// The same grid written as HLQ: `s_j = s * 2^j`, `z_hlq = -z * s`, and
    /// the integer code itself as the bit pattern.
    pub fn to_hlq(&self) -> Result<(HlqParams, BitAssignment)> {
        self.check()?;
        let q = self.bits as usize;
        let mut params = HlqParams::zeroed(self.rows, self.cols, self.bits, self.group_size);
        for (grp, (&s, &z)) in self.scale.iter().zip(&self.zero).enumerate() {
            for j in 0..q {
                params.scales[grp * q + j] = s * (1u32 << j) as f32;
            }
            params.zeros[grp] = -(z as f32) * s;
        }
        let bits = BitAssignment::new(self.rows, self.cols, self.bits, self.w_int.clone())?;
        Ok((params, bits))
    }

    fn check(&self) -> Result<()> {
        let groups = self.rows * self.groups_per_row();
        if self.group_size == 0
            || !self.cols.is_multiple_of(self.group_size)
            || self.w_int.len() != self.rows * self.cols
            || self.scale.len() != groups
            || self.zero.len() != groups
        {
            return Err(HlqError::data("uniform quantization buffers do not match their shape"));
        }
        Ok(())
    }
}

pub fn rtn_quantize(w: &WeightMatrix, cfg: &QuantConfig) -> Result<UniformQuant> {
    cfg.validate(w.cols())?;
    if w.data().iter().any(|v| !v.is_finite()) {
        return Err(HlqError::data("non-finite weight"));
    }
    let (rows, cols) = w.shape();
    let g = cfg.group_size;
    let gpr = cols / g;
    let qmax = ((1u32 << cfg.bits) - 1) as f32;

    let mut w_int = vec![0u8; rows * cols];
    let mut scale = vec![0f32; rows * gpr];
    let mut zero = vec![0i32; rows * gpr];
    w_int
        .par_chunks_mut(cols)
        .zip(scale.par_chunks_mut(gpr))
        .zip(zero.par_chunks_mut(gpr))
        .enumerate()
        .for_each(|(i, ((codes, s_row), z_row))| {
            let row = w.row(i);
            for grp in 0..gpr {
                let vals = &row[grp * g..(grp + 1) * g];
                let (lo, hi) = vals.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
                let s = if hi > lo { (hi - lo) / qmax } else { 1.0 };
                let z = (-lo / s).round().clamp(0.0, qmax);
                for (c, &v) in codes[grp * g..(grp + 1) * g].iter_mut().zip(vals) {
                    *c = ((v / s).round() + z).clamp(0.0, qmax) as u8;
                }
                s_row[grp] = s;
                z_row[grp] = z as i32;
            }
        });
    Ok(UniformQuant {
        rows,
        cols,
        bits: cfg.bits,
        group_size: g,
        w_int,
        scale,
        zero,
    })
}

pub fn rtn_dequantize(uq: &UniformQuant) -> Result<WeightMatrix> {
    uq.check()?;
    let gpr = uq.groups_per_row();
    let mut out = Vec::with_capacity(uq.rows * uq.cols);
    for i in 0..uq.rows {
        for c in 0..uq.cols {
            let grp = i * gpr + c / uq.group_size;
            let v = uq.w_int[i * uq.cols + c] as i32 - uq.zero[grp];
            out.push(v as f32 * uq.scale[grp]);
        }
    }
    Ok(WeightMatrix::from_parts(uq.rows, uq.cols, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[f32]) -> WeightMatrix {
        WeightMatrix::new(1, vals.len(), vals.to_vec()).unwrap()
    }

    #[test]
    fn hlq_view_dequantizes_to_the_same_grid() {
        let w = crate::synth::gaussian_matrix(8, 128, 0.02, 3);
        for q in 1..=4 {
            let uq = rtn_quantize(&w, &QuantConfig::new(q, 32)).unwrap();
            let (params, bits) = uq.to_hlq().unwrap();
            let cb = super::super::build_codebook(q).unwrap();
            let a = rtn_dequantize(&uq).unwrap();
            let b = super::super::hlq_dequantize(&bits, &params, &cb).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-8, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn exact_grid() {
        let uq = rtn_quantize(&row(&[0.0, 1.0, 2.0, 3.0]), &QuantConfig::new(2, 4)).unwrap();
        assert_eq!(uq.scale, vec![1.0]);
        assert_eq!(uq.zero, vec![0]);
        assert_eq!(uq.w_int, vec![0, 1, 2, 3]);
        assert_eq!(rtn_dequantize(&uq).unwrap().data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn constant_group_uses_unit_scale() {
        for q in 1..=4 {
            let uq = rtn_quantize(&row(&[2.0; 4]), &QuantConfig::new(q, 4)).unwrap();
            assert_eq!(uq.scale, vec![1.0]);
            assert_eq!(uq.zero, vec![0]);
            if 2.0 <= ((1 << q) - 1) as f32 {
                assert_eq!(rtn_dequantize(&uq).unwrap().data(), &[2.0; 4]);
            }
        }
        // Negative constants clamp the zero-point to the top of the range.
        let uq = rtn_quantize(&row(&[-3.0; 4]), &QuantConfig::new(2, 4)).unwrap();
        assert_eq!(uq.zero, vec![3]);
        assert_eq!(rtn_dequantize(&uq).unwrap().data(), &[-3.0; 4]);
    }

    #[test]
    fn rounding_error_example() {
        let w = row(&[0.0, 0.9, 2.1, 3.0]);
        let uq = rtn_quantize(&w, &QuantConfig::new(2, 4)).unwrap();
        assert_eq!(uq.w_int, vec![0, 1, 2, 3]);
        let deq = rtn_dequantize(&uq).unwrap();
        let errs: Vec<f32> = w.data().iter().zip(deq.data()).map(|(a, b)| (a - b).abs()).collect();
        assert!((errs[1] - 0.1).abs() < 1e-6 && (errs[2] - 0.1).abs() < 1e-6);
        let mse: f64 = errs.iter().map(|e| (*e as f64).powi(2)).sum::<f64>() / 4.0;
        assert!((mse - 0.005).abs() < 1e-7);
    }

    #[test]
    fn dequantize_offset() {
        let uq = UniformQuant {
            rows: 1,
            cols: 1,
            bits: 2,
            group_size: 1,
            w_int: vec![3],
            scale: vec![0.5],
            zero: vec![1],
        };
        assert_eq!(rtn_dequantize(&uq).unwrap().data(), &[1.0]);
    }

    #[test]
    fn dequantize_rejects_bad_buffers() {
        let uq = UniformQuant {
            rows: 1,
            cols: 2,
            bits: 2,
            group_size: 2,
            w_int: vec![0],
            scale: vec![1.0],
            zero: vec![0],
        };
        assert!(matches!(rtn_dequantize(&uq), Err(HlqError::Data(_))));
    }

    #[test]
    fn error_within_one_step() {
        let vals: Vec<f32> = (0..64).map(|i| ((i * 37 % 64) as f32 - 30.0) * 0.013).collect();
        let w = WeightMatrix::new(2, 32, vals).unwrap();
        let uq = rtn_quantize(&w, &QuantConfig::new(3, 16)).unwrap();
        let deq = rtn_dequantize(&uq).unwrap();
        for (idx, (a, b)) in w.data().iter().zip(deq.data()).enumerate() {
            let s = uq.scale[(idx / 32) * 2 + (idx % 32) / 16];
            assert!((a - b).abs() <= s + 1e-6);
        }
    }
}
