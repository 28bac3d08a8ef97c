use crate::error::Result;
use crate::quant::HlqParams;

/// `+-1` reparameterization of HLQ parameters: `s'_j = s_j / 2`,
/// `z' = z + sum(s) / 2`, and bit `1 -> +1`, bit `0 -> -1`, so that
/// `sum_j s'_j b'_j + z' == sum_j s_j b_j + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MirroredParams {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    pub group_size: usize,
    /// `[rows, cols / group_size, bits]`.
    pub scales: Vec<f32>,
    /// `[rows, cols / group_size]`.
    pub zeros: Vec<f32>,
}

impl MirroredParams {
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
}

pub fn mirror_transform(params: &HlqParams) -> Result<MirroredParams> {
    params.check()?;
    let q = params.bits as usize;
    let scales = params.scales.iter().map(|&s| 0.5 * s).collect();
    let zeros = params
        .zeros
        .iter()
        .zip(params.scales.chunks_exact(q))
        .map(|(&z, s)| (z as f64 + 0.5 * s.iter().map(|&v| v as f64).sum::<f64>()) as f32)
        .collect();
    Ok(MirroredParams {
        rows: params.rows,
        cols: params.cols,
        bits: params.bits,
        group_size: params.group_size,
        scales,
        zeros,
    })
}

/// Weight value of `code` under mirrored parameters.
#[inline]
pub fn mirrored_value(scales: &[f32], zero: f32, code: u8) -> f64 {
    let mut v = zero as f64;
    for (j, &s) in scales.iter().enumerate() {
        if (code >> j) & 1 == 1 {
            v += s as f64;
        } else {
            v -= s as f64;
        }
    }
    v
}
