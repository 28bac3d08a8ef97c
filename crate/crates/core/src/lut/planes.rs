use crate::error::{HlqError, Result};
use crate::quant::BitAssignment;

/// `bits` one-bit matrices, each `rows x cols`, 64 columns per word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlanes {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    pub words_per_row: usize,
    /// `[plane][row][word]`; column `c` is bit `c % 64` of word `c / 64`.
    pub data: Vec<u64>,
}

impl BitPlanes {
    pub fn zeroed(rows: usize, cols: usize, bits: u32) -> Self {
        let words_per_row = cols.div_ceil(64);
        Self {
            rows,
            cols,
            bits,
            words_per_row,
            data: vec![0; bits as usize * rows * words_per_row],
        }
    }

    #[inline]
    fn index(&self, plane: usize, row: usize, col: usize) -> (usize, u32) {
        (
            (plane * self.rows + row) * self.words_per_row + col / 64,
            (col % 64) as u32,
        )
    }

    #[inline]
    pub fn get(&self, plane: usize, row: usize, col: usize) -> bool {
        let (w, b) = self.index(plane, row, col);
        (self.data[w] >> b) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, plane: usize, row: usize, col: usize) {
        let (w, b) = self.index(plane, row, col);
        self.data[w] |= 1 << b;
    }

    /// Inverse of [`decompose_bitplanes`]: `sum_j plane_j * 2^j`.
    pub fn recompose(&self) -> BitAssignment {
        let mut codes = vec![0u8; self.rows * self.cols];
        for j in 0..self.bits as usize {
            for i in 0..self.rows {
                for c in 0..self.cols {
                    if self.get(j, i, c) {
                        codes[i * self.cols + c] |= 1 << j;
                    }
                }
            }
        }
        BitAssignment {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits,
            codes,
        }
    }
}

/// Plane `j` holds bit `j` of every code.
pub fn decompose_bitplanes(bits: &BitAssignment) -> Result<BitPlanes> {
    if bits.codes.len() != bits.rows * bits.cols {
        return Err(HlqError::data("assignment buffer does not match its shape"));
    }
    if bits.codes.iter().any(|&c| (c as u32) >> bits.bits != 0) {
        return Err(HlqError::data(format!("code does not fit in {} bits", bits.bits)));
    }
    let mut planes = BitPlanes::zeroed(bits.rows, bits.cols, bits.bits);
    for i in 0..bits.rows {
        for (c, &code) in bits.row(i).iter().enumerate() {
            for j in 0..bits.bits as usize {
                if (code >> j) & 1 == 1 {
                    planes.set(j, i, c);
                }
            }
        }
    }
    Ok(planes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn plane_row(p: &BitPlanes, j: usize) -> Vec<u8> {
        (0..p.cols).map(|c| p.get(j, 0, c) as u8).collect()
    }

    #[test]
    fn nine_seven_six_three() {
        let b = BitAssignment::new(1, 4, 4, vec![9, 7, 6, 3]).unwrap();
        let p = decompose_bitplanes(&b).unwrap();
        assert_eq!(plane_row(&p, 0), vec![1, 1, 0, 1]);
        assert_eq!(plane_row(&p, 3), vec![1, 0, 0, 0]);
    }

    #[test]
    fn zeros_give_empty_planes() {
        let b = BitAssignment::new(3, 70, 3, vec![0; 210]).unwrap();
        let p = decompose_bitplanes(&b).unwrap();
        assert!(p.data.iter().all(|&w| w == 0));
        assert_eq!(p.words_per_row, 2);
    }

    proptest! {
        #[test]
        fn recompose_inverts(rows in 1usize..6, cols in 1usize..150, bits in 1u32..=4, seed in any::<u64>()) {
            let mut rng = crate::synth::rng(seed);
            let codes = crate::synth::random_codes(&mut rng, rows * cols, bits);
            let b = BitAssignment::new(rows, cols, bits, codes).unwrap();
            prop_assert_eq!(decompose_bitplanes(&b).unwrap().recompose(), b);
        }
    }
}
