use crate::error::{HlqError, Result};

use super::planes::BitPlanes;
use super::{ACT_GROUP, TILE_COLS, TILE_ROWS};

const GROUPS_PER_TILE: usize = TILE_COLS / ACT_GROUP;

/// Bit planes relaid into `TILE_ROWS x TILE_COLS` tiles.
///
/// Tiles are stored row-tile major, then column tile, then plane. Inside a
/// tile-plane, word `a` covers activation group `a` and packs the 4-bit
/// pattern of output row `r` into bits `4r..4r+4`, so one load fetches a
/// whole activation group for all 16 rows and decoding is shift and mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWeights {
    pub rows: usize,
    pub cols: usize,
    pub bits: u32,
    pub group_size: usize,
    /// Zero rows appended to reach a multiple of `TILE_ROWS`.
    pub pad_rows: usize,
    /// Zero columns appended to reach a multiple of `TILE_COLS`.
    pub pad_cols: usize,
    pub words: Vec<u64>,
}

impl PackedWeights {
    pub fn padded_rows(&self) -> usize {
        self.rows + self.pad_rows
    }

    pub fn padded_cols(&self) -> usize {
        self.cols + self.pad_cols
    }

    pub fn col_tiles(&self) -> usize {
        self.padded_cols() / TILE_COLS
    }

    pub fn row_tiles(&self) -> usize {
        self.padded_rows() / TILE_ROWS
    }

    pub fn expected_words(rows: usize, cols: usize, bits: u32) -> usize {
        let rt = rows.div_ceil(TILE_ROWS);
        let ct = cols.div_ceil(TILE_COLS);
        rt * ct * bits as usize * GROUPS_PER_TILE
    }

    /// Word holding activation group `act` (global index) of plane `plane`
    /// for the row tile containing `row`.
    #[inline]
    pub fn word(&self, row: usize, act: usize, plane: usize) -> u64 {
        let rt = row / TILE_ROWS;
        let ct = act / GROUPS_PER_TILE;
        let idx = ((rt * self.col_tiles() + ct) * self.bits as usize + plane) * GROUPS_PER_TILE + act % GROUPS_PER_TILE;
        self.words[idx]
    }

    /// 4-bit pattern of `row` over activation group `act` in `plane`.
    #[inline]
    pub fn pattern(&self, row: usize, act: usize, plane: usize) -> u8 {
        ((self.word(row, act, plane) >> (4 * (row % TILE_ROWS))) & 0xF) as u8
    }

    pub fn check(&self) -> Result<()> {
        if self.pad_rows != self.rows.next_multiple_of(TILE_ROWS) - self.rows
            || self.pad_cols != self.cols.next_multiple_of(TILE_COLS) - self.cols
        {
            return Err(HlqError::data("packed padding does not match the tile size"));
        }
        if self.words.len() != Self::expected_words(self.rows, self.cols, self.bits) {
            return Err(HlqError::data(format!(
                "packed weights hold {} words, expected {}",
                self.words.len(),
                Self::expected_words(self.rows, self.cols, self.bits)
            )));
        }
        if self.group_size == 0 || !self.cols.is_multiple_of(self.group_size) {
            return Err(HlqError::data("group size does not divide the columns"));
        }
        Ok(())
    }
}

pub fn rearrange_tiles(planes: &BitPlanes, group_size: usize) -> Result<PackedWeights> {
    if group_size == 0 || !planes.cols.is_multiple_of(group_size) {
        return Err(HlqError::config(format!(
            "group size {group_size} does not divide {} columns",
            planes.cols
        )));
    }
    let pad_rows = planes.rows.next_multiple_of(TILE_ROWS) - planes.rows;
    let pad_cols = planes.cols.next_multiple_of(TILE_COLS) - planes.cols;
    let mut packed = PackedWeights {
        rows: planes.rows,
        cols: planes.cols,
        bits: planes.bits,
        group_size,
        pad_rows,
        pad_cols,
        words: vec![0; PackedWeights::expected_words(planes.rows, planes.cols, planes.bits)],
    };
    let ct = packed.col_tiles();
    let q = planes.bits as usize;
    for plane in 0..q {
        for i in 0..planes.rows {
            let (rt, r) = (i / TILE_ROWS, i % TILE_ROWS);
            for c in 0..planes.cols {
                if !planes.get(plane, i, c) {
                    continue;
                }
                let act = c / ACT_GROUP;
                let idx = ((rt * ct + act / GROUPS_PER_TILE) * q + plane) * GROUPS_PER_TILE + act % GROUPS_PER_TILE;
                packed.words[idx] |= 1u64 << (4 * r + c % ACT_GROUP);
            }
        }
    }
    Ok(packed)
}

/// Inverse of [`rearrange_tiles`]; padding is dropped.
pub fn unpack_tiles(packed: &PackedWeights) -> Result<BitPlanes> {
    packed.check()?;
    let mut planes = BitPlanes::zeroed(packed.rows, packed.cols, packed.bits);
    for plane in 0..packed.bits as usize {
        for i in 0..packed.rows {
            for act in 0..packed.cols.div_ceil(ACT_GROUP) {
                let pat = packed.pattern(i, act, plane);
                for e in 0..ACT_GROUP {
                    let c = act * ACT_GROUP + e;
                    if c < packed.cols && (pat >> e) & 1 == 1 {
                        planes.set(plane, i, c);
                    }
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
    use crate::lut::decompose_bitplanes;
    use crate::quant::BitAssignment;
    use crate::synth;

    fn random_planes(rows: usize, cols: usize, bits: u32, seed: u64) -> BitPlanes {
        let mut rng = synth::rng(seed);
        let codes = synth::random_codes(&mut rng, rows * cols, bits);
        decompose_bitplanes(&BitAssignment::new(rows, cols, bits, codes).unwrap()).unwrap()
    }

    #[test]
    fn single_tile_is_contiguous() {
        let planes = random_planes(16, 32, 1, 1);
        let packed = rearrange_tiles(&planes, 32).unwrap();
        assert_eq!(packed.words.len(), 8);
        assert_eq!((packed.pad_rows, packed.pad_cols), (0, 0));
        // Word a, nibble r holds columns 4a..4a+4 of row r.
        for r in 0..16 {
            for a in 0..8 {
                let nib = (packed.words[a] >> (4 * r)) & 0xF;
                for e in 0..4 {
                    assert_eq!((nib >> e) & 1 == 1, planes.get(0, r, 4 * a + e));
                }
            }
        }
    }

    #[test]
    fn odd_row_count_is_padded() {
        let planes = random_planes(17, 32, 2, 2);
        let packed = rearrange_tiles(&planes, 32).unwrap();
        assert_eq!(packed.pad_rows, 15);
        assert_eq!(packed.padded_rows(), 32);
        assert_eq!(unpack_tiles(&packed).unwrap(), planes);
    }

    #[test]
    fn round_trip_64x256_q3() {
        let planes = random_planes(64, 256, 3, 3);
        assert_eq!(unpack_tiles(&rearrange_tiles(&planes, 64).unwrap()).unwrap(), planes);
    }

    #[test]
    fn rejects_bad_group() {
        let planes = random_planes(16, 32, 1, 4);
        assert!(rearrange_tiles(&planes, 0).is_err());
        assert!(rearrange_tiles(&planes, 24).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_bijective(rows in 1usize..40, groups in 1usize..20, bits in 1u32..=4, seed in any::<u64>()) {
            let cols = groups * 4;
            let planes = random_planes(rows, cols, bits, seed);
            let packed = rearrange_tiles(&planes, 4).unwrap();
            prop_assert_eq!(packed.padded_rows() % TILE_ROWS, 0);
            prop_assert_eq!(packed.padded_cols() % TILE_COLS, 0);
            prop_assert_eq!(unpack_tiles(&packed).unwrap(), planes);
        }
    }
}
