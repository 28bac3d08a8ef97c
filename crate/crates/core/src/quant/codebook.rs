use crate::error::{HlqError, Result};

use super::MAX_BITS;

/// All `2^q` binary codewords of width `q`.
///
/// Codeword `m` has bit `j` equal to `(m >> j) & 1`, and bit `j` pairs with
/// scale `s_j`. Extracting bit plane `j` from an assignment is then a shift
/// and a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    bits: u32,
    entries: Vec<u8>,
}

pub fn build_codebook(bits: u32) -> Result<Codebook> {
    if bits == 0 || bits > MAX_BITS {
        return Err(HlqError::config(format!(
            "codebook bit width must be in 1..={MAX_BITS}, got {bits}"
        )));
    }
    let size = 1usize << bits;
    let mut entries = Vec::with_capacity(size * bits as usize);
    for m in 0..size {
        for j in 0..bits {
            entries.push(((m >> j) & 1) as u8);
        }
    }
    Ok(Codebook { bits, entries })
}

impl Codebook {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        1 << self.bits
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, m: usize) -> &[u8] {
        let q = self.bits as usize;
        &self.entries[m * q..(m + 1) * q]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.chunks_exact(self.bits as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bit() {
        let cb = build_codebook(1).unwrap();
        assert_eq!(cb.rows().collect::<Vec<_>>(), vec![&[0u8][..], &[1u8][..]]);
    }

    #[test]
    fn two_bit_index_order() {
        let cb = build_codebook(2).unwrap();
        let rows: Vec<&[u8]> = cb.rows().collect();
        assert_eq!(rows, vec![&[0, 0][..], &[1, 0], &[0, 1], &[1, 1]]);
    }

    #[test]
    fn three_bit_row_five() {
        let cb = build_codebook(3).unwrap();
        assert_eq!(cb.len(), 8);
        assert_eq!(cb.row(5), &[1, 0, 1]);
    }

    #[test]
    fn rows_are_distinct() {
        for q in 1..=8 {
            let cb = build_codebook(q).unwrap();
            let mut seen: Vec<&[u8]> = cb.rows().collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 1 << q);
        }
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(build_codebook(0), Err(HlqError::Config(_))));
        assert!(matches!(build_codebook(9), Err(HlqError::Config(_))));
    }
}
