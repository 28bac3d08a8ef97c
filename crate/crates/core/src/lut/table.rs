use super::{ACT_GROUP, HALF_TABLE};

/// Mirrored half of the signed-sum table for one activation group.
///
/// Entry `p` (3 bits) is `s0 x0 + s1 x1 + s2 x2 + x3` with `s_e = +1` when
/// bit `e` of `p` is set and `-1` otherwise; the last element always has
/// coefficient `+1`. Patterns with `-x3` are negations of stored entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookupTable {
    pub entries: [f32; HALF_TABLE],
}

/// All `2^ACT_GROUP` signed sums, no mirroring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullLookupTable {
    pub entries: [f32; 1 << ACT_GROUP],
}

#[inline]
fn signed_sum(x: &[f32; ACT_GROUP], pattern: usize) -> f32 {
    let term = |e: usize| if (pattern >> e) & 1 == 1 { x[e] } else { -x[e] };
    ((term(0) + term(1)) + term(2)) + term(3)
}

pub fn build_lut(x: &[f32; ACT_GROUP]) -> LookupTable {
    let mut entries = [0f32; HALF_TABLE];
    for (p, e) in entries.iter_mut().enumerate() {
        *e = signed_sum(x, p | HALF_TABLE);
    }
    LookupTable { entries }
}

pub fn build_full_lut(x: &[f32; ACT_GROUP]) -> FullLookupTable {
    let mut entries = [0f32; 1 << ACT_GROUP];
    for (p, e) in entries.iter_mut().enumerate() {
        *e = signed_sum(x, p);
    }
    FullLookupTable { entries }
}

impl LookupTable {
    /// Signed sum for a full 4-bit pattern.
    #[inline]
    pub fn lookup(&self, pattern: u8) -> f32 {
        if pattern & HALF_TABLE as u8 != 0 {
            self.entries[(pattern & 7) as usize]
        } else {
            -self.entries[(!pattern & 7) as usize]
        }
    }
}

impl FullLookupTable {
    #[inline]
    pub fn lookup(&self, pattern: u8) -> f32 {
        self.entries[pattern as usize]
    }
}

/// Int8 copy of a table with one scale: `entry ~ q * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedLut {
    pub entries: [i8; HALF_TABLE],
    pub scale: f32,
}

pub fn quantize_lut(lut: &LookupTable) -> QuantizedLut {
    let (q, scale) = quantize_entries(&lut.entries);
    QuantizedLut { entries: q, scale }
}

/// `scale = max|e| / 127` (1 for an all-zero table), entries rounded.
pub(crate) fn quantize_entries<const N: usize>(entries: &[f32; N]) -> ([i8; N], f32) {
    let max = entries.iter().fold(0f32, |m, e| m.max(e.abs()));
    let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
    let mut q = [0i8; N];
    for (o, &e) in q.iter_mut().zip(entries) {
        *o = (e / scale).round().clamp(-127.0, 127.0) as i8;
    }
    (q, scale)
}

impl QuantizedLut {
    #[inline]
    pub fn lookup(&self, pattern: u8) -> f32 {
        let q = if pattern & HALF_TABLE as u8 != 0 {
            self.entries[(pattern & 7) as usize]
        } else {
            -self.entries[(!pattern & 7) as usize]
        };
        q as f32 * self.scale
    }
}
