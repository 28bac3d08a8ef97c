//! Bit-serial LUT GEMM.
//!
//! A `q`-bit assignment is split into `q` one-bit planes. For each run of
//! [`ACT_GROUP`] activations, a table of every signed sum `+-x1 +-x2 +-x3
//! +-x4` is built once; a weight row then contributes one table lookup per
//! plane and activation group, scaled by that plane's `s_j`. With the
//! mirrored parameters the weights are `+-1` and only half of each table is
//! stored, the other half being its negation.

mod gemm;
mod mirror;
mod pack;
mod planes;
mod table;

pub use gemm::{
    int8_error_bound, lut_gemm, lut_gemm_with, lut_gemv, lut_gemv_with, reference_gemm, GemmOptions, GemmStats,
    TableLayout, TableMode,
};
pub use mirror::{mirror_transform, mirrored_value, MirroredParams};
pub use pack::{rearrange_tiles, unpack_tiles, PackedWeights};
pub use planes::{decompose_bitplanes, BitPlanes};
pub use table::{build_full_lut, build_lut, quantize_lut, FullLookupTable, LookupTable, QuantizedLut};

/// Activations per lookup table.
pub const ACT_GROUP: usize = 4;
/// Output channels per packed tile.
pub const TILE_ROWS: usize = 16;
/// Input positions per packed tile.
pub const TILE_COLS: usize = 32;
/// Stored entries of a mirrored table, `2^(ACT_GROUP - 1)`.
pub const HALF_TABLE: usize = 1 << (ACT_GROUP - 1);
