use rayon::prelude::*;

use crate::error::{HlqError, Result};
use crate::matrix::WeightMatrix;

use super::mirror::MirroredParams;
use super::pack::PackedWeights;
use super::table::{build_full_lut, build_lut, quantize_entries, quantize_lut};
use super::{ACT_GROUP, TILE_ROWS};

/// Precision of the lookup tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableMode {
    #[default]
    Float,
    Int8,
}

impl TableMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TableMode::Float => "float",
            TableMode::Int8 => "int8",
        }
    }
}

impl std::fmt::Display for TableMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TableMode {
    type Err = HlqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" => Ok(TableMode::Float),
            "int8" => Ok(TableMode::Int8),
            other => Err(HlqError::config(format!(
                "unknown table mode {other:?} (expected float or int8)"
            ))),
        }
    }
}

/// Which table is materialized per activation group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableLayout {
    /// 8 stored entries, complements by negation.
    #[default]
    Mirrored,
    /// All 16 entries; debug path for checking the mirrored one.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GemmOptions {
    pub table_mode: TableMode,
    pub layout: TableLayout,
}

impl GemmOptions {
    pub fn new(table_mode: TableMode) -> Self {
        Self {
            table_mode,
            ..Self::default()
        }
    }
}

/// Counters collected by the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GemmStats {
    /// Table lookups actually performed.
    pub lookups: u64,
}

/// Per-activation-row tables, always stored as 16 entries so the kernel has
/// one shape; in the mirrored layout the lower half is filled by negation.
struct RowTables {
    tables: Vec<[f32; 16]>,
}

fn build_row_tables(x: &[f32], opts: &GemmOptions) -> RowTables {
    let tables = x
        .chunks_exact(ACT_GROUP)
        .map(|chunk| {
            let xg: [f32; ACT_GROUP] = chunk.try_into().expect("chunk of ACT_GROUP");
            match opts.layout {
                TableLayout::Mirrored => {
                    let mut half = build_lut(&xg);
                    if opts.table_mode == TableMode::Int8 {
                        let q = quantize_lut(&half);
                        for (e, &v) in half.entries.iter_mut().zip(&q.entries) {
                            *e = v as f32 * q.scale;
                        }
                    }
                    std::array::from_fn(|p| half.lookup(p as u8))
                }
                TableLayout::Full => {
                    let full = build_full_lut(&xg);
                    match opts.table_mode {
                        TableMode::Float => full.entries,
                        TableMode::Int8 => {
                            let (q, scale) = quantize_entries(&full.entries);
                            std::array::from_fn(|p| q[p] as f32 * scale)
                        }
                    }
                }
            }
        })
        .collect();
    RowTables { tables }
}

fn check_operands(pw: &PackedWeights, mp: &MirroredParams) -> Result<()> {
    pw.check()?;
    if (pw.rows, pw.cols, pw.bits, pw.group_size) != (mp.rows, mp.cols, mp.bits, mp.group_size) {
        return Err(HlqError::data(format!(
            "packed weights ({}x{}, q={}, g={}) do not match parameters ({}x{}, q={}, g={})",
            pw.rows, pw.cols, pw.bits, pw.group_size, mp.rows, mp.cols, mp.bits, mp.group_size
        )));
    }
    let groups = mp.rows * mp.groups_per_row();
    if mp.scales.len() != groups * mp.bits as usize || mp.zeros.len() != groups {
        return Err(HlqError::data("mirrored parameter buffers do not match their shape"));
    }
    if !mp.group_size.is_multiple_of(ACT_GROUP) {
        return Err(HlqError::config(format!(
            "LUT kernel needs a group size divisible by {ACT_GROUP}, got {}",
            mp.group_size
        )));
    }
    Ok(())
}

/// One output row tile for one activation row. Returns the lookup count.
fn tile_kernel(
    pw: &PackedWeights,
    mp: &MirroredParams,
    tables: &RowTables,
    xsums: &[f32],
    tile: usize,
    y: &mut [f32],
) -> u64 {
    let q = mp.bits as usize;
    let acts_per_group = mp.group_size / ACT_GROUP;
    let row0 = tile * TILE_ROWS;
    let live = y.len();
    let mut acc = [[0f32; 8]; TILE_ROWS];
    let mut lookups = 0u64;
    for (grp, &xsum) in xsums.iter().enumerate() {
        for row in acc.iter_mut().take(live) {
            row[..q].fill(0.0);
        }
        for a in grp * acts_per_group..(grp + 1) * acts_per_group {
            let table = &tables.tables[a];
            for j in 0..q {
                let word = pw.word(row0, a, j);
                for (r, row) in acc.iter_mut().enumerate().take(live) {
                    row[j] += table[((word >> (4 * r)) & 0xF) as usize];
                }
            }
        }
        lookups += (live * acts_per_group * q) as u64;
        for (r, out) in y.iter_mut().enumerate() {
            let scales = mp.group_scales(row0 + r, grp);
            let mut part = mp.zero(row0 + r, grp) * xsum;
            for j in 0..q {
                part += scales[j] * acc[r][j];
            }
            *out += part;
        }
    }
    lookups
}

fn gemv_inner(pw: &PackedWeights, mp: &MirroredParams, x: &[f32], opts: &GemmOptions) -> (Vec<f32>, u64) {
    let tables = build_row_tables(x, opts);
    let xsums: Vec<f32> = x
        .chunks_exact(mp.group_size)
        .map(|c| c.iter().fold(0f32, |s, &v| s + v))
        .collect();
    let mut y = vec![0f32; mp.rows];
    let lookups = y
        .par_chunks_mut(TILE_ROWS)
        .enumerate()
        .map(|(tile, y_tile)| tile_kernel(pw, mp, &tables, &xsums, tile, y_tile))
        .sum();
    (y, lookups)
}

fn check_input(x: &[f32], k: usize) -> Result<()> {
    if x.len() != k {
        return Err(HlqError::data(format!("activation length {} != {k}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(HlqError::data("non-finite activation"));
    }
    Ok(())
}

pub fn lut_gemv_with(
    pw: &PackedWeights,
    mp: &MirroredParams,
    x: &[f32],
    opts: &GemmOptions,
) -> Result<(Vec<f32>, GemmStats)> {
    check_operands(pw, mp)?;
    check_input(x, mp.cols)?;
    let (y, lookups) = gemv_inner(pw, mp, x, opts);
    Ok((y, GemmStats { lookups }))
}

/// `y = W_hat x` through lookup tables, `W_hat` given as packed planes and
/// mirrored parameters.
pub fn lut_gemv(pw: &PackedWeights, mp: &MirroredParams, x: &[f32], mode: TableMode) -> Result<Vec<f32>> {
    lut_gemv_with(pw, mp, x, &GemmOptions::new(mode)).map(|(y, _)| y)
}

pub fn lut_gemm_with(
    pw: &PackedWeights,
    mp: &MirroredParams,
    x: &WeightMatrix,
    opts: &GemmOptions,
) -> Result<(WeightMatrix, GemmStats)> {
    check_operands(pw, mp)?;
    if x.cols() != mp.cols {
        return Err(HlqError::data(format!(
            "activations have {} columns, weights have {}",
            x.cols(),
            mp.cols
        )));
    }
    let results: Vec<(Vec<f32>, u64)> = (0..x.rows())
        .into_par_iter()
        .map(|r| gemv_inner(pw, mp, x.row(r), opts))
        .collect();
    let mut data = Vec::with_capacity(x.rows() * mp.rows);
    let mut lookups = 0;
    for (y, n) in results {
        data.extend_from_slice(&y);
        lookups += n;
    }
    Ok((WeightMatrix::from_parts(x.rows(), mp.rows, data), GemmStats { lookups }))
}

/// `Y = X W_hat^T` (`m x n`) through lookup tables.
pub fn lut_gemm(pw: &PackedWeights, mp: &MirroredParams, x: &WeightMatrix, mode: TableMode) -> Result<WeightMatrix> {
    lut_gemm_with(pw, mp, x, &GemmOptions::new(mode)).map(|(y, _)| y)
}

/// Dense `X W^T` with f32 accumulation in column order.
pub fn reference_gemm(w: &WeightMatrix, x: &WeightMatrix) -> Result<WeightMatrix> {
    if w.cols() != x.cols() {
        return Err(HlqError::data(format!(
            "activations have {} columns, weights have {}",
            x.cols(),
            w.cols()
        )));
    }
    let n = w.rows();
    let mut out = vec![0f32; x.rows() * n];
    out.par_chunks_mut(n).enumerate().for_each(|(r, o_row)| {
        let xr = x.row(r);
        for (i, o) in o_row.iter_mut().enumerate() {
            *o = w.row(i).iter().zip(xr).fold(0f32, |s, (&a, &b)| s + a * b);
        }
    });
    Ok(WeightMatrix::from_parts(x.rows(), n, out))
}

/// Worst-case difference between int8 and float table results for each
/// output of `W_hat x`.
///
/// Each int8 lookup is off by at most half its table's scale, and enters the
/// output multiplied by `s'_j`, so one activation group contributes at most
/// `sum_j |s'_j| * scale / 2`; the bound is `k / ACT_GROUP` times the
/// largest such contribution in the row.
pub fn int8_error_bound(mp: &MirroredParams, x: &[f32]) -> Result<Vec<f64>> {
    check_input(x, mp.cols)?;
    let lut_scales: Vec<f64> = x
        .chunks_exact(ACT_GROUP)
        .map(|c| {
            let xg: [f32; ACT_GROUP] = c.try_into().expect("chunk of ACT_GROUP");
            quantize_lut(&build_lut(&xg)).scale as f64
        })
        .collect();
    let acts_per_group = mp.group_size / ACT_GROUP;
    let n_acts = (mp.cols / ACT_GROUP) as f64;
    Ok((0..mp.rows)
        .map(|i| {
            let worst = lut_scales
                .iter()
                .enumerate()
                .map(|(a, &ls)| {
                    let s: f64 = mp
                        .group_scales(i, a / acts_per_group)
                        .iter()
                        .map(|v| v.abs() as f64)
                        .sum();
                    s * ls
                })
                .fold(0f64, f64::max);
            n_acts * worst / 2.0
        })
        .collect())
}
