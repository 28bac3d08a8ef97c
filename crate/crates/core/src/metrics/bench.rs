use std::time::Instant;

use rand::Rng;

use crate::error::{HlqError, Result};
use crate::lut::{
    decompose_bitplanes, lut_gemm_with, mirror_transform, rearrange_tiles, GemmOptions, MirroredParams, PackedWeights,
    TableMode,
};
use crate::quant::{BitAssignment, Format, HlqParams, UniformQuant};
use crate::synth;

pub const CSV_HEADER: &str = "shape,q,format,table_mode,threads,reps,mean_s,std_s,lookups";

/// Fewest timed repetitions a report may carry.
pub const MIN_REPS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// `(n, k)`: output by input channels.
    pub shapes: Vec<(usize, usize)>,
    pub bits: Vec<u32>,
    pub formats: Vec<Format>,
    pub group_size: usize,
    pub table_mode: TableMode,
    pub threads: usize,
    pub reps: usize,
    /// Activation rows per product.
    pub batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            shapes: vec![(11008, 4096), (4096, 32000)],
            bits: vec![2, 3],
            formats: vec![Format::Hlq],
            group_size: 128,
            table_mode: TableMode::Float,
            threads: 1,
            reps: MIN_REPS,
            batch: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub shape: (usize, usize),
    pub bits: u32,
    pub format: Format,
    pub table_mode: TableMode,
    pub threads: usize,
    pub reps: usize,
    pub mean_s: f64,
    pub std_s: f64,
    /// Lookups per product.
    pub lookups: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}x{},{},{},{},{},{},{:.9},{:.9},{}\n",
                r.shape.0, r.shape.1, r.bits, r.format, r.table_mode, r.threads, r.reps, r.mean_s, r.std_s, r.lookups
            ));
        }
        out
    }
}

/// Random packed layer in the requested format. Uniform layers go through
/// their HLQ view, so both formats run the same kernel.
pub fn synthetic_layer(
    n: usize,
    k: usize,
    bits: u32,
    group_size: usize,
    format: Format,
    seed: u64,
) -> Result<(PackedWeights, MirroredParams)> {
    if group_size == 0 || !k.is_multiple_of(group_size) {
        return Err(HlqError::config(format!("group size {group_size} does not divide {k}")));
    }
    let mut rng = synth::rng(seed);
    let codes = synth::random_codes(&mut rng, n * k, bits);
    let groups = n * (k / group_size);
    let (params, assignment) = match format {
        Format::Uniform => {
            let qmax = (1i32 << bits) - 1;
            let uq = UniformQuant {
                rows: n,
                cols: k,
                bits,
                group_size,
                w_int: codes,
                scale: (0..groups).map(|_| rng.random_range(0.001f32..0.01)).collect(),
                zero: (0..groups).map(|_| rng.random_range(0..=qmax)).collect(),
            };
            uq.to_hlq()?
        }
        Format::Hlq => {
            let mut params = HlqParams::zeroed(n, k, bits, group_size);
            for s in params.scales.iter_mut() {
                *s = rng.random_range(0.001f32..0.01);
            }
            for z in params.zeros.iter_mut() {
                *z = rng.random_range(-0.05f32..0.0);
            }
            (params, BitAssignment::new(n, k, bits, codes)?)
        }
    };
    let packed = rearrange_tiles(&decompose_bitplanes(&assignment)?, group_size)?;
    Ok((packed, mirror_transform(&params)?))
}

/// Times `reps` LUT products per (shape, bits, format) on a dedicated pool.
pub fn bench_gemm(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps < MIN_REPS {
        return Err(HlqError::config(format!(
            "at least {MIN_REPS} repetitions required, got {}",
            cfg.reps
        )));
    }
    if cfg.threads == 0 || cfg.batch == 0 {
        return Err(HlqError::config("threads and batch must be positive"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HlqError::config(format!("thread pool: {e}")))?;
    let opts = GemmOptions::new(cfg.table_mode);
    let mut report = BenchReport::default();
    for &(n, k) in &cfg.shapes {
        let x = synth::gaussian_matrix(cfg.batch, k, 1.0, cfg.seed ^ 0x5eed);
        for &bits in &cfg.bits {
            for &format in &cfg.formats {
                let (packed, mirrored) = synthetic_layer(n, k, bits, cfg.group_size, format, cfg.seed)?;
                let (times, lookups) = pool.install(|| -> Result<(Vec<f64>, u64)> {
                    let (_, stats) = lut_gemm_with(&packed, &mirrored, &x, &opts)?;
                    let mut times = Vec::with_capacity(cfg.reps);
                    for _ in 0..cfg.reps {
                        let t = Instant::now();
                        let out = lut_gemm_with(&packed, &mirrored, &x, &opts)?;
                        times.push(t.elapsed().as_secs_f64());
                        std::hint::black_box(out);
                    }
                    Ok((times, stats.lookups))
                })?;
                let mean = times.iter().sum::<f64>() / times.len() as f64;
                let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (times.len() - 1) as f64;
                log::info!("{n}x{k} q={bits} {format}: {:.3} ms", mean * 1e3);
                report.rows.push(BenchRow {
                    shape: (n, k),
                    bits,
                    format,
                    table_mode: cfg.table_mode,
                    threads: cfg.threads,
                    reps: cfg.reps,
                    mean_s: mean,
                    std_s: var.sqrt(),
                    lookups,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            shapes: vec![(64, 256)],
            bits: vec![2, 3],
            formats: vec![Format::Uniform, Format::Hlq],
            group_size: 64,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn lookup_counts_scale_and_match_across_formats() {
        let report = bench_gemm(&small()).unwrap();
        assert_eq!(report.rows.len(), 4);
        let count = |q, f| {
            report
                .rows
                .iter()
                .find(|r| r.bits == q && r.format == f)
                .unwrap()
                .lookups
        };
        assert_eq!(count(2, Format::Hlq), count(2, Format::Uniform));
        assert_eq!(count(3, Format::Hlq), count(3, Format::Uniform));
        assert_eq!(count(3, Format::Hlq) * 2, count(2, Format::Hlq) * 3);
        assert_eq!(count(2, Format::Hlq), 64 * (256 / 4) * 2);
    }

    #[test]
    fn report_has_stats_and_csv() {
        let report = bench_gemm(&small()).unwrap();
        for r in &report.rows {
            assert_eq!(r.reps, 10);
            assert!(r.mean_s > 0.0 && r.std_s >= 0.0);
        }
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("64x256,2,uniform,float,1,10,"));
    }

    #[test]
    fn too_few_reps_rejected() {
        let cfg = BenchConfig { reps: 9, ..small() };
        assert!(bench_gemm(&cfg).is_err());
    }
}
