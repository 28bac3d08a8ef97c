use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use hlq_core::finetune::{reconstruct_stage2_report, LayerSample, TuneConfig};
use hlq_core::gptq::{accumulate_hessian, hlq_gptq_layer, BlockSchedule, CalibrationSet};
use hlq_core::io::{load_hlqp, read_raw_matrix, save_hlqp, write_raw_matrix, HlqpContainer, Layout};
use hlq_core::lut::{int8_error_bound, lut_gemm, reference_gemm, TableMode};
use hlq_core::metrics::{
    bench_gemm, bpw, cosine_similarity, model_footprint, mse, BenchConfig, ModelShapeConfig, ModelShapes,
};
use hlq_core::quant::{hlq_alternating, hlq_gradient, rtn_quantize, Format, QuantConfig};
use hlq_core::synth;

use crate::{BenchArgs, Cli, Command, FinetuneArgs, FormatArg, LayoutArg, Method, QuantizeArgs, TableArg};

/// Relative-infinity tolerance of the float-table GEMM check.
const GEMM_TOL: f64 = 1e-4;

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Uniform => Format::Uniform,
            FormatArg::Hlq => Format::Hlq,
        }
    }
}

impl From<TableArg> for TableMode {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Float => TableMode::Float,
            TableArg::Int8 => TableMode::Int8,
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let threads = match cli.threads {
        Some(0) => bail!("thread count must be positive"),
        Some(t) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .context("configuring the worker pool")?;
            t
        }
        None => rayon::current_num_threads(),
    };
    match cli.command {
        Command::Quantize(args) => quantize(&args),
        Command::Dequantize { model, out } => {
            let c = load_hlqp(&model)?;
            write_raw_matrix(&out, &c.dequantize()?)?;
            println!("wrote {} ({}x{})", out.display(), c.header.n, c.header.k);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { model, reference } => verify(&model, &reference),
        Command::GemmCheck { model, batch, table } => gemm_check(&model, batch, table.into(), cli.seed),
        Command::Finetune(args) => finetune(&args),
        Command::Bpw { wbits, group, format } => {
            if group == 0 {
                bail!("group size must be positive");
            }
            println!("{}", bpw(wbits, group, format.into()));
            Ok(ExitCode::SUCCESS)
        }
        Command::Footprint {
            shapes,
            wbits,
            group,
            format,
        } => footprint(shapes.as_deref(), wbits, group, format.into()),
        Command::Bench(args) => bench(&args, threads, cli.seed),
    }
}

fn quantize(args: &QuantizeArgs) -> Result<ExitCode> {
    let w = read_raw_matrix(&args.input)?;
    let cfg = QuantConfig::new(args.wbits, args.group).with_t_max(args.tmax);
    let (format, (params, bits)) = match args.method {
        Method::Rtn => (Format::Uniform, rtn_quantize(&w, &cfg)?.to_hlq()?),
        Method::HlqAlt => (Format::Hlq, hlq_alternating(&w, &cfg)?),
        Method::HlqGrad => (Format::Hlq, hlq_gradient(&w, &cfg)?),
        Method::HlqGptq => {
            let Some(calib) = &args.calib else {
                bail!("--method hlq-gptq needs --calib");
            };
            let x = read_raw_matrix(calib)?;
            let h = accumulate_hessian(&CalibrationSet::new(x), args.damp)?;
            (
                Format::Hlq,
                hlq_gptq_layer(&w, &h, &cfg, &BlockSchedule::new(args.block))?,
            )
        }
    };
    let layout = match args.layout {
        LayoutArg::Tiles => Layout::Tiles,
        LayoutArg::Planes => Layout::Planes,
    };
    let container = HlqpContainer::new(format, &params, &bits, layout, args.mirrored)?;
    let out = args.out.clone().unwrap_or_else(|| args.input.with_extension("hlqp"));
    save_hlqp(&out, &container)?;
    let err = mse(&w, &container.dequantize()?)?;
    println!(
        "wrote {} ({}x{}, {format} q={} g={}, bpw {}, mse {err:.6e})",
        out.display(),
        w.rows(),
        w.cols(),
        args.wbits,
        args.group,
        bpw(args.wbits, args.group, format)
    );
    Ok(ExitCode::SUCCESS)
}

fn verify(model: &Path, reference: &Path) -> Result<ExitCode> {
    let c = load_hlqp(model)?;
    let w = read_raw_matrix(reference)?;
    if w.shape() != (c.header.n, c.header.k) {
        bail!(
            "reference is {}x{}, model is {}x{}",
            w.rows(),
            w.cols(),
            c.header.n,
            c.header.k
        );
    }
    let w_hat = c.dequantize()?;
    println!("mse {:.6e}", mse(&w, &w_hat)?);
    println!("cosine {:.6}", cosine_similarity(w.data(), w_hat.data())?);
    Ok(ExitCode::SUCCESS)
}

fn gemm_check(model: &Path, batch: usize, mode: TableMode, seed: u64) -> Result<ExitCode> {
    if batch == 0 {
        bail!("batch must be positive");
    }
    let c = load_hlqp(model)?;
    let packed = c.packed()?;
    let mirrored = c.mirrored_params()?;
    let x = synth::gaussian_matrix(batch, c.header.k, 1.0, seed);
    let y = lut_gemm(&packed, &mirrored, &x, mode)?;
    let oracle = reference_gemm(&c.dequantize()?, &x)?;
    let norm = oracle.data().iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
    let mut max_abs = 0f64;
    let mut over = 0usize;
    for r in 0..batch {
        let bound = match mode {
            TableMode::Float => vec![0.0; c.header.n],
            TableMode::Int8 => int8_error_bound(&mirrored, x.row(r))?,
        };
        for (i, b) in bound.iter().enumerate() {
            let err = (y.get(r, i) as f64 - oracle.get(r, i) as f64).abs();
            max_abs = max_abs.max(err);
            if err > b + GEMM_TOL * norm {
                over += 1;
            }
        }
    }
    let rel = if norm > 0.0 { max_abs / norm } else { max_abs };
    println!("table {mode}, batch {batch}: max_abs {max_abs:.6e}, rel_inf {rel:.6e}");
    if over > 0 {
        println!("FAIL: {over} outputs above tolerance");
        return Ok(ExitCode::FAILURE);
    }
    println!("PASS");
    Ok(ExitCode::SUCCESS)
}

fn finetune(args: &FinetuneArgs) -> Result<ExitCode> {
    let c = load_hlqp(&args.model)?;
    let x = read_raw_matrix(&args.calib)?;
    let w = read_raw_matrix(&args.reference)?;
    if w.shape() != (c.header.n, c.header.k) {
        bail!(
            "reference is {}x{}, model is {}x{}",
            w.rows(),
            w.cols(),
            c.header.n,
            c.header.k
        );
    }
    let sample = LayerSample::new(x, w)?;
    let tune = TuneConfig {
        lr: args.lr,
        epochs: args.epochs,
        batch: args.batch,
    };
    let bits = c.assignment()?;
    let (params, report) = reconstruct_stage2_report(&sample, &bits, &c.params(), &tune)?;
    let h = &c.header;
    let tuned = HlqpContainer::new(h.format, &params, &bits, h.layout, h.mirrored)?;
    let out: PathBuf = args.out.clone().unwrap_or_else(|| args.model.clone());
    save_hlqp(&out, &tuned)?;
    println!("initial loss {:.6e}", report.initial_loss);
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {l:.6e}", e + 1);
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn footprint(shapes: Option<&Path>, bits: u32, group: usize, format: Format) -> Result<ExitCode> {
    let shapes = match shapes {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ModelShapes::from_json(&text)?
        }
        None => ModelShapes::llama31_8b(),
    };
    let name = shapes.name.clone();
    let fp = model_footprint(&ModelShapeConfig {
        shapes,
        format,
        bits,
        group_size: group,
    })?;
    println!(
        "{name} {format} w{bits}g{group}: {:.0} bytes ({:.3} GB), fp16 {:.3} GB, compression {:.2}x",
        fp.bytes,
        fp.gib(),
        fp.fp16_bytes / (1u64 << 30) as f64,
        fp.compression_rate
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_shape(s: &str) -> Result<(usize, usize)> {
    let (n, k) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("shape {s:?} is not NxK"))?;
    let n = n.trim().parse().with_context(|| format!("shape {s:?}"))?;
    let k = k.trim().parse().with_context(|| format!("shape {s:?}"))?;
    Ok((n, k))
}

fn bench(args: &BenchArgs, threads: usize, seed: u64) -> Result<ExitCode> {
    let shapes = args.shapes.iter().map(|s| parse_shape(s)).collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        shapes,
        bits: args.wbits.clone(),
        formats: args.formats.iter().map(|&f| f.into()).collect(),
        group_size: args.group,
        table_mode: args.table.into(),
        threads,
        reps: args.reps,
        batch: args.batch,
        seed,
    };
    let report = bench_gemm(&cfg)?;
    for r in &report.rows {
        println!(
            "{}x{} q={} {} {}: {:.3} ms (+- {:.3}), {} lookups",
            r.shape.0,
            r.shape.1,
            r.bits,
            r.format,
            r.table_mode,
            r.mean_s * 1e3,
            r.std_s * 1e3,
            r.lookups
        );
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}
