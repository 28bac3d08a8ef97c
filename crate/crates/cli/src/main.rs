use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "hlq", version, about = "Hierarchical linear quantization and LUT GEMM tools")]
struct Cli {
    /// Worker threads for parallel kernels.
    #[arg(long, global = true, env = "HLQ_THREADS")]
    threads: Option<usize>,

    /// Seed for synthetic inputs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Rtn,
    HlqAlt,
    HlqGrad,
    HlqGptq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Uniform,
    Hlq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableArg {
    Float,
    Int8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    Tiles,
    Planes,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Raw f32 weight matrix (`n x k`, with a `.json` sidecar).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    wbits: u32,
    #[arg(long)]
    group: usize,
    #[arg(long, value_enum)]
    method: Method,
    /// Calibration activations (`m x k`), required by `hlq-gptq`.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    tmax: usize,
    /// Column block size for `hlq-gptq`.
    #[arg(long, default_value_t = 128)]
    block: usize,
    /// Hessian damping as a fraction of the mean diagonal.
    #[arg(long, default_value_t = 0.01)]
    damp: f64,
    #[arg(long, value_enum, default_value_t = LayoutArg::Tiles)]
    layout: LayoutArg,
    /// Store scales and zero-points in the `+-1` form.
    #[arg(long)]
    mirrored: bool,
    /// Output container; defaults to the input path with an `.hlqp` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Defaults to overwriting `--model`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated `NxK` shapes (output x input channels).
    #[arg(long, value_delimiter = ',', default_value = "11008x4096,4096x32000")]
    shapes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    wbits: Vec<u32>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "hlq")]
    formats: Vec<FormatArg>,
    #[arg(long, default_value_t = 128)]
    group: usize,
    #[arg(long, value_enum, default_value_t = TableArg::Float)]
    table: TableArg,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Activation rows per product.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize a raw weight matrix into an HLQP container.
    Quantize(QuantizeArgs),
    /// Expand a container back to raw f32 weights.
    Dequantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a container against reference weights.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Check the LUT GEMM against a dense product on random activations.
    GemmCheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, value_enum, default_value_t = TableArg::Float)]
        table: TableArg,
    },
    /// Refine scales and zero-points on calibration outputs.
    Finetune(FinetuneArgs),
    /// Bits per weight of a format.
    Bpw {
        #[arg(long)]
        wbits: u32,
        #[arg(long)]
        group: usize,
        #[arg(long, value_enum)]
        format: FormatArg,
    },
    /// Model size after quantization.
    Footprint {
        /// Shape file; the bundled LLaMA-3.1-8B shapes when omitted.
        #[arg(long)]
        shapes: Option<PathBuf>,
        #[arg(long)]
        wbits: u32,
        #[arg(long)]
        group: usize,
        #[arg(long, value_enum)]
        format: FormatArg,
    },
    /// Time the LUT GEMM.
    Bench(BenchArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
