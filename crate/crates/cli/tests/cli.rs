use std::path::Path;
use std::process::{Command, Output};

use hlq_core::io::{read_raw_matrix, write_raw_matrix};
use hlq_core::quant::{build_codebook, hlq_dequantize, BitAssignment, HlqParams};
use hlq_core::{synth, WeightMatrix};

fn hlq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlq"))
        .args(args)
        .env("HLQ_THREADS", "2")
        .output()
        .expect("run hlq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Weights lying exactly on a two-bit HLQ grid.
fn grid_weights() -> WeightMatrix {
    let mut params = HlqParams::zeroed(16, 64, 2, 32);
    for (i, s) in params.scales.iter_mut().enumerate() {
        *s = [0.25, 0.5][i % 2];
    }
    params.zeros.fill(-0.5);
    let mut rng = synth::rng(1);
    let bits = BitAssignment::new(16, 64, 2, synth::random_codes(&mut rng, 16 * 64, 2)).unwrap();
    hlq_dequantize(&bits, &params, &build_codebook(2).unwrap()).unwrap()
}

#[test]
fn bpw_prints_value() {
    let out = hlq(&["bpw", "--wbits", "2", "--group", "128", "--format", "hlq"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "2.375");
    let out = hlq(&["bpw", "--wbits", "3", "--group", "128", "--format", "uniform"]);
    assert_eq!(stdout(&out).trim(), "3.25");
}

#[test]
fn quantize_verify_dequantize_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("w.raw");
    let m_path = dir.path().join("m.hlqp");
    let back = dir.path().join("back.raw");
    let w = grid_weights();
    write_raw_matrix(&w_path, &w).unwrap();
    let out = hlq(&[
        "quantize",
        "--input",
        p(&w_path),
        "--wbits",
        "2",
        "--group",
        "32",
        "--method",
        "rtn",
        "--out",
        p(&m_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = hlq(&["verify", "--model", p(&m_path), "--reference", p(&w_path)]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("mse 0.000000e0"), "{text}");
    let out = hlq(&["dequantize", "--model", p(&m_path), "--out", p(&back)]);
    assert!(out.status.success());
    assert_eq!(read_raw_matrix(&back).unwrap(), w);
}

#[test]
fn every_method_passes_gemm_check() {
    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("w.raw");
    let x_path = dir.path().join("x.raw");
    write_raw_matrix(&w_path, &synth::gaussian_matrix(40, 256, 0.02, 2)).unwrap();
    write_raw_matrix(&x_path, &synth::gaussian_matrix(300, 256, 1.0, 3)).unwrap();
    for method in ["rtn", "hlq-alt", "hlq-grad", "hlq-gptq"] {
        let m_path = dir.path().join(format!("{method}.hlqp"));
        let out = hlq(&[
            "quantize",
            "--input",
            p(&w_path),
            "--wbits",
            "3",
            "--group",
            "64",
            "--method",
            method,
            "--calib",
            p(&x_path),
            "--out",
            p(&m_path),
            "--mirrored",
        ]);
        assert!(
            out.status.success(),
            "{method}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        for table in ["float", "int8"] {
            let out = hlq(&[
                "gemm-check",
                "--model",
                p(&m_path),
                "--batch",
                "4",
                "--table",
                table,
                "--seed",
                "9",
            ]);
            assert!(out.status.success(), "{method} {table}: {}", stdout(&out));
            assert!(stdout(&out).contains("PASS"));
        }
    }
}

#[test]
fn finetune_rewrites_model() {
    let dir = tempfile::tempdir().unwrap();
    let (w_path, x_path, m_path, t_path) = (
        dir.path().join("w.raw"),
        dir.path().join("x.raw"),
        dir.path().join("m.hlqp"),
        dir.path().join("t.hlqp"),
    );
    write_raw_matrix(&w_path, &synth::gaussian_matrix(16, 128, 0.02, 4)).unwrap();
    write_raw_matrix(&x_path, &synth::gaussian_matrix(64, 128, 1.0, 5)).unwrap();
    assert!(hlq(&[
        "quantize",
        "--input",
        p(&w_path),
        "--wbits",
        "2",
        "--group",
        "64",
        "--method",
        "hlq-alt",
        "--out",
        p(&m_path)
    ])
    .status
    .success());
    let out = hlq(&[
        "finetune",
        "--model",
        p(&m_path),
        "--calib",
        p(&x_path),
        "--reference",
        p(&w_path),
        "--lr",
        "1e-4",
        "--epochs",
        "2",
        "--out",
        p(&t_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let loss = |prefix: &str| -> f64 {
        let line = text.lines().rev().find(|l| l.starts_with(prefix)).unwrap();
        line.rsplit(' ').next().unwrap().parse().unwrap()
    };
    assert!(loss("epoch") <= loss("initial loss"), "{text}");
    assert!(t_path.exists());
}

#[test]
fn footprint_uses_bundled_shapes() {
    let out = hlq(&["footprint", "--wbits", "2", "--group", "128", "--format", "hlq"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("(3.887 GB)"), "{}", stdout(&out));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let out = hlq(&[
        "bench",
        "--shapes",
        "64x256",
        "--wbits",
        "2,3",
        "--formats",
        "hlq,uniform",
        "--reps",
        "10",
        "--csv",
        p(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "shape,q,format,table_mode,threads,reps,mean_s,std_s,lookups");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("64x256,2,hlq,float,2,10,"));
    let lookups = |l: &str| l.rsplit(',').next().unwrap().parse::<u64>().unwrap();
    assert_eq!(lookups(lines[1]), lookups(lines[2]));
    assert_eq!(lookups(lines[3]) * 2, lookups(lines[1]) * 3);
}

#[test]
fn errors_are_one_line_and_nonzero() {
    let out = hlq(&[
        "verify",
        "--model",
        "/nonexistent/m.hlqp",
        "--reference",
        "/nonexistent/w.raw",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
    assert!(
        !hlq(&["bpw", "--wbits", "2", "--group", "128", "--format", "hlq", "--bogus"])
            .status
            .success()
    );

    let dir = tempfile::tempdir().unwrap();
    let w_path = dir.path().join("w.raw");
    write_raw_matrix(&w_path, &synth::gaussian_matrix(4, 64, 0.02, 6)).unwrap();
    let out = hlq(&[
        "quantize",
        "--input",
        p(&w_path),
        "--wbits",
        "2",
        "--group",
        "64",
        "--method",
        "hlq-gptq",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--calib"));
    let out = hlq(&[
        "quantize",
        "--input",
        p(&w_path),
        "--wbits",
        "2",
        "--group",
        "48",
        "--method",
        "rtn",
    ]);
    assert!(!out.status.success());
}

#[test]
fn seed_makes_gemm_check_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (w_path, m_path) = (dir.path().join("w.raw"), dir.path().join("m.hlqp"));
    write_raw_matrix(&w_path, &synth::gaussian_matrix(32, 128, 0.02, 7)).unwrap();
    assert!(hlq(&[
        "quantize",
        "--input",
        p(&w_path),
        "--wbits",
        "2",
        "--group",
        "64",
        "--method",
        "hlq-alt",
        "--out",
        p(&m_path)
    ])
    .status
    .success());
    let run = |seed: &str| {
        stdout(&hlq(&[
            "gemm-check",
            "--model",
            p(&m_path),
            "--batch",
            "3",
            "--seed",
            seed,
        ]))
    };
    assert_eq!(run("5"), run("5"));
}
