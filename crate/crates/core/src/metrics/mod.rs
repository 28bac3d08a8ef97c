//! Quality metrics, storage accounting and the GEMM benchmark.

mod bench;
mod footprint;

pub use bench::{bench_gemm, synthetic_layer, BenchConfig, BenchReport, BenchRow, CSV_HEADER};
pub use footprint::{bpw, model_footprint, ExcludedLayer, Footprint, LayerShape, ModelShapeConfig, ModelShapes};

use crate::error::{HlqError, Result};
use crate::matrix::WeightMatrix;

/// Mean squared elementwise difference.
pub fn mse(a: &WeightMatrix, b: &WeightMatrix) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `a . b / (|a| |b|)`, or 0 (with a warning) when either vector is zero.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(HlqError::data(format!(
            "cosine similarity needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity with a zero vector is taken as 0");
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::quant::{build_codebook, hlq_alternating, hlq_dequantize, rtn_dequantize, rtn_quantize, QuantConfig};
    use crate::synth;

    #[test]
    fn mse_examples() {
        let a = synth::gaussian_matrix(3, 5, 1.0, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let z = WeightMatrix::new(1, 1, vec![0.0]).unwrap();
        let t = WeightMatrix::new(1, 1, vec![2.0]).unwrap();
        assert_eq!(mse(&z, &t).unwrap(), 4.0);
        assert!(mse(&a, &z).is_err());
    }

    #[test]
    fn hlq_three_bit_mse_below_rtn() {
        let w = synth::gaussian_matrix(1, 4096, 0.02, 2);
        let cfg = QuantConfig::new(3, 128);
        let (p, b) = hlq_alternating(&w, &cfg).unwrap();
        let hlq = mse(&w, &hlq_dequantize(&b, &p, &build_codebook(3).unwrap()).unwrap()).unwrap();
        let rtn = mse(&w, &rtn_dequantize(&rtn_quantize(&w, &cfg).unwrap()).unwrap()).unwrap();
        // An optimal 8-level scalar quantizer only reaches about 0.57x RTN
        // on 128-sample Gaussian groups.
        assert!(hlq <= 0.8 * rtn, "hlq {hlq:e} rtn {rtn:e}");
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_similarity(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_bounded(a in prop::collection::vec(-10f32..10.0, 1..32), scale in 0.1f32..10.0) {
            let b: Vec<f32> = a.iter().map(|v| v * scale).collect();
            let c = cosine_similarity(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
            if a.iter().any(|&v| v != 0.0) {
                prop_assert!((c - 1.0).abs() < 1e-9);
                let neg: Vec<f32> = a.iter().map(|v| -v).collect();
                prop_assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-9);
            }
        }
    }
}
