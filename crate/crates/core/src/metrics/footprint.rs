use serde::{Deserialize, Serialize};

use crate::error::{HlqError, Result};
use crate::quant::Format;

/// Average stored bits per weight with fp16 scales and zero-points.
///
/// Uniform keeps one scale and one zero per group, HLQ keeps `q` scales and
/// one zero.
pub fn bpw(bits: u32, group_size: usize, format: Format) -> f64 {
    let per_group = match format {
        Format::Uniform => 2,
        Format::Hlq => bits as usize + 1,
    };
    bits as f64 + (per_group * 16) as f64 / group_size as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub count: u64,
    /// Output channels.
    pub n: u64,
    /// Input channels.
    pub k: u64,
}

/// Tensor kept in fp16 and counted by byte size only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedLayer {
    pub name: String,
    pub bytes: u64,
}

/// Linear-layer shapes of a model, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShapes {
    pub name: String,
    pub layers: Vec<LayerShape>,
    #[serde(default)]
    pub excluded: Vec<ExcludedLayer>,
}

const LLAMA31_8B: &str = include_str!("../../data/llama3.1-8b.json");

impl ModelShapes {
    pub fn from_json(text: &str) -> Result<Self> {
        let shapes: Self = serde_json::from_str(text).map_err(|e| HlqError::config(format!("model shapes: {e}")))?;
        shapes.validate()?;
        Ok(shapes)
    }

    /// Linear layers of LLaMA-3.1-8B (32 decoder blocks) with the token
    /// embedding and output head excluded.
    pub fn llama31_8b() -> Self {
        Self::from_json(LLAMA31_8B).expect("bundled shape file parses")
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if l.count == 0 || l.n == 0 || l.k == 0 {
                return Err(HlqError::config(format!("layer {} has a zero dimension", l.name)));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> u64 {
        self.layers.iter().map(|l| l.count * l.n * l.k).sum()
    }

    pub fn excluded_bytes(&self) -> u64 {
        self.excluded.iter().map(|e| e.bytes).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelShapeConfig {
    pub shapes: ModelShapes,
    pub format: Format,
    pub bits: u32,
    pub group_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    /// Quantized layers plus excluded tensors.
    pub bytes: f64,
    /// Same model entirely in fp16.
    pub fp16_bytes: f64,
    /// `fp16_bytes / bytes`.
    pub compression_rate: f64,
}

impl Footprint {
    pub fn gib(&self) -> f64 {
        self.bytes / (1u64 << 30) as f64
    }
}

pub fn model_footprint(cfg: &ModelShapeConfig) -> Result<Footprint> {
    cfg.shapes.validate()?;
    if cfg.group_size == 0 {
        return Err(HlqError::config("group size must be positive"));
    }
    let weights = cfg.shapes.weights() as f64;
    let excluded = cfg.shapes.excluded_bytes() as f64;
    let bytes = weights * bpw(cfg.bits, cfg.group_size, cfg.format) / 8.0 + excluded;
    let fp16_bytes = weights * 2.0 + excluded;
    Ok(Footprint {
        bytes,
        fp16_bytes,
        compression_rate: if bytes > 0.0 { fp16_bytes / bytes } else { 1.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_per_weight_table() {
        assert_eq!(bpw(2, 128, Format::Uniform), 2.25);
        assert_eq!(bpw(3, 128, Format::Uniform), 3.25);
        assert_eq!(bpw(2, 128, Format::Hlq), 2.375);
        assert_eq!(bpw(3, 128, Format::Hlq), 3.5);
        assert_eq!(bpw(2, 64, Format::Hlq), 2.75);
        assert!((bpw(2, 1 << 40, Format::Hlq) - 2.0).abs() < 1e-9);
    }

    fn single(n: u64, k: u64, excluded: u64) -> ModelShapes {
        ModelShapes {
            name: "t".into(),
            layers: vec![LayerShape {
                name: "l".into(),
                count: 1,
                n,
                k,
            }],
            excluded: vec![ExcludedLayer {
                name: "e".into(),
                bytes: excluded,
            }],
        }
    }

    #[test]
    fn single_layer_formula() {
        let cfg = ModelShapeConfig {
            shapes: single(4096, 4096, 0),
            format: Format::Uniform,
            bits: 2,
            group_size: 128,
        };
        let fp = model_footprint(&cfg).unwrap();
        assert_eq!(fp.bytes, 4096.0 * 4096.0 * 2.25 / 8.0);
    }

    #[test]
    fn excluded_only_has_unit_rate() {
        let shapes = ModelShapes {
            name: "t".into(),
            layers: vec![],
            excluded: vec![ExcludedLayer {
                name: "e".into(),
                bytes: 1000,
            }],
        };
        let fp = model_footprint(&ModelShapeConfig {
            shapes,
            format: Format::Hlq,
            bits: 2,
            group_size: 128,
        })
        .unwrap();
        assert_eq!(fp.compression_rate, 1.0);
    }

    #[test]
    fn llama_footprints() {
        let shapes = ModelShapes::llama31_8b();
        let gib = |format| {
            model_footprint(&ModelShapeConfig {
                shapes: shapes.clone(),
                format,
                bits: 2,
                group_size: 128,
            })
            .unwrap()
            .gib()
        };
        assert!((gib(Format::Hlq) / 3.887 - 1.0).abs() <= 0.02, "{}", gib(Format::Hlq));
        assert!(
            (gib(Format::Uniform) / 3.785 - 1.0).abs() <= 0.02,
            "{}",
            gib(Format::Uniform)
        );
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(ModelShapes::from_json(r#"{"name":"x","layers":[{"name":"a","count":1,"n":0,"k":4}]}"#).is_err());
        assert!(ModelShapes::from_json("not json").is_err());
    }
}
