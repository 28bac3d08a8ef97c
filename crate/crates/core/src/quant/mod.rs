//! Weight quantization formats and parameter search.
//!
//! Two formats live here: the uniform round-to-nearest baseline
//! ([`rtn_quantize`]) and hierarchical linear quantization (HLQ), where each
//! weight in a group is reconstructed as `sum_j s_j * b_j + z` with one
//! binary codeword `b` per weight and `q` free scales per group.

mod codebook;
mod hlq;
mod lstsq;
mod rtn;

pub use codebook::{build_codebook, Codebook};
pub use hlq::{
    alternating_group, assign_group, candidate_set, codeword_value, gradient_group, group_mse, hlq_alternating,
    hlq_assign, hlq_dequantize, hlq_gradient, hlq_init, hlq_lse, init_group, lse_group, reconstruction_grad,
    BitAssignment, CandidateSet, GroupFit, HlqParams,
};
pub use lstsq::min_norm_solve;
pub use rtn::{rtn_dequantize, rtn_quantize, UniformQuant};

use crate::error::{HlqError, Result};

/// Storage format of a quantized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// One scale and one zero-point per group.
    Uniform,
    /// `q` scales and one zero-point per group.
    Hlq,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Uniform => "uniform",
            Format::Hlq => "hlq",
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Format {
    type Err = HlqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Format::Uniform),
            "hlq" => Ok(Format::Hlq),
            other => Err(HlqError::config(format!(
                "unknown format {other:?} (expected uniform or hlq)"
            ))),
        }
    }
}

/// Largest bit width any path accepts. Optimized paths stop at 4.
pub const MAX_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    /// Bits per weight `q`.
    pub bits: u32,
    /// Weights per parameter group `g` along the input dimension.
    pub group_size: usize,
    /// Iterations of the alternating or gradient search.
    pub t_max: usize,
    /// Output rows processed per chunk.
    pub chunk_rows: usize,
    /// Early-stop threshold on loss improvement for the gradient search.
    pub epsilon: f64,
    /// Step size for the gradient search.
    pub lr: f64,
    /// Nesterov momentum for the gradient search; 0 is plain gradient descent.
    pub momentum: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 2,
            group_size: 128,
            t_max: 10,
            chunk_rows: 1024,
            epsilon: 1e-12,
            lr: 0.3,
            momentum: 0.9,
        }
    }
}

impl QuantConfig {
    pub fn new(bits: u32, group_size: usize) -> Self {
        Self {
            bits,
            group_size,
            ..Self::default()
        }
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_chunk_rows(mut self, chunk_rows: usize) -> Self {
        self.chunk_rows = chunk_rows;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Checks the config against a matrix with `cols` input channels.
    pub fn validate(&self, cols: usize) -> Result<()> {
        if self.bits == 0 || self.bits > MAX_BITS {
            return Err(HlqError::config(format!(
                "bit width must be in 1..={MAX_BITS}, got {}",
                self.bits
            )));
        }
        if self.group_size == 0 || !cols.is_multiple_of(self.group_size) {
            return Err(HlqError::config(format!(
                "group size {} does not divide {cols} input channels",
                self.group_size
            )));
        }
        if self.t_max == 0 {
            return Err(HlqError::config("t_max must be at least 1"));
        }
        if self.chunk_rows == 0 {
            return Err(HlqError::config("chunk_rows must be at least 1"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(HlqError::config("epsilon must be positive"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(HlqError::config("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HlqError::config("momentum must be in [0, 1)"));
        }
        Ok(())
    }
}
