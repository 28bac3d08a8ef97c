//! Hierarchical linear quantization (HLQ) toolkit.
//!
//! * [`quant`]: uniform RTN and HLQ formats with alternating and gradient
//!   parameter search.
//! * [`gptq`]: calibration Hessians and block-wise HLQ with inverse-Hessian
//!   error compensation.
//! * [`lut`]: bit-plane decomposition, mirrored lookup tables and the
//!   bit-serial LUT GEMM.
//! * [`finetune`]: per-layer output reconstruction of `(s, z)` with fixed codes.
//! * [`metrics`]: error metrics, bits-per-weight and footprint accounting,
//!   and the GEMM benchmark harness.
//! * [`io`]: raw tensor files and the `HLQP` model container.

pub mod error;
pub mod finetune;
pub mod gptq;
pub mod io;
pub mod lut;
pub mod matrix;
pub mod metrics;
pub mod quant;
pub mod synth;

pub use error::{HlqError, Result};
pub use matrix::WeightMatrix;
