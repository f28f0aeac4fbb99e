//! Post-training quantization toolkit built around a quantization/inference
//! decoupling scheme: expressive quantizers (channel-wise uniform, log-sqrt2)
//! are used while calibrating, then rewritten into hardware-style quantizers
//! (layer-wise uniform, log2) by mathematically equivalent scale
//! reparameterization. A sequential pipeline runs the whole scheme over a
//! toy transformer block on synthetic calibration data.

pub mod clip;
pub mod error;
pub mod gptq;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod reparam;
pub mod synth;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
