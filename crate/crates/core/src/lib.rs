//! Fixed-point quantization and bit-exact integer inference for a small,
//! bias-free digit-recognition CNN, together with the float training loop,
//! camera-frame preprocessing and a clock-cycle model of the FPGA pipeline.

pub mod bundle;
pub mod cycles;
pub mod data;
pub mod engine;
pub mod error;
pub mod fixed;
pub mod frame;
pub mod nn;
pub mod packed;
pub mod pnm;
pub mod quant;
pub mod train;

pub use error::{Error, Result};
