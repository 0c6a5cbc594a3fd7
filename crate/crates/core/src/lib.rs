pub mod alignment;
pub mod calibration;
pub mod error;
pub mod kernels;
pub mod lowrank;
pub mod manifest;
pub mod npy;
pub mod pipeline;
pub mod regression;
pub mod sketch;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
