//! Composite-degradation image restoration toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: tensors, a reverse-mode tape, and gradient checking.
//! - [`image`]: RGB buffers with PPM/PNG I/O.
//! - [`synth`]: deterministic low-light / haze / rain / snow synthesis.
//! - [`encoder`]: the toy text/image encoder pair and its memory bank.
//! - [`descriptor`]: token sampling, composite descriptors and adaptive weights.
//! - [`restorer`]: the all-in-one transformer U-Net.
//! - [`train`]: losses, Adam, checkpoints, metrics, training and evaluation.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod image;
pub mod nn;
pub mod seed;
pub mod synth;
pub mod encoder;
pub mod descriptor;
pub mod config;
pub mod restorer;
pub mod train;
pub mod selftest;
