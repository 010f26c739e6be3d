//! Multi-head text-to-speech laboratory.
//!
//! A shared text encoder (embedding, 1-D U-Net, affine-free layer norm,
//! length regulator) feeds one small per-frame head per speaker. Around that
//! model the crate provides:
//!
//! - [`autodiff`]: dense tensors, a reverse-mode tape and Adam.
//! - [`model`]: the encoder, the heads, synthesis and checkpoints.
//! - [`corpus`]: a deterministic synthetic multi-speaker corpus with an exact
//!   oracle decoder, transcript corruption, and character error rate.
//! - [`train`]: joint training, the shared-head and single-corpus baselines,
//!   and the speaker-probe diagnostics.
//! - [`bench`]: wall-time and FLOP scaling of the U-Net encoder against a
//!   self-attention block.

pub mod autodiff;
pub mod bench;
pub mod container;
pub mod corpus;
pub mod error;
pub mod model;
pub mod train;

pub use error::{Error, Result};
