//! Shared text encoder F and per-speaker heads G.
//!
//! ```text
//! tokens ─ embedding ─ U-Net ─ LN (no affine) ─ length regulator ─ head_s ─ frames
//! ```
//!
//! The encoder has no speaker input; all speaker-specific scale and offset
//! lives in the heads, which start by re-applying an affine to the
//! normalized encoder output.

mod checkpoint;
mod config;
pub mod forward;
mod params;

pub use checkpoint::{
    check_compatible, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for,
    save_checkpoint,
};
pub use config::{HeadLayout, ModelConfig};
pub use forward::checked_durations;
pub use params::{BoundHead, BoundLayer, BoundParams, HeadLayer, HeadParams, ModelParams};

use crate::autodiff::{Tape, Tensor};
use crate::corpus::Token;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenStage {
    /// One vector per token.
    Text,
    /// One vector per acoustic frame.
    Frames,
}

/// Encoder output `h`, before or after length regulation.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence {
    pub values: Tensor,
    pub stage: HiddenStage,
}

/// Immutable model for inference. Every call records on a private tape, so
/// a `Model` can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Self { config, params }
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn encode_text(&self, tokens: &[Token]) -> Result<HiddenSequence> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let h = forward::encode_text(tokens, &p, &self.config)?;
        Ok(HiddenSequence {
            values: h.value(),
            stage: HiddenStage::Text,
        })
    }

    /// Forward FLOPs of [`Self::encode_text`] for one sequence.
    pub fn encode_flops(&self, tokens: &[Token]) -> Result<u64> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        forward::encode_text(tokens, &p, &self.config)?;
        Ok(tape.flops())
    }

    pub fn unet_forward(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let x = tape.constant(x.clone());
        Ok(forward::unet_forward(&x, &p.down, &p.up)?.value())
    }

    pub fn length_regulate(&self, h: &HiddenSequence, durations: &[usize]) -> Result<HiddenSequence> {
        if h.stage != HiddenStage::Text {
            return Err(Error::contract("length regulation expects token-level h"));
        }
        length_regulate(h, durations)
    }

    pub fn head_forward(&self, speaker: u32, h_frames: &HiddenSequence) -> Result<Tensor> {
        if h_frames.stage != HiddenStage::Frames {
            return Err(Error::contract("heads expect frame-level h"));
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let h = tape.constant(h_frames.values.clone());
        Ok(forward::head_forward(speaker, &h, &p, &self.config)?.value())
    }

    pub fn synthesize(&self, tokens: &[Token], durations: &[usize], speaker: u32) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        Ok(forward::synthesize(tokens, durations, speaker, &p, &self.config)?.value())
    }
}

/// Repeats vector `t` of a token-level sequence `durations[t]` times.
pub fn length_regulate(h: &HiddenSequence, durations: &[usize]) -> Result<HiddenSequence> {
    let tape = Tape::new();
    let v = tape.constant(h.values.clone());
    Ok(HiddenSequence {
        values: forward::length_regulate(&v, durations)?.value(),
        stage: HiddenStage::Frames,
    })
}
