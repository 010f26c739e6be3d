use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How speakers map onto heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadLayout {
    /// One head per speaker; heads share nothing.
    PerSpeaker,
    /// A single head for everyone, with a learned speaker vector added to
    /// every frame of `h` before it.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub unet_depth: usize,
    pub acoustic_dim: usize,
    /// Corpus speaker id served by each head slot (or speaker-table row).
    pub speakers: Vec<u32>,
    pub head_layers: usize,
    /// Nonlinearity between head linear layers.
    pub head_relu: bool,
    pub head_layout: HeadLayout,
}

impl ModelConfig {
    /// Desk-scale experiments: `d_h = 64`, `M = 3`, `d_a = 16`.
    pub fn desk(speakers: Vec<u32>) -> Self {
        Self {
            vocab_size: 40,
            hidden: 64,
            kernel: 3,
            unet_depth: 3,
            acoustic_dim: 16,
            speakers,
            head_layers: 2,
            head_relu: true,
            head_layout: HeadLayout::PerSpeaker,
        }
    }

    /// Full-size hyperparameters: hidden 512, kernel 3, 7 U-Net levels.
    pub fn paper(speakers: Vec<u32>) -> Self {
        Self {
            hidden: 512,
            unet_depth: 7,
            ..Self::desk(speakers)
        }
    }

    /// Small enough for finite-difference gradient checks.
    pub fn tiny(speakers: Vec<u32>) -> Self {
        Self {
            vocab_size: 10,
            hidden: 8,
            unet_depth: 2,
            acoustic_dim: 4,
            ..Self::desk(speakers)
        }
    }

    pub fn with_layout(mut self, layout: HeadLayout) -> Self {
        self.head_layout = layout;
        self
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Padding block of the U-Net, `2^M`.
    pub fn block(&self) -> usize {
        1 << self.unet_depth
    }

    pub fn num_heads(&self) -> usize {
        match self.head_layout {
            HeadLayout::PerSpeaker => self.speakers.len(),
            HeadLayout::Shared => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("acoustic_dim", self.acoustic_dim),
            ("unet_depth", self.unet_depth),
            ("speakers", self.speakers.len()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be positive")));
            }
        }
        if self.unet_depth > 16 {
            return Err(Error::Config("unet_depth above 16 is not supported".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        let mut sorted = self.speakers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.speakers.len() {
            return Err(Error::Config("duplicate speaker ids".into()));
        }
        Ok(())
    }

    /// Slot of a corpus speaker id.
    pub fn speaker_slot(&self, speaker: u32) -> Result<usize> {
        self.speakers
            .iter()
            .position(|&s| s == speaker)
            .ok_or_else(|| Error::UnknownSpeaker {
                speaker,
                known: self.speakers.clone(),
            })
    }
}
