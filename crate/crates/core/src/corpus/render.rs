//! Synthetic acoustics: every token has a fixed prototype vector, every
//! speaker a per-dimension gain/bias and a duration rule. Rendering is
//! exactly invertible by [`OracleDecoder`].

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::Token;

/// `p_k[j] = sin(0.7·(k+1)·(j+1))`
pub fn token_prototype(k: Token, acoustic_dim: usize) -> Vec<f64> {
    (0..acoustic_dim)
        .map(|j| (0.7 * (k as f64 + 1.0) * (j as f64 + 1.0)).sin())
        .collect()
}

/// Speaker timbre: `g[j] = 1 + 0.25·sin(s + j)`, `b[j] = 0.3·cos(s·(j+1))`.
pub fn speaker_transform(speaker: u32, acoustic_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let s = speaker as f64;
    let gain = (0..acoustic_dim)
        .map(|j| 1.0 + 0.25 * (s + j as f64).sin())
        .collect();
    let bias = (0..acoustic_dim)
        .map(|j| 0.3 * (s * (j as f64 + 1.0)).cos())
        .collect();
    (gain, bias)
}

/// Frames per token: `1 + ((k + 2s) mod 3)`.
pub fn duration_rule(speaker: u32, k: Token) -> usize {
    1 + ((k as u64 + 2 * speaker as u64) % 3) as usize
}

/// Durations given by the rule for every token of a sequence.
pub fn rule_durations(tokens: &[Token], speaker: u32) -> Vec<usize> {
    tokens.iter().map(|&k| duration_rule(speaker, k)).collect()
}

/// Frame matrix `[Σ dur × d_a]`; each token contributes `dur(s,k)` copies of
/// `g_s ⊙ p_k + b_s`.
pub fn render_utterance(tokens: &[Token], speaker: u32, acoustic_dim: usize) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::contract("cannot render an empty token sequence"));
    }
    let (gain, bias) = speaker_transform(speaker, acoustic_dim);
    let mut data = Vec::new();
    let mut frames = 0;
    for &k in tokens {
        let frame: Vec<f64> = token_prototype(k, acoustic_dim)
            .iter()
            .zip(gain.iter().zip(&bias))
            .map(|(p, (g, b))| g * p + b)
            .collect();
        for _ in 0..duration_rule(speaker, k) {
            data.extend_from_slice(&frame);
            frames += 1;
        }
    }
    Tensor::new(vec![frames, acoustic_dim], data)
}

/// Exact inverse of [`render_utterance`]; stands in for a recognizer.
#[derive(Debug, Clone)]
pub struct OracleDecoder {
    acoustic_dim: usize,
    prototypes: Vec<Vec<f64>>,
}

impl OracleDecoder {
    pub fn new(vocab_size: usize, acoustic_dim: usize) -> Self {
        Self {
            acoustic_dim,
            prototypes: (0..vocab_size as Token)
                .map(|k| token_prototype(k, acoustic_dim))
                .collect(),
        }
    }

    /// Nearest prototype to a speaker-normalized frame; ties go to the
    /// smallest id.
    pub fn classify(&self, normalized: &[f64]) -> Token {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.prototypes.iter().enumerate() {
            let d: f64 = p
                .iter()
                .zip(normalized)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best as Token
    }

    /// Reads one token at the current frame, then skips that token's
    /// duration. Always terminates because every duration is at least one.
    pub fn decode(&self, frames: &Tensor, speaker: u32) -> Result<Vec<Token>> {
        if frames.shape().len() != 2 || frames.cols() != self.acoustic_dim {
            return Err(Error::Shape {
                op: "oracle_decode",
                lhs: frames.shape().to_vec(),
                rhs: vec![self.acoustic_dim],
            });
        }
        let (gain, bias) = speaker_transform(speaker, self.acoustic_dim);
        let mut out = Vec::new();
        let mut pos = 0;
        let mut normalized = vec![0.0; self.acoustic_dim];
        while pos < frames.rows() {
            for (j, v) in frames.row(pos).iter().enumerate() {
                normalized[j] = (v - bias[j]) / gain[j];
            }
            let k = self.classify(&normalized);
            out.push(k);
            pos += duration_rule(speaker, k);
        }
        Ok(out)
    }
}
