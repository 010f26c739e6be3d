//! Transcript corruption: each original character is, with probability `p`,
//! replaced by an insertion, a deletion or a substitution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMethod {
    Insertion,
    Deletion,
    Replacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub p: f64,
    pub seed: u64,
    /// Weights for (insertion, deletion, replacement).
    pub weights: [f64; 3],
}

impl CorruptionSpec {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            seed,
            weights: [1.0 / 3.0; 3],
        }
    }

    pub fn with_weights(mut self, weights: [f64; 3]) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("corruption p = {} outside [0, 1]", self.p)));
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("corruption weights must be non-negative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "corruption weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Stateful corruption stream. One stream corrupts utterances in order, so a
/// corpus is reproducible from a single seed.
pub struct Corrupter {
    spec: CorruptionSpec,
    vocab_size: usize,
    rng: ChaCha8Rng,
    operations: usize,
}

impl Corrupter {
    pub fn new(spec: CorruptionSpec, vocab_size: usize) -> Result<Self> {
        spec.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config("vocabulary needs at least two tokens".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(Self {
            spec,
            vocab_size,
            rng,
            operations: 0,
        })
    }

    fn pick_method(&mut self) -> CorruptionMethod {
        let u: f64 = self.rng.gen();
        let [wi, wd, _] = self.spec.weights;
        if u < wi {
            CorruptionMethod::Insertion
        } else if u < wi + wd {
            CorruptionMethod::Deletion
        } else {
            CorruptionMethod::Replacement
        }
    }

    /// Corruption events applied so far.
    pub fn operations(&self) -> usize {
        self.operations
    }

    /// Single left-to-right pass over the original characters; inserted
    /// characters are never themselves corrupted.
    pub fn corrupt(&mut self, tokens: &[Token]) -> Vec<Token> {
        let v = self.vocab_size as Token;
        let mut out = Vec::with_capacity(tokens.len() + tokens.len() / 4);
        for &c in tokens {
            let hit: f64 = self.rng.gen();
            if hit >= self.spec.p {
                out.push(c);
                continue;
            }
            self.operations += 1;
            match self.pick_method() {
                CorruptionMethod::Insertion => {
                    let r = self.rng.gen_range(0..v);
                    if self.rng.gen_bool(0.5) {
                        out.extend([r, c]);
                    } else {
                        out.extend([c, r]);
                    }
                }
                CorruptionMethod::Deletion => {}
                CorruptionMethod::Replacement => {
                    // Draw from the vocabulary minus the original character.
                    let r = self.rng.gen_range(0..v - 1);
                    out.push(if r >= c { r + 1 } else { r });
                }
            }
        }
        out
    }
}

/// Corrupts one sequence with a fresh stream seeded from `spec`.
pub fn corrupt(tokens: &[Token], spec: &CorruptionSpec, vocab_size: usize) -> Result<Vec<Token>> {
    Ok(Corrupter::new(spec.clone(), vocab_size)?.corrupt(tokens))
}
