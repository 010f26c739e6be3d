use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{HeadLayout, ModelConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

/// One speaker head. Every map is per-frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Re-scale and re-center of the normalized encoder output.
    pub entry_gain: Tensor,
    pub entry_bias: Tensor,
    pub layers: Vec<HeadLayer>,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub down: Vec<Tensor>,
    pub up: Vec<Tensor>,
    /// `[N × d_h]` speaker vectors, shared-head layout only.
    pub speaker_table: Option<Tensor>,
    pub heads: Vec<HeadParams>,
}

impl HeadParams {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.hidden;
        let layers = (0..config.head_layers)
            .map(|_| HeadLayer {
                weight: Tensor::randn(&[d, d], (2.0 / d as f64).sqrt(), rng),
                bias: Tensor::zeros(&[d]),
                ln_gain: Tensor::full(&[d], 1.0),
                ln_bias: Tensor::zeros(&[d]),
            })
            .collect();
        Self {
            entry_gain: Tensor::full(&[d], 1.0),
            entry_bias: Tensor::zeros(&[d]),
            layers,
            out_weight: Tensor::randn(&[d, config.acoustic_dim], (1.0 / d as f64).sqrt(), rng),
            out_bias: Tensor::zeros(&[config.acoustic_dim]),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.entry.gain"), &self.entry_gain));
        out.push((format!("{prefix}.entry.bias"), &self.entry_bias));
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layer.{l}.weight"), &layer.weight));
            out.push((format!("{prefix}.layer.{l}.bias"), &layer.bias));
            out.push((format!("{prefix}.layer.{l}.ln.gain"), &layer.ln_gain));
            out.push((format!("{prefix}.layer.{l}.ln.bias"), &layer.ln_bias));
        }
        out.push((format!("{prefix}.out.weight"), &self.out_weight));
        out.push((format!("{prefix}.out.bias"), &self.out_bias));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.entry_gain);
        out.push(&mut self.entry_bias);
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            out.push(&mut layer.ln_gain);
            out.push(&mut layer.ln_bias);
        }
        out.push(&mut self.out_weight);
        out.push(&mut self.out_bias);
    }

    pub fn parameter_count(&self) -> usize {
        let mut v = Vec::new();
        self.named("", &mut v);
        v.iter().map(|(_, t)| t.len()).sum()
    }
}

impl ModelParams {
    /// Seeded random initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let k = config.kernel;
        let conv_std = (2.0 / (d * k) as f64).sqrt();
        let embedding = Tensor::randn(&[config.vocab_size, d], 1.0, &mut rng);
        let down = (0..config.unet_depth)
            .map(|_| Tensor::randn(&[d, d, k], conv_std, &mut rng))
            .collect();
        let up = (0..config.unet_depth)
            .map(|_| Tensor::randn(&[d, d, k], conv_std, &mut rng))
            .collect();
        let speaker_table = match config.head_layout {
            HeadLayout::Shared => Some(Tensor::randn(&[config.num_speakers(), d], 0.1, &mut rng)),
            HeadLayout::PerSpeaker => None,
        };
        let heads = (0..config.num_heads())
            .map(|_| HeadParams::init(config, &mut rng))
            .collect();
        Ok(Self {
            embedding,
            down,
            up,
            speaker_table,
            heads,
        })
    }

    /// Every tensor with its checkpoint name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (i, w) in self.down.iter().enumerate() {
            out.push((format!("unet.down.{i}"), w));
        }
        for (i, w) in self.up.iter().enumerate() {
            out.push((format!("unet.up.{i}"), w));
        }
        if let Some(t) = &self.speaker_table {
            out.push(("speaker_table".to_string(), t));
        }
        for (h, head) in self.heads.iter().enumerate() {
            head.named(&format!("head.{h}"), &mut out);
        }
        out
    }

    /// Mutable tensors in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.down.iter_mut());
        out.extend(self.up.iter_mut());
        if let Some(t) = &mut self.speaker_table {
            out.push(t);
        }
        for head in &mut self.heads {
            head.tensors_mut(&mut out);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Parameters of the shared encoder (embedding and U-Net).
    pub fn encoder_parameter_count(&self) -> usize {
        self.embedding.len()
            + self.down.iter().map(Tensor::len).sum::<usize>()
            + self.up.iter().map(Tensor::len).sum::<usize>()
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundParams<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t.clone())
            }
        };
        BoundParams {
            embedding: leaf(&self.embedding),
            down: self.down.iter().map(leaf).collect(),
            up: self.up.iter().map(leaf).collect(),
            speaker_table: self.speaker_table.as_ref().map(leaf),
            heads: self
                .heads
                .iter()
                .map(|h| BoundHead {
                    entry_gain: leaf(&h.entry_gain),
                    entry_bias: leaf(&h.entry_bias),
                    layers: h
                        .layers
                        .iter()
                        .map(|l| BoundLayer {
                            weight: leaf(&l.weight),
                            bias: leaf(&l.bias),
                            ln_gain: leaf(&l.ln_gain),
                            ln_bias: leaf(&l.ln_bias),
                        })
                        .collect(),
                    out_weight: leaf(&h.out_weight),
                    out_bias: leaf(&h.out_bias),
                })
                .collect(),
        }
    }
}

impl ModelParams {
    /// Rebuilds bound parameters from vars listed in the order of
    /// [`Self::tensors_mut`], using `self` only for the layout.
    pub fn rebind<'t>(&self, vars: &[Var<'t>]) -> Result<BoundParams<'t>> {
        let expected = self.named_tensors().len();
        if vars.len() != expected {
            return Err(crate::error::Error::contract(format!(
                "{} vars for {expected} parameter tensors",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let embedding = next();
        let down = self.down.iter().map(|_| next()).collect();
        let up = self.up.iter().map(|_| next()).collect();
        let speaker_table = self.speaker_table.as_ref().map(|_| next());
        let heads = self
            .heads
            .iter()
            .map(|h| {
                let entry_gain = next();
                let entry_bias = next();
                let layers = h
                    .layers
                    .iter()
                    .map(|_| BoundLayer {
                        weight: next(),
                        bias: next(),
                        ln_gain: next(),
                        ln_bias: next(),
                    })
                    .collect();
                BoundHead {
                    entry_gain,
                    entry_bias,
                    layers,
                    out_weight: next(),
                    out_bias: next(),
                }
            })
            .collect();
        Ok(BoundParams {
            embedding,
            down,
            up,
            speaker_table,
            heads,
        })
    }
}

pub struct BoundLayer<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub ln_gain: Var<'t>,
    pub ln_bias: Var<'t>,
}

pub struct BoundHead<'t> {
    pub entry_gain: Var<'t>,
    pub entry_bias: Var<'t>,
    pub layers: Vec<BoundLayer<'t>>,
    pub out_weight: Var<'t>,
    pub out_bias: Var<'t>,
}

/// [`ModelParams`] recorded on a tape.
pub struct BoundParams<'t> {
    pub embedding: Var<'t>,
    pub down: Vec<Var<'t>>,
    pub up: Vec<Var<'t>>,
    pub speaker_table: Option<Var<'t>>,
    pub heads: Vec<BoundHead<'t>>,
}

impl<'t> BoundParams<'t> {
    /// Vars in the same order as [`ModelParams::tensors_mut`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.embedding];
        out.extend(&self.down);
        out.extend(&self.up);
        out.extend(self.speaker_table);
        for h in &self.heads {
            out.push(h.entry_gain);
            out.push(h.entry_bias);
            for l in &h.layers {
                out.extend([l.weight, l.bias, l.ln_gain, l.ln_bias]);
            }
            out.push(h.out_weight);
            out.push(h.out_bias);
        }
        out
    }
}
