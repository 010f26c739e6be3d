//! Joint training of the encoder and heads, the two baselines, held-out
//! evaluation and the speaker-probe diagnostics.

mod diagnostics;
mod eval;
mod metrics;
mod probe;

pub use diagnostics::{diagnose, ridge_readout_r2, DiagnosticsReport, ObjectiveWeights, SpeakerDiagnostics};
pub use eval::{eval_target_cer, heldout_l1, CerResult};
pub use metrics::{format_report_table, MetricRow, MetricsWriter, ReportRow};
pub use probe::{head_features, hidden_features, speaker_probe, ProbeConfig};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::corpus::{Corpus, Token};
use crate::error::{Error, Result};
use crate::model::{forward, HeadLayout, Model, ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Shared encoder plus one head per corpus.
    MultiHead,
    /// Shared encoder plus one head for everyone, conditioned by a learned
    /// per-speaker vector.
    SharedHead,
    /// Shared encoder plus one head, trained on the target corpus alone.
    SingleCorpus,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::MultiHead => "multi-head",
            Variant::SharedHead => "shared-head",
            Variant::SingleCorpus => "single-corpus",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multi-head" => Ok(Variant::MultiHead),
            "shared-head" => Ok(Variant::SharedHead),
            "single-corpus" => Ok(Variant::SingleCorpus),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected multi-head, shared-head or single-corpus)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Speaker the single-corpus baseline is fit on.
    pub target_speaker: u32,
    pub log_every: u64,
}

impl TrainConfig {
    /// Desk defaults: 5K steps.
    pub fn desk(variant: Variant, target_speaker: u32, seed: u64) -> Self {
        Self {
            steps: 5000,
            batch_size: 16,
            base_lr: 1e-3,
            seed,
            variant,
            target_speaker,
            log_every: 100,
        }
    }

    /// Full-size preset: 100K steps.
    pub fn paper(variant: Variant, target_speaker: u32, seed: u64) -> Self {
        Self {
            steps: 100_000,
            ..Self::desk(variant, target_speaker, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("train.steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config("train.base_lr must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("train.log_every must be positive".into()));
        }
        Ok(())
    }
}

/// Model for a variant. `config.speakers` lists the corpus speakers the
/// variant serves; the single-corpus baseline must serve exactly one.
pub fn build_variant(variant: Variant, config: &ModelConfig, seed: u64) -> Result<Model> {
    let layout = match variant {
        Variant::MultiHead | Variant::SingleCorpus => HeadLayout::PerSpeaker,
        Variant::SharedHead => HeadLayout::Shared,
    };
    if variant == Variant::SingleCorpus && config.num_speakers() != 1 {
        return Err(Error::Config(format!(
            "single-corpus baseline serves one speaker, config lists {:?}",
            config.speakers
        )));
    }
    Model::init(config.clone().with_layout(layout), seed)
}

/// Speaker set a variant is built for, given the training corpora.
pub fn variant_speakers(variant: Variant, corpora: &[Corpus], target: u32) -> Vec<u32> {
    match variant {
        Variant::SingleCorpus => vec![target],
        _ => {
            let mut s: Vec<u32> = corpora.iter().flat_map(|c| c.speakers.iter().copied()).collect();
            s.sort_unstable();
            s.dedup();
            s
        }
    }
}

struct Sample {
    speaker: u32,
    tokens: Vec<Token>,
    durations: Vec<usize>,
    frames: crate::autodiff::Tensor,
}

/// Step-wise trainer. Deterministic given its inputs.
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: AdamState,
    pool: Vec<Sample>,
    rng: ChaCha8Rng,
    step: u64,
    window: BTreeMap<u32, (f64, usize)>,
    metrics: Vec<MetricRow>,
}

impl Trainer {
    /// Builds the variant described by `config` over `model_config` with
    /// `model_config.speakers` replaced to match the variant.
    pub fn new(config: &TrainConfig, corpora: &[Corpus], model_config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        if corpora.is_empty() {
            return Err(Error::Config("training needs at least one corpus".into()));
        }
        let speakers = variant_speakers(config.variant, corpora, config.target_speaker);
        if config.variant == Variant::MultiHead && speakers.len() != corpora.len() {
            return Err(Error::Config(format!(
                "multi-head training needs one speaker per corpus: {} corpora, {} speakers",
                corpora.len(),
                speakers.len()
            )));
        }
        let mut mc = model_config.clone();
        mc.speakers = speakers;
        let model = build_variant(config.variant, &mc, config.seed)?;

        let mut pool = Vec::new();
        for corpus in corpora {
            if corpus.vocab_size > mc.vocab_size || corpus.acoustic_dim != mc.acoustic_dim {
                return Err(Error::Config(format!(
                    "corpus (V = {}, d_a = {}) does not fit the model (V = {}, d_a = {})",
                    corpus.vocab_size, corpus.acoustic_dim, mc.vocab_size, mc.acoustic_dim
                )));
            }
            for u in &corpus.utterances {
                if !mc.speakers.contains(&u.speaker) || u.training.is_empty() {
                    continue;
                }
                pool.push(Sample {
                    speaker: u.speaker,
                    tokens: u.training.clone(),
                    durations: u.training_durations(),
                    frames: u.frames.clone(),
                });
            }
        }
        if pool.is_empty() {
            return Err(Error::Degenerate("no trainable utterances for this variant".into()));
        }
        let adam = AdamState::new(
            AdamConfig::new(config.base_lr, config.steps),
            &model.params.named_tensors().iter().map(|(_, t)| *t).collect::<Vec<_>>(),
        );
        Ok(Self {
            config: config.clone(),
            model,
            adam,
            pool,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a),
            step: 0,
            window: BTreeMap::new(),
            metrics: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn metrics(&self) -> &[MetricRow] {
        &self.metrics
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    /// One optimizer step on a uniformly sampled batch. Returns the batch
    /// loss.
    pub fn step(&mut self) -> Result<f64> {
        let batch: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.gen_range(0..self.pool.len()))
            .collect();
        let tape = Tape::new();
        let bound = self.model.params.bind(&tape, true);
        let mut total = None;
        let mut per_utt = Vec::with_capacity(batch.len());
        for &i in &batch {
            let s = &self.pool[i];
            let h = forward::encode_text(&s.tokens, &bound, &self.model.config)?;
            check_normalized(&h.value_ref())?;
            let frames = forward::length_regulate(&h, &s.durations)?;
            let out = forward::head_forward(s.speaker, &frames, &bound, &self.model.config)?;
            let target = tape.constant(s.frames.clone());
            let loss = out.l1_loss(&target)?;
            per_utt.push((s.speaker, loss.value().data()[0]));
            total = Some(match total {
                None => loss,
                Some(acc) => loss.add(&acc)?,
            });
        }
        let total = total
            .expect("batch is non-empty")
            .scale(1.0 / batch.len() as f64);
        let value = total.value().data()[0];
        if !value.is_finite() {
            return Err(Error::Degenerate(format!("training loss became {value} at step {}", self.step + 1)));
        }
        let grads = tape.backward(total)?;
        let vars = bound.vars();
        let mut tensors = self.model.params.tensors_mut();
        for (v, t) in vars.iter().zip(tensors.iter_mut()) {
            grads.attach(*v, t)?;
        }
        self.adam.step(&mut tensors)?;
        self.step += 1;

        for (speaker, l) in per_utt {
            let e = self.window.entry(speaker).or_insert((0.0, 0));
            e.0 += l;
            e.1 += 1;
        }
        if self.step % self.config.log_every == 0 || self.step == self.config.steps {
            let losses = self
                .model
                .config
                .speakers
                .iter()
                .map(|s| {
                    let (sum, n) = self.window.get(s).copied().unwrap_or((0.0, 0));
                    (*s, if n == 0 { f64::NAN } else { sum / n as f64 })
                })
                .collect();
            self.metrics.push(MetricRow {
                step: self.step,
                losses,
                lr: self.adam.current_lr(),
            });
            self.window.clear();
        }
        Ok(value)
    }

    /// Steps until `target` (capped at the configured total).
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        while self.step < target.min(self.config.steps) {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainOutcome> {
        self.run_until(self.config.steps)?;
        Ok(TrainOutcome {
            model: self.model,
            metrics: self.metrics,
        })
    }
}

/// Per-vector mean within 1e-9 of zero and variance at most `1 + 1e-6`;
/// affine-free layer norm guarantees both, up to its epsilon shrinking the
/// variance.
fn check_normalized(h: &crate::autodiff::Tensor) -> Result<()> {
    let d = h.cols() as f64;
    for r in 0..h.rows() {
        let row = h.row(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        if mean.abs() >= 1e-9 || var > 1.0 + 1e-6 {
            return Err(Error::contract(format!(
                "encoder output row {r} not normalized: mean {mean:e}, variance {var}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricRow>,
}

/// Trains a variant to completion.
pub fn train(config: &TrainConfig, corpora: &[Corpus], model_config: &ModelConfig) -> Result<TrainOutcome> {
    Trainer::new(config, corpora, model_config)?.finish()
}

/// Initial parameters a [`Trainer`] starts from.
pub fn initial_params(config: &TrainConfig, corpora: &[Corpus], model_config: &ModelConfig) -> Result<ModelParams> {
    Ok(Trainer::new(config, corpora, model_config)?.model.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec, CorruptionSpec};

    fn corpus(speaker: u32, n: usize, seed: u64) -> Corpus {
        generate_corpus(&CorpusSpec {
            utts_per_speaker: n,
            min_len: 3,
            max_len: 8,
            speakers: vec![speaker],
            vocab_size: 10,
            acoustic_dim: 4,
            seed,
        })
        .unwrap()
    }

    fn quick(variant: Variant, steps: u64) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 4,
            base_lr: 1e-2,
            seed: 3,
            variant,
            target_speaker: 1,
            log_every: 5,
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::MultiHead, Variant::SharedHead, Variant::SingleCorpus] {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("fastspeech").is_err());
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let corpora = [corpus(0, 10, 1), corpus(1, 10, 2)];
        let mc = ModelConfig::tiny(vec![]);
        let cfg = quick(Variant::MultiHead, 10);
        let init = initial_params(&cfg, &corpora, &mc).unwrap();
        let mut t = Trainer::new(&cfg, &corpora, &mc).unwrap();
        t.run_until(0).unwrap();
        assert_eq!(t.model().params, init);
        assert_eq!(init, build_variant(Variant::MultiHead, &ModelConfig::tiny(vec![0, 1]), 3).unwrap().params);
    }

    #[test]
    fn deterministic_and_loss_decreases() {
        let corpora = [corpus(0, 20, 1), corpus(1, 20, 2)];
        let mc = ModelConfig::tiny(vec![]);
        let cfg = quick(Variant::MultiHead, 60);
        let a = train(&cfg, &corpora, &mc).unwrap();
        let b = train(&cfg, &corpora, &mc).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(format!("{:?}", a.metrics), format!("{:?}", b.metrics));
        assert_eq!(a.metrics.len(), 12);
        let first = a.metrics[0].mean_loss();
        let last = a.metrics.last().unwrap().mean_loss();
        assert!(last < first, "{first} -> {last}");
        assert_eq!(a.metrics.last().unwrap().lr, 0.0);
    }

    #[test]
    fn multi_head_needs_one_corpus_per_speaker() {
        let mut both = corpus(0, 5, 1);
        both.speakers.insert(1);
        let corpora = [Corpus::merged(&[&both, &corpus(1, 5, 2)]).unwrap()];
        let err = Trainer::new(&quick(Variant::MultiHead, 1), &corpora, &ModelConfig::tiny(vec![]));
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(Trainer::new(&quick(Variant::SharedHead, 1), &corpora, &ModelConfig::tiny(vec![])).is_ok());
        assert!(matches!(
            Trainer::new(&quick(Variant::MultiHead, 1), &[], &ModelConfig::tiny(vec![])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_corpus_ignores_source() {
        let corpora = [corpus(0, 30, 1), corpus(1, 7, 2)];
        let t = Trainer::new(&quick(Variant::SingleCorpus, 5), &corpora, &ModelConfig::tiny(vec![])).unwrap();
        assert_eq!(t.pool_size(), 7);
        assert_eq!(t.model().config.speakers, vec![1]);
        assert!(t.pool.iter().all(|s| s.speaker == 1));
        let out = t.finish().unwrap();
        assert!(out.metrics.iter().all(|m| m.losses.len() == 1));
    }

    #[test]
    fn gradient_routing_is_per_head() {
        let corpora = [corpus(0, 10, 1), corpus(1, 10, 2)];
        let mc = ModelConfig::tiny(vec![0, 1]);
        let model = build_variant(Variant::MultiHead, &mc, 0).unwrap();
        let tape = Tape::new();
        let bound = model.params.bind(&tape, true);
        let u = &corpora[0].utterances[0];
        let out = forward::synthesize(&u.training, &u.training_durations(), 0, &bound, &model.config).unwrap();
        let loss = out.l1_loss(&tape.constant(u.frames.clone())).unwrap();
        let grads = tape.backward(loss).unwrap();
        let head1 = &bound.heads[1];
        let mut head1_vars = vec![head1.entry_gain, head1.entry_bias, head1.out_weight, head1.out_bias];
        for l in &head1.layers {
            head1_vars.extend([l.weight, l.bias, l.ln_gain, l.ln_bias]);
        }
        for v in head1_vars {
            if let Some(g) = grads.get(v) {
                assert!(g.data().iter().all(|x| *x == 0.0));
            }
        }
        let enc = grads.get(bound.down[0]).unwrap();
        assert!(enc.data().iter().any(|x| *x != 0.0));
    }

    #[test]
    fn corrupted_corpora_train() {
        let target = corpus(1, 20, 2).corrupted(&CorruptionSpec::new(0.5, 9)).unwrap();
        let corpora = [corpus(0, 20, 1), target];
        assert!(train(&quick(Variant::MultiHead, 10), &corpora, &ModelConfig::tiny(vec![])).is_ok());
    }
}
