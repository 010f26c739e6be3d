//! Run configuration: documented defaults, overlaid by a TOML file, overlaid
//! by `--set section.key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::Value;

use mhtts_core::bench::BenchConfig;
use mhtts_core::corpus::CorruptionSpec;
use mhtts_core::model::{HeadLayout, ModelConfig};
use mhtts_core::train::{ProbeConfig, TrainConfig, Variant};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for model initialization, batch sampling and the corruption
    /// stream of a cell.
    pub seed: u64,
    pub data: DataSection,
    pub corrupt: CorruptSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub probe: ProbeSection,
    pub synth: SynthSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub source_speaker: u32,
    pub target_speaker: u32,
    pub source_utts: usize,
    /// Target utterances generated by `gen-data`.
    pub target_pool: usize,
    /// Target utterances used by a cell (first `target_utts` of the pool).
    pub target_utts: usize,
    /// Clean held-out utterances per speaker.
    pub heldout_utts: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub acoustic_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptSection {
    pub p: f64,
    /// Weights of insertion, deletion and replacement.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub kernel: usize,
    pub unet_depth: usize,
    pub head_layers: usize,
    pub head_relu: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub variant: String,
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub log_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_utts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub test_fraction: f64,
    pub lambda: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub speaker: u32,
    /// Space-separated token ids.
    pub text: String,
    /// Space-separated durations; empty means the duration rule.
    pub durations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub lengths: Vec<usize>,
    pub repetitions: usize,
    pub hidden: usize,
    pub unet_depth: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::desk(vec![]);
        let train = TrainConfig::desk(Variant::MultiHead, 1, 0);
        let bench = BenchConfig::desk(0);
        let probe = ProbeConfig::new(0);
        Self {
            seed: 0,
            data: DataSection {
                seed: 1,
                source_speaker: 0,
                target_speaker: 1,
                source_utts: 2000,
                target_pool: 500,
                target_utts: 500,
                heldout_utts: 200,
                min_len: 6,
                max_len: 18,
                vocab_size: model.vocab_size,
                acoustic_dim: model.acoustic_dim,
            },
            corrupt: CorruptSection {
                p: 0.0,
                weights: vec![1.0 / 3.0; 3],
            },
            model: ModelSection {
                hidden: model.hidden,
                kernel: model.kernel,
                unet_depth: model.unet_depth,
                head_layers: model.head_layers,
                head_relu: model.head_relu,
            },
            train: TrainSection {
                variant: train.variant.name().into(),
                steps: train.steps,
                batch_size: train.batch_size,
                base_lr: train.base_lr,
                log_every: train.log_every,
            },
            eval: EvalSection { n_utts: 200 },
            probe: ProbeSection {
                epochs: probe.epochs,
                learning_rate: probe.learning_rate,
                test_fraction: probe.test_fraction,
                lambda: 1.0,
                gamma: 1.0,
            },
            synth: SynthSection {
                speaker: 1,
                text: "1 2 3 4 5".into(),
                durations: String::new(),
            },
            bench: BenchSection {
                lengths: bench.lengths,
                repetitions: bench.repetitions,
                hidden: bench.hidden,
                unet_depth: bench.unet_depth,
            },
        }
    }
}

impl RunConfig {
    pub fn variant(&self) -> Result<Variant> {
        Ok(Variant::parse(&self.train.variant)?)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vocab_size: self.data.vocab_size,
            hidden: self.model.hidden,
            kernel: self.model.kernel,
            unet_depth: self.model.unet_depth,
            acoustic_dim: self.data.acoustic_dim,
            speakers: vec![],
            head_layers: self.model.head_layers,
            head_relu: self.model.head_relu,
            head_layout: HeadLayout::PerSpeaker,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            base_lr: self.train.base_lr,
            seed: self.seed,
            variant: self.variant()?,
            target_speaker: self.data.target_speaker,
            log_every: self.train.log_every,
        })
    }

    /// The corruption stream of a cell depends on the run seed.
    pub fn corruption_spec(&self) -> Result<CorruptionSpec> {
        let w: [f64; 3] = self
            .corrupt
            .weights
            .clone()
            .try_into()
            .map_err(|_| CliError::config("corrupt.weights must list exactly 3 numbers"))?;
        let spec = CorruptionSpec::new(self.corrupt.p, self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xc0ff_ee).with_weights(w);
        spec.validate()?;
        Ok(spec)
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            epochs: self.probe.epochs,
            learning_rate: self.probe.learning_rate,
            test_fraction: self.probe.test_fraction,
            seed: self.seed,
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            lengths: self.bench.lengths.clone(),
            repetitions: self.bench.repetitions,
            seed: self.seed,
            hidden: self.bench.hidden,
            unet_depth: self.bench.unet_depth,
        }
    }

    /// `<variant>_s<S>_t<T>_p<P>_seed<seed>`
    pub fn cell_name(&self) -> String {
        format!(
            "{}_s{}_t{}_p{:.2}_seed{}",
            self.train.variant, self.data.source_utts, self.data.target_utts, self.corrupt.p, self.seed
        )
    }

    fn validate(&self) -> Result<()> {
        self.variant()?;
        if self.data.source_speaker == self.data.target_speaker {
            bail!(CliError::config("data.source_speaker and data.target_speaker must differ"));
        }
        if self.data.target_utts > self.data.target_pool {
            bail!(CliError::config(format!(
                "data.target_utts = {} exceeds data.target_pool = {}",
                self.data.target_utts, self.data.target_pool
            )));
        }
        self.model_config_for(vec![0]).validate()?;
        self.train_config()?.validate()?;
        self.corruption_spec()?;
        Ok(())
    }

    pub fn model_config_for(&self, speakers: Vec<u32>) -> ModelConfig {
        ModelConfig {
            speakers,
            ..self.model_config()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

fn all_keys(table: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let Value::Table(t) = v {
            all_keys(t, &path, out);
        }
        out.push(path);
    }
}

fn nearest_key(defaults: &toml::Table, path: &str) -> String {
    let mut keys = Vec::new();
    all_keys(defaults, "", &mut keys);
    keys.into_iter()
        .min_by_key(|k| (strsim::levenshtein(k, path), k.clone()))
        .unwrap_or_default()
}

/// Path down to the first leaf of an overlay value.
fn leaf_path(mut path: String, mut v: &Value) -> String {
    while let Value::Table(t) = v {
        let Some((k, next)) = t.iter().next() else { break };
        path = format!("{path}.{k}");
        v = next;
    }
    path
}

/// Coerces `new` to the type of `old`, allowing integers where floats are
/// expected.
fn coerce(path: &str, old: &Value, new: Value) -> Result<Value> {
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Array(a), Value::Array(b)) => {
            let Some(proto) = a.first() else {
                return Ok(Value::Array(b));
            };
            b.into_iter()
                .enumerate()
                .map(|(i, v)| coerce(&format!("{path}[{i}]"), proto, v))
                .collect::<Result<Vec<_>>>()
                .map(Value::Array)
        }
        (old, new) if std::mem::discriminant(old) == std::mem::discriminant(&new) => Ok(new),
        (old, new) => bail!(CliError::config(format!(
            "{path}: expected {}, got {} ({new})",
            type_name(old),
            type_name(&new)
        ))),
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table, defaults: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in overlay {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let Some(slot) = base.get_mut(&k) else {
            let full = leaf_path(path, &v);
            bail!(CliError::config(format!(
                "unknown key `{full}` (did you mean `{}`?)",
                nearest_key(defaults, &full)
            )));
        };
        match (slot, v) {
            (Value::Table(b), Value::Table(o)) => merge(b, o, defaults, &path)?,
            (slot, v) => *slot = coerce(&path, slot, v)?,
        }
    }
    Ok(())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn override_table(assignment: &str) -> Result<toml::Table> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!(CliError::config(format!("override `{assignment}` has an empty key")));
    }
    let mut value = parse_override_value(raw.trim());
    for part in key.rsplit('.') {
        let mut t = toml::Table::new();
        t.insert(part.to_string(), value);
        value = Value::Table(t);
    }
    match value {
        Value::Table(t) => Ok(t),
        _ => unreachable!("loop wraps at least once"),
    }
}

/// defaults ← file ← overrides ← `--seed`.
pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let defaults = match Value::try_from(RunConfig::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!("config is a table"),
    };
    let mut merged = defaults.clone();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| CliError::dependency(format!("{e:#}")))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        merge(&mut merged, table, &defaults, "")?;
    }
    for o in overrides {
        merge(&mut merged, override_table(o)?, &defaults, "")?;
    }
    if let Some(s) = seed {
        merged.insert("seed".into(), Value::Integer(s as i64));
    }
    let config: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e| CliError::config(format!("invalid configuration: {e}")))?;
    config.validate()?;
    Ok(config)
}
