use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mhtts_core::bench::run_bench;
use mhtts_core::container;
use mhtts_core::corpus::{
    generate_corpus, manifest_path, parse_tokens, read_corpus, rule_durations, write_corpus, Corpus, CorpusSpec,
};
use mhtts_core::model::{load_checkpoint, save_checkpoint, Model};
use mhtts_core::train::{
    diagnose, eval_target_cer, format_report_table, CerResult, MetricRow, ObjectiveWeights, ReportRow, Trainer,
    Variant,
};

use crate::config::RunConfig;
use crate::error::CliError;

/// Output tree rooted at `--out`.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn cells(&self) -> PathBuf {
        self.root.join("cells")
    }

    pub fn cell(&self, config: &RunConfig) -> PathBuf {
        self.cells().join(config.cell_name())
    }

    pub fn bench(&self) -> PathBuf {
        self.root.join("bench")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.tsv")
    }
}

/// Per-cell evaluation record; the report aggregates these.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellCer {
    variant: Variant,
    source_utts: usize,
    target_utts: usize,
    p: f64,
    seed: u64,
    speaker: u32,
    result: CerResult,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    container::write_atomic(path, bytes)?;
    Ok(())
}

fn snapshot(dir: &Path, config: &RunConfig) -> Result<()> {
    write_file(&dir.join("config.toml"), config.to_toml().as_bytes())
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!(CliError::dependency(format!(
            "{} not found; run `mhtts {producer}` first",
            path.display()
        )));
    }
    Ok(())
}

fn load_corpus(dir: &Path, stem: &str, producer: &str) -> Result<Corpus> {
    require(&manifest_path(dir, stem), producer)?;
    read_corpus(dir, stem).with_context(|| format!("reading corpus {stem} in {}", dir.display()))
}

fn load_model(cell: &Path) -> Result<Model> {
    let path = cell.join("checkpoint.bin");
    require(&path, "train")?;
    let (params, config) = load_checkpoint(&path)?;
    Ok(Model::new(config, params))
}

pub fn gen_data(layout: &Layout, config: &RunConfig) -> Result<()> {
    let d = &config.data;
    let spec = |speakers: Vec<u32>, utts, seed| CorpusSpec {
        utts_per_speaker: utts,
        min_len: d.min_len,
        max_len: d.max_len,
        speakers,
        vocab_size: d.vocab_size,
        acoustic_dim: d.acoustic_dim,
        seed,
    };
    let dir = layout.data();
    let corpora = [
        ("source", spec(vec![d.source_speaker], d.source_utts, d.seed)),
        ("target", spec(vec![d.target_speaker], d.target_pool, d.seed.wrapping_add(1))),
        (
            "heldout",
            spec(vec![d.source_speaker, d.target_speaker], d.heldout_utts, d.seed.wrapping_add(2)),
        ),
    ];
    for (stem, spec) in corpora {
        let corpus = generate_corpus(&spec)?;
        write_corpus(&dir, stem, &corpus)?;
        eprintln!("wrote {} ({} utterances)", manifest_path(&dir, stem).display(), corpus.len());
    }
    snapshot(&dir, config)
}

pub fn corrupt(layout: &Layout, config: &RunConfig) -> Result<()> {
    let target = load_corpus(&layout.data(), "target", "gen-data")?;
    let available = target.size_of(config.data.target_speaker);
    if available < config.data.target_utts {
        bail!(CliError::config(format!(
            "data.target_utts = {} but the target pool has {available}",
            config.data.target_utts
        )));
    }
    let corrupted = target
        .truncated(config.data.target_utts)
        .corrupted(&config.corruption_spec()?)?;
    let cell = layout.cell(config);
    write_corpus(&cell, "target", &corrupted)?;
    snapshot(&cell, config)?;
    eprintln!("wrote {}", manifest_path(&cell, "target").display());
    Ok(())
}

pub fn train(layout: &Layout, config: &RunConfig) -> Result<()> {
    let cell = layout.cell(config);
    let variant = config.variant()?;
    let target = load_corpus(&cell, "target", "corrupt")?;
    let mut corpora = Vec::new();
    if variant != Variant::SingleCorpus {
        let source = load_corpus(&layout.data(), "source", "gen-data")?;
        let available = source.size_of(config.data.source_speaker);
        if available < config.data.source_utts {
            bail!(CliError::config(format!(
                "data.source_utts = {} but the source corpus has {available}",
                config.data.source_utts
            )));
        }
        corpora.push(source.truncated(config.data.source_utts));
    }
    corpora.push(target);

    let tc = config.train_config()?;
    let mut trainer = Trainer::new(&tc, &corpora, &config.model_config())?;
    eprintln!(
        "training {} on {} utterances for {} steps",
        variant,
        trainer.pool_size(),
        tc.steps
    );
    while trainer.step_count() < tc.steps {
        trainer.run_until(trainer.step_count() + tc.log_every)?;
        if let Some(row) = trainer.metrics().last() {
            eprintln!("step {}\tloss {:.6}\tlr {:.3e}", row.step, row.mean_loss(), row.lr);
        }
    }
    let outcome = trainer.finish()?;
    let model = &outcome.model;
    let mut metrics = MetricRow::header(&model.config.speakers);
    metrics.push('\n');
    for row in &outcome.metrics {
        metrics.push_str(&row.to_line());
        metrics.push('\n');
    }
    write_file(&cell.join("metrics.tsv"), metrics.as_bytes())?;
    save_checkpoint(&model.params, &model.config, &cell.join("checkpoint.bin"))?;
    snapshot(&cell, config)?;
    eprintln!("wrote {}", cell.join("checkpoint.bin").display());
    Ok(())
}

pub fn synth(layout: &Layout, config: &RunConfig) -> Result<()> {
    let cell = layout.cell(config);
    let model = load_model(&cell)?;
    let speaker = config.synth.speaker;
    let tokens = parse_tokens(&config.synth.text).context("synth.text")?;
    let durations = if config.synth.durations.trim().is_empty() {
        rule_durations(&tokens, speaker)
    } else {
        config
            .synth
            .durations
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| CliError::config(format!("synth.durations: bad duration {t:?}"))))
            .collect::<Result<Vec<_>, _>>()?
    };
    let frames = model.synthesize(&tokens, &durations, speaker)?;
    let meta = serde_json::json!({
        "kind": "synth",
        "speaker": speaker,
        "tokens": tokens,
        "durations": durations,
    });
    let path = cell.join(format!("synth_s{speaker}.frames"));
    container::write(&path, &meta, &[("frames".to_string(), &frames)])?;
    println!("{} frames x {} dims -> {}", frames.rows(), frames.cols(), path.display());
    Ok(())
}

pub fn eval_cer(layout: &Layout, config: &RunConfig) -> Result<()> {
    let cell = layout.cell(config);
    let model = load_model(&cell)?;
    let heldout = load_corpus(&layout.data(), "heldout", "gen-data")?;
    let speaker = config.data.target_speaker;
    let result = eval_target_cer(&model, &heldout.utterances, speaker, config.eval.n_utts)?;
    let record = CellCer {
        variant: config.variant()?,
        source_utts: config.data.source_utts,
        target_utts: config.data.target_utts,
        p: config.corrupt.p,
        seed: config.seed,
        speaker,
        result,
    };
    let json = serde_json::to_string_pretty(&record)? + "\n";
    write_file(&cell.join("cer.json"), json.as_bytes())?;
    println!(
        "CER {:.4}{} over {} utterances ({} edits / {} characters)",
        result.cer,
        if result.unrecognizable { "*" } else { "" },
        result.utterances,
        result.edits,
        result.reference_len
    );
    Ok(())
}

pub fn probe(layout: &Layout, config: &RunConfig) -> Result<()> {
    let cell = layout.cell(config);
    let model = load_model(&cell)?;
    let heldout = load_corpus(&layout.data(), "heldout", "gen-data")?;
    let weights = ObjectiveWeights {
        lambda: config.probe.lambda,
        gamma: config.probe.gamma,
    };
    let report = diagnose(&model, &heldout.utterances, config.eval.n_utts, weights, &config.probe_config())?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_file(&cell.join("probe.json"), json.as_bytes())?;
    println!(
        "probe accuracy: hidden {:.3}, heads {:.3}, chance {:.3}; disentangled: {}",
        report.probe_hidden,
        report.probe_heads,
        report.chance,
        report.disentangled()
    );
    Ok(())
}

pub fn bench(layout: &Layout, config: &RunConfig) -> Result<()> {
    let report = run_bench(&config.bench_config())?;
    let dir = layout.bench();
    write_file(&dir.join("bench.tsv"), report.to_table().as_bytes())?;
    write_file(&dir.join("flops.tsv"), report.flop_table().as_bytes())?;
    write_file(&dir.join("summary.txt"), report.summary().as_bytes())?;
    snapshot(&dir, config)?;
    print!("{}", report.summary());
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn report(layout: &Layout) -> Result<()> {
    let dir = layout.cells();
    require(&dir, "eval-cer")?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path().join("cer.json")))
        .filter(|p| p.exists())
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!(CliError::dependency(format!(
            "no cer.json under {}; run `mhtts eval-cer` first",
            dir.display()
        )));
    }
    let mut groups: BTreeMap<(usize, usize, String, &'static str), Vec<CellCer>> = BTreeMap::new();
    for path in entries {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let cell: CellCer =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let key = (cell.source_utts, cell.target_utts, format!("{:.4}", cell.p), cell.variant.name());
        groups.entry(key).or_default().push(cell);
    }
    let rows: Vec<ReportRow> = groups
        .into_values()
        .map(|cells| {
            let flagged = cells.iter().filter(|c| c.result.unrecognizable).count();
            ReportRow {
                source_utts: cells[0].source_utts,
                target_utts: cells[0].target_utts,
                p: cells[0].p,
                variant: cells[0].variant,
                cer: median(cells.iter().map(|c| c.result.cer).collect()),
                unrecognizable: 2 * flagged > cells.len(),
            }
        })
        .collect();
    let table = format_report_table(&rows);
    write_file(&layout.report(), table.as_bytes())?;
    print!("{table}");
    Ok(())
}
