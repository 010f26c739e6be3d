//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion.
//!
//! Select criteria with numeric arguments (`cargo test --test acceptance -- 1 3`)
//! or `MHTTS_ACCEPT=1,3`. The process exits zero whenever every selected
//! criterion ran to completion; set `MHTTS_ACCEPT_STRICT=1` to also exit
//! nonzero on a FAIL line.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mhtts_core::autodiff::{check_gradients, layer_norm, GradCheck, Tape, Tensor, Var, LN_EPS};
use mhtts_core::bench::{measure_scaling, BenchConfig, Encoder};
use mhtts_core::corpus::{
    generate_corpus, render_utterance, rule_durations, CerTally, Corpus, CorpusSpec, CorruptionSpec, Corrupter,
    OracleDecoder, Token,
};
use mhtts_core::model::{forward, HeadLayout, Model, ModelConfig, ModelParams};
use mhtts_core::train::{
    diagnose, eval_target_cer, train, ObjectiveWeights, ProbeConfig, TrainConfig, Variant,
};
use mhtts_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SOURCE: u32 = 0;
const TARGET: u32 = 1;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
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

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn corpus(speakers: Vec<u32>, utts: usize, seed: u64) -> Corpus {
    generate_corpus(&CorpusSpec {
        utts_per_speaker: utts,
        min_len: 6,
        max_len: 18,
        speakers,
        vocab_size: 40,
        acoustic_dim: 16,
        seed,
    })
    .unwrap()
}

fn heldout() -> Corpus {
    corpus(vec![SOURCE, TARGET], 200, 9999)
}

// ---------------------------------------------------------------- 1

struct GradTally {
    worst: f64,
    checked: usize,
    skipped: usize,
    cases: usize,
}

impl GradTally {
    fn add(&mut self, r: GradCheck) {
        self.worst = self.worst.max(r.max_rel_error);
        self.checked += r.checked;
        self.skipped += r.skipped;
        self.cases += 1;
    }
}

fn weighted<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Result<Var<'t>> {
    let w = Tensor::randn(&out.shape(), 1.0, &mut rng(seed ^ 0xabc));
    out.mul(&tape.constant(w)).map(|v| v.sum())
}

fn criterion_1() -> Outcome {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut t = GradTally {
        worst: 0.0,
        checked: 0,
        skipped: 0,
        cases: 0,
    };
    let randn = |shape: &[usize], r: &mut ChaCha8Rng| Tensor::randn(shape, 1.0, r);
    for s in 0..20u64 {
        let mut r = rng(s);
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let (a, b, c) = (randn(&[m, k], &mut r), randn(&[k, n], &mut r), randn(&[m, k], &mut r));
        t.add(check_gradients(&[a.clone(), b], H, |tp, v| weighted(tp, v[0].matmul(&v[1])?, s)).unwrap());
        t.add(
            check_gradients(&[a, c], H, |tp, v| {
                let y = v[0].add(&v[1])?.mul(&v[0].sub(&v[1])?)?.scale(-1.3).relu().transpose()?;
                weighted(tp, y, s)
            })
            .unwrap(),
        );
        let (x, g, b) = (randn(&[m, n], &mut r), randn(&[n], &mut r), randn(&[n], &mut r));
        t.add(
            check_gradients(&[x, g, b], H, |tp, v| {
                let y = v[0].mul_row(&v[1])?.add_row(&v[2])?;
                let ln = layer_norm(&y, Some((&v[1], &v[2])), LN_EPS)?.add(&layer_norm(&y, None, LN_EPS)?)?;
                Ok(weighted(tp, ln, s)?.add(&y.mean())?.add(&y.sum())?)
            })
            .unwrap(),
        );
        let (l, ci, co) = (r.gen_range(1..9), r.gen_range(1..4), r.gen_range(1..4));
        let kw = [1, 3, 5][r.gen_range(0..3)];
        let stride = r.gen_range(1..3);
        let (x, w) = (randn(&[l, ci], &mut r), randn(&[co, ci, kw], &mut r));
        t.add(check_gradients(&[x, w], H, |tp, v| weighted(tp, v[0].conv1d_rows(&v[1], stride)?, s)).unwrap());
        let (x, w) = (randn(&[2, 7], &mut r), randn(&[3, 2, 3], &mut r));
        t.add(check_gradients(&[x, w], H, |tp, v| weighted(tp, v[0].conv1d(&v[1], 2)?, s)).unwrap());
        let (a, b) = (randn(&[3, 2], &mut r), randn(&[2, 3], &mut r));
        t.add(
            check_gradients(&[a, b], H, |tp, v| {
                weighted(tp, v[0].upsample2_rows()?.add(&v[1].nn_upsample2()?.transpose()?)?, s)
            })
            .unwrap(),
        );
        let table = randn(&[6, 3], &mut r);
        let ids: Vec<u32> = (0..5).map(|_| r.gen_range(0..6)).collect();
        let index: Vec<usize> = (0..7).map(|_| r.gen_range(0..5)).collect();
        t.add(
            check_gradients(&[table], H, |tp, v| {
                let y = v[0].embedding(&ids)?.gather_rows(index.clone())?.pad_rows(9)?.crop_rows(8)?;
                weighted(tp, y, s)
            })
            .unwrap(),
        );
        let (a, b) = (randn(&[4, 3], &mut r), randn(&[4, 3], &mut r));
        t.add(check_gradients(&[a, b], H, |_, v| v[0].l1_loss(&v[1])).unwrap());

        for (layout, relu) in [(HeadLayout::PerSpeaker, true), (HeadLayout::Shared, false)] {
            let mut config = ModelConfig::tiny(vec![0, 1, 2]).with_layout(layout);
            config.head_relu = relu;
            let params = ModelParams::init(&config, s).unwrap();
            let speaker = r.gen_range(0..3);
            let tokens: Vec<Token> = (0..r.gen_range(1..7)).map(|_| r.gen_range(0..10)).collect();
            let durations = rule_durations(&tokens, speaker);
            let target = render_utterance(&tokens, speaker, config.acoustic_dim).unwrap();
            let inputs: Vec<Tensor> = params.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
            t.add(
                check_gradients(&inputs, H, |tp, v| {
                    let bound = params.rebind(v)?;
                    forward::synthesize(&tokens, &durations, speaker, &bound, &config)?
                        .l1_loss(&tp.constant(target.clone()))
                })
                .unwrap(),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: t.worst < 1e-4 && secs < 60.0 && t.skipped * 100 < t.checked,
        detail: format!(
            "max relative error {:.2e} over {} checks in {} cases, {} kink coordinates skipped, {secs:.1}s",
            t.worst, t.checked, t.cases, t.skipped
        ),
    }
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig::desk(vec![SOURCE, TARGET]);
    let rand_tokens = |n: usize, seed: u64| -> Vec<Token> {
        let mut r = rng(seed);
        (0..n).map(|_| r.gen_range(0..40)).collect()
    };
    let mut notes = Vec::new();

    let stats = |row: &[f64]| {
        let d = row.len() as f64;
        let mean = row.iter().sum::<f64>() / d;
        (mean, row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d)
    };
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for seed in 0..5 {
        let params = ModelParams::init(&config, seed).unwrap();
        for len in [1, 3, 8, 17, 40] {
            let toks = rand_tokens(len, seed * 100 + len as u64);
            let tape = Tape::new();
            let p = params.bind(&tape, false);
            let padded = len.div_ceil(config.block()) * config.block();
            let pre = forward::unet_forward(&p.embedding.embedding(&toks).unwrap().pad_rows(padded).unwrap(), &p.down, &p.up)
                .unwrap()
                .crop_rows(len)
                .unwrap()
                .value();
            let h = forward::encode_text(&toks, &p, &config).unwrap().value();
            for r in 0..len {
                let (_, var_in) = stats(pre.row(r));
                let (mean, var) = stats(h.row(r));
                worst_mean = worst_mean.max(mean.abs());
                worst_var = worst_var.max((var - 1.0 / (1.0 + LN_EPS / var_in)).abs());
            }
        }
    }
    let ln_ok = worst_mean < 1e-9 && worst_var < 1e-6;
    notes.push(format!("LN |mean| {worst_mean:.1e}, variance off its eps-corrected value by {worst_var:.1e}"));

    let model = Model::init(config.clone(), 7).unwrap();
    let mut shapes_ok = true;
    for blocks in 1..4 {
        let l = blocks * config.block();
        let x = Tensor::randn(&[l, config.hidden], 1.0, &mut rng(l as u64));
        shapes_ok &= model.unet_forward(&x).unwrap().shape() == [l, config.hidden];
    }
    for len in 1..30 {
        shapes_ok &= model.encode_text(&rand_tokens(len, 3)).unwrap().values.shape() == [len, config.hidden];
    }
    notes.push(format!("U-Net shapes {}", if shapes_ok { "exact" } else { "WRONG" }));

    let h = model.encode_text(&rand_tokens(6, 4)).unwrap();
    let durations = [3, 0, 1, 2, 0, 4];
    let f = model.length_regulate(&h, &durations).unwrap();
    let mut lr_ok = f.values.rows() == 10;
    let mut row = 0;
    for (t, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            lr_ok &= f.values.row(row) == h.values.row(t);
            row += 1;
        }
    }
    notes.push(format!("regulator {}", if lr_ok { "exact" } else { "WRONG" }));

    let mut local_ok = true;
    for layout in [HeadLayout::PerSpeaker, HeadLayout::Shared] {
        let model = Model::init(config.clone().with_layout(layout), 5).unwrap();
        let h = model.encode_text(&rand_tokens(9, 6)).unwrap();
        let base = model.length_regulate(&h, &[1; 9]).unwrap();
        let out = model.head_forward(TARGET, &base).unwrap();
        for t in [0, 4, 8] {
            let mut changed = base.clone();
            for j in 0..config.hidden {
                let v = changed.values.at(&[t, j]);
                changed.values.set(&[t, j], 0.5 - v);
            }
            let out2 = model.head_forward(TARGET, &changed).unwrap();
            for r in 0..9 {
                local_ok &= (r == t) != (out.row(r) == out2.row(r));
            }
        }
    }
    notes.push(format!("head locality {}", if local_ok { "exact" } else { "WRONG" }));

    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: ln_ok && shapes_ok && lr_ok && local_ok && secs < 60.0,
        detail: format!("{}, {secs:.1}s", notes.join(", ")),
    }
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut exhaustive_ok = true;
    let mut layer: Vec<Vec<Token>> = vec![vec![]];
    let mut count = 0;
    for _ in 0..4 {
        layer = layer
            .iter()
            .flat_map(|s| {
                (0..10).map(move |k| {
                    let mut t = s.clone();
                    t.push(k);
                    t
                })
            })
            .collect();
        for speaker in 0..4 {
            let decoder = OracleDecoder::new(10, 16);
            for s in &layer {
                let frames = render_utterance(s, speaker, 16).unwrap();
                exhaustive_ok &= &decoder.decode(&frames, speaker).unwrap() == s;
                count += 1;
            }
        }
    }
    let mut random_ok = true;
    let decoder = OracleDecoder::new(40, 16);
    let mut r = rng(77);
    for _ in 0..1000 {
        let len = r.gen_range(5..=120);
        let speaker = r.gen_range(0..8);
        let s: Vec<Token> = (0..len).map(|_| r.gen_range(0..40)).collect();
        random_ok &= decoder.decode(&render_utterance(&s, speaker, 16).unwrap(), speaker).unwrap() == s;
    }

    let reference: Vec<Vec<Token>> = (0..10_000).map(|_| (0..10).map(|_| r.gen_range(0..40)).collect()).collect();
    let mut mc_ok = true;
    let mut mc = Vec::new();
    for (i, p) in [0.1, 0.3, 0.5].into_iter().enumerate() {
        let mut c = Corrupter::new(CorruptionSpec::new(p, 100 + i as u64), 40).unwrap();
        let mut tally = CerTally::default();
        for s in &reference {
            tally.add(s, &c.corrupt(s));
        }
        let mut isolated = Corrupter::new(CorruptionSpec::new(p, 200 + i as u64), 40).unwrap();
        let mut single = CerTally::default();
        for k in 0..100_000u32 {
            let s = [k % 40];
            single.add(&s, &isolated.corrupt(&s));
        }
        let rate = tally.rate();
        mc_ok &= (rate - p).abs() <= 0.02;
        mc.push(format!(
            "P={p}: E[CER] {rate:.4} ({} events/char; isolated chars {:.4})",
            c.operations() as f64 / tally.reference_len as f64,
            single.rate()
        ));
    }
    Outcome {
        pass: exhaustive_ok && random_ok && mc_ok,
        detail: format!(
            "exhaustive {count} round trips {}, 1000 random {}, {}",
            if exhaustive_ok { "ok" } else { "FAILED" },
            if random_ok { "ok" } else { "FAILED" },
            mc.join("; ")
        ),
    }
}

// ---------------------------------------------------------------- 4 and 6

fn clean_models() -> Vec<Model> {
    SEEDS
        .iter()
        .map(|&seed| {
            let data = [corpus(vec![SOURCE], 2000, 100 + seed), corpus(vec![TARGET], 2000, 200 + seed)];
            train(&TrainConfig::desk(Variant::MultiHead, TARGET, seed), &data, &ModelConfig::desk(vec![]))
                .unwrap()
                .model
        })
        .collect()
}

fn criterion_4(models: &[Model]) -> Outcome {
    let held = heldout();
    let mut pass = true;
    let mut parts = Vec::new();
    for speaker in [SOURCE, TARGET] {
        let cers: Vec<f64> = models
            .iter()
            .map(|m| eval_target_cer(m, &held.utterances, speaker, 200).unwrap().cer)
            .collect();
        let med = median(cers.clone());
        pass &= med < 0.05;
        parts.push(format!("speaker {speaker}: median CER {med:.4} (seeds {cers:.4?})"));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_6(models: &[Model]) -> Outcome {
    let held = heldout();
    let mut hidden = Vec::new();
    let mut heads = Vec::new();
    let mut chance = 0.0;
    for (m, &seed) in models.iter().zip(&SEEDS) {
        let r = diagnose(m, &held.utterances, 200, ObjectiveWeights::default(), &ProbeConfig::new(seed)).unwrap();
        hidden.push(r.probe_hidden);
        heads.push(r.probe_heads);
        chance = r.chance;
    }
    let (h, g) = (median(hidden), median(heads));
    Outcome {
        pass: h - chance < 0.5 * (g - chance),
        detail: format!("median probe accuracy on h {h:.3}, on head outputs {g:.3}, chance {chance:.3}"),
    }
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let held = heldout();
    let ps = [0.1, 0.3, 0.5];
    let mut table = String::new();
    let mut pass = true;
    let mut failures = Vec::new();
    for t in [200usize, 500] {
        let mut mh = Vec::new();
        let mut fs = Vec::new();
        for &p in &ps {
            let mut cells = [Vec::new(), Vec::new()];
            for &seed in &SEEDS {
                let source = corpus(vec![SOURCE], 2000, 1000 + seed);
                let target = corpus(vec![TARGET], t, 2000 + seed)
                    .corrupted(&CorruptionSpec::new(p, 3000 + seed))
                    .unwrap();
                let data = [source, target];
                for (i, v) in [Variant::MultiHead, Variant::SingleCorpus].into_iter().enumerate() {
                    let out = train(&TrainConfig::desk(v, TARGET, seed), &data, &ModelConfig::desk(vec![])).unwrap();
                    cells[i].push(eval_target_cer(&out.model, &held.utterances, TARGET, 200).unwrap().cer);
                }
            }
            let (a, b) = (median(cells[0].clone()), median(cells[1].clone()));
            write!(table, " T={t},P={p}: MH {a:.4} FS {b:.4};").unwrap();
            mh.push(a);
            fs.push(b);
        }
        for (i, &p) in ps.iter().enumerate() {
            if mh[i] >= fs[i] {
                failures.push(format!("(a) T={t} P={p}"));
            }
        }
        if mh[2] > 0.5 * fs[2] {
            failures.push(format!("(b) T={t}"));
        }
        if fs.windows(2).any(|w| w[1] < w[0]) {
            failures.push(format!("(c) T={t}"));
        }
        if mh[2] > 3.0 * mh[0] {
            failures.push(format!("(d) T={t}"));
        }
    }
    pass &= failures.is_empty();
    Outcome {
        pass,
        detail: format!(
            "median target CER:{table} {}",
            if failures.is_empty() {
                "orderings (a)-(d) hold".to_string()
            } else {
                format!("violated: {}", failures.join(", "))
            }
        ),
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let config = BenchConfig::desk(0);
    let unet = measure_scaling(Encoder::Unet, &config).unwrap();
    let attn = measure_scaling(Encoder::Attention, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = (0.8..=1.3).contains(&unet.time_slope)
        && (1.7..=2.3).contains(&attn.time_slope)
        && (unet.flop_slope - 1.0).abs() <= 0.05
        && (attn.flop_slope - 2.0).abs() <= 0.1
        && secs < 600.0;
    Outcome {
        pass,
        detail: format!(
            "L {:?}, d {}: U-Net time slope {:.3}, FLOP slope {:.3}; attention time slope {:.3}, FLOP slope {:.3}; {secs:.0}s",
            config.lengths, config.hidden, unet.time_slope, unet.flop_slope, attn.time_slope, attn.flop_slope
        ),
    }
}

// ---------------------------------------------------------------- 8

const PIPELINE: &str = "\
seed = 5
[data]
source_utts = 120
target_pool = 80
target_utts = 60
heldout_utts = 60
[corrupt]
p = 0.3
[train]
steps = 150
log_every = 50
[eval]
n_utts = 60
[bench]
lengths = [256, 512, 1024, 2048]
repetitions = 5
";

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("run.toml"), PIPELINE).unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["--config", "run.toml"];
        args.extend_from_slice(extra);
        let o = Command::new(env!("CARGO_BIN_EXE_mhtts"))
            .current_dir(dir)
            .env_remove("MHTTS_THREADS")
            .args(&args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["gen-data"]);
    for v in ["multi-head", "single-corpus"] {
        let set = format!("train.variant={v}");
        for c in ["corrupt", "train", "eval-cer"] {
            run(&["--set", &set, c]);
        }
    }
    run(&["report"]);
    run(&["bench"]);
}

fn criterion_8() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        pipeline(d.path());
    }
    let mut files = BTreeSet::new();
    for cell in ["multi-head_s120_t60_p0.30_seed5", "single-corpus_s120_t60_p0.30_seed5"] {
        for f in ["checkpoint.bin", "cer.json", "metrics.tsv", "target.tsv", "target.frames"] {
            files.insert(format!("runs/cells/{cell}/{f}"));
        }
    }
    files.insert("runs/report.tsv".into());
    files.insert("runs/bench/flops.tsv".into());
    for stem in ["source", "target", "heldout"] {
        files.insert(format!("runs/data/{stem}.tsv"));
        files.insert(format!("runs/data/{stem}.frames"));
    }
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            a != b
        })
        .collect();
    Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} artifacts byte-identical across two pipeline runs", files.len())
        } else {
            format!("differing: {differing:?}")
        },
    }
}

// ----------------------------------------------------------------

fn selection() -> BTreeSet<u32> {
    let mut picked = BTreeSet::new();
    let mut filtered = false;
    let env = std::env::var("MHTTS_ACCEPT").unwrap_or_default();
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    for a in env.split(',').map(str::trim).filter(|s| !s.is_empty()).chain(args.iter().map(String::as_str)) {
        filtered = true;
        if let Ok(n) = a.parse::<u32>() {
            picked.insert(n);
        }
    }
    if filtered {
        picked
    } else {
        (1..=8).collect()
    }
}

fn main() {
    let selected = selection();
    let strict = std::env::var("MHTTS_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let mut clean: Option<Vec<Model>> = None;
    let mut failed = false;
    let mut crashed = false;
    for n in selected {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(clean.get_or_insert_with(clean_models)),
            5 => criterion_5(),
            6 => criterion_6(clean.get_or_insert_with(clean_models)),
            7 => criterion_7(),
            8 => criterion_8(),
            _ => Outcome {
                pass: false,
                detail: "no such criterion".into(),
            },
        }));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(o) => {
                failed |= !o.pass;
                println!(
                    "criterion {n}: {} [{secs:.0}s] {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
            }
            Err(_) => {
                crashed = true;
                println!("criterion {n}: FAIL [{secs:.0}s] aborted by a panic");
            }
        }
    }
    if crashed || (strict && failed) {
        std::process::exit(1);
    }
}
