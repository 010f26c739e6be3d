//! Linear speaker probe: multinomial logistic regression trained by
//! per-sample SGD on standardized features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{rule_durations, Utterance};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Share of each speaker's samples held out for scoring.
    pub test_fraction: f64,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.1,
            test_fraction: 0.3,
            seed,
        }
    }
}

const MIN_PER_CLASS: usize = 50;

/// Held-out accuracy of a linear classifier predicting `labels` from
/// `samples`. Labels are arbitrary ids; chance is `1 / #distinct labels`.
pub fn speaker_probe(samples: &[Vec<f64>], labels: &[u32], config: &ProbeConfig) -> Result<f64> {
    if samples.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} samples for {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::contract("speaker probe needs at least two speakers"));
    }
    let dim = samples[0].len();
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return Err(Error::contract("probe samples must share one non-zero dimension"));
    }
    if !(0.0..1.0).contains(&config.test_fraction) || config.test_fraction == 0.0 {
        return Err(Error::contract("probe test fraction must lie in (0, 1)"));
    }

    // Stratified seeded split.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, &c) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < MIN_PER_CLASS {
            return Err(Error::contract(format!(
                "speaker {c} has {} probe samples, need at least {MIN_PER_CLASS}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * config.test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend(idx[..n_test].iter().map(|&i| (i, ci)));
        train.extend(idx[n_test..].iter().map(|&i| (i, ci)));
    }

    let mut mean = vec![0.0; dim];
    for &(i, _) in &train {
        for (m, x) in mean.iter_mut().zip(&samples[i]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut std = vec![0.0; dim];
    for &(i, _) in &train {
        for ((s, m), x) in std.iter_mut().zip(&mean).zip(&samples[i]) {
            *s += (x - m) * (x - m);
        }
    }
    std.iter_mut()
        .for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-8));
    let standardize = |x: &[f64]| -> Vec<f64> {
        x.iter().zip(&mean).zip(&std).map(|((x, m), s)| (x - m) / s).collect()
    };
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| standardize(s)).collect();

    let k = classes.len();
    let mut w = vec![0.0; k * dim];
    let mut b = vec![0.0; k];
    let mut logits = vec![0.0; k];
    let scores = |x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]| {
        for c in 0..k {
            out[c] = b[c] + w[c * dim..(c + 1) * dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    };
    let mut order = train.clone();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &(i, y) in &order {
            let x = &xs[i];
            scores(x, &w, &b, &mut logits);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for c in 0..k {
                let p = (logits[c] - max).exp() / z;
                let g = p - f64::from(u8::from(c == y));
                b[c] -= config.learning_rate * g;
                for (wj, xj) in w[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *wj -= config.learning_rate * g * xj;
                }
            }
        }
    }
    let correct = test
        .iter()
        .filter(|&&(i, y)| {
            scores(&xs[i], &w, &b, &mut logits);
            let mut best = 0;
            for c in 1..k {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn mean_rows(t: &crate::autodiff::Tensor) -> Vec<f64> {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= t.rows() as f64);
    out
}

/// Mean-pooled token-level encoder output for each utterance, labelled by
/// speaker. Utterances of speakers the model does not serve are skipped.
pub fn hidden_features(model: &Model, utterances: &[Utterance]) -> Result<(Vec<Vec<f64>>, Vec<u32>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for u in utterances.iter().filter(|u| model.config.speakers.contains(&u.speaker)) {
        xs.push(mean_rows(&model.encode_text(&u.reference)?.values));
        ys.push(u.speaker);
    }
    Ok((xs, ys))
}

/// Mean-pooled head output for each utterance.
pub fn head_features(model: &Model, utterances: &[Utterance]) -> Result<(Vec<Vec<f64>>, Vec<u32>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for u in utterances.iter().filter(|u| model.config.speakers.contains(&u.speaker)) {
        let d = rule_durations(&u.reference, u.speaker);
        xs.push(mean_rows(&model.synthesize(&u.reference, &d, u.speaker)?));
        ys.push(u.speaker);
    }
    Ok((xs, ys))
}
