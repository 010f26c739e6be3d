//! Proxies for the three terms of the disentanglement objective
//! `mean_i [ −λ·I(h_i; speaker) + γ·I(h_i; A_i) + I(G_i(h_i); A_i) ]`.
//! None of them is optimized; they are reported after training.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::eval::{eval_target_cer, heldout_l1, CerResult};
use super::probe::{head_features, hidden_features, speaker_probe, ProbeConfig};
use crate::corpus::{rule_durations, Utterance};
use crate::error::{Error, Result};
use crate::model::{HiddenStage, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.gamma < 0.0 || !self.lambda.is_finite() || !self.gamma.is_finite() {
            return Err(Error::Config("objective weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerDiagnostics {
    pub speaker: u32,
    /// Held-out reconstruction L1; its negation stands in for I(G(h); A).
    pub reconstruction_l1: f64,
    /// Held-out R² of a ridge readout from frame-level h to the true frames,
    /// standing in for I(h; A).
    pub readout_r2: f64,
    pub cer: CerResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub weights: ObjectiveWeights,
    pub chance: f64,
    /// Probe accuracy on mean-pooled h; stands in for I(h; speaker).
    pub probe_hidden: f64,
    /// Probe accuracy on mean-pooled head outputs (control).
    pub probe_heads: f64,
    pub speakers: Vec<SpeakerDiagnostics>,
    /// `mean_i [ −L1_i + γ·R²_i ] − λ·(probe_hidden − chance)`
    pub objective_proxy: f64,
}

impl DiagnosticsReport {
    /// Probe excess over chance on h is under half of that on head outputs.
    pub fn disentangled(&self) -> bool {
        self.probe_hidden - self.chance < 0.5 * (self.probe_heads - self.chance)
    }
}

/// Held-out R² of ridge regression (penalty `alpha`) from regulated h
/// frames to acoustic frames. Utterances alternate between fit and score.
pub fn ridge_readout_r2(model: &Model, heldout: &[Utterance], speaker: u32, alpha: f64) -> Result<f64> {
    let mut fit = (Vec::new(), Vec::new());
    let mut score = (Vec::new(), Vec::new());
    for (n, u) in heldout.iter().filter(|u| u.speaker == speaker).enumerate() {
        let h = model.encode_text(&u.reference)?;
        debug_assert_eq!(h.stage, HiddenStage::Text);
        let frames = model.length_regulate(&h, &rule_durations(&u.reference, speaker))?;
        let dst = if n % 2 == 0 { &mut fit } else { &mut score };
        for r in 0..frames.values.rows() {
            dst.0.push(frames.values.row(r).to_vec());
            dst.1.push(u.frames.row(r).to_vec());
        }
    }
    if fit.0.is_empty() || score.0.is_empty() {
        return Err(Error::Degenerate(format!(
            "too few held-out utterances of speaker {speaker} for a readout"
        )));
    }
    let d_in = fit.0[0].len() + 1;
    let d_out = fit.1[0].len();
    let design = |rows: &[Vec<f64>]| {
        DMatrix::from_fn(rows.len(), d_in, |i, j| if j + 1 == d_in { 1.0 } else { rows[i][j] })
    };
    let x = design(&fit.0);
    let y = DMatrix::from_fn(fit.1.len(), d_out, |i, j| fit.1[i][j]);
    let mut gram = x.transpose() * &x;
    for j in 0..d_in - 1 {
        gram[(j, j)] += alpha;
    }
    let rhs = x.transpose() * &y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Degenerate("readout normal equations are singular".into()))?;
    let beta = chol.solve(&rhs);

    let xt = design(&score.0);
    let yt = DMatrix::from_fn(score.1.len(), d_out, |i, j| score.1[i][j]);
    let pred = xt * beta;
    let mean: DVector<f64> = DVector::from_fn(d_out, |j, _| yt.column(j).mean());
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..yt.nrows() {
        for j in 0..d_out {
            ss_res += (yt[(i, j)] - pred[(i, j)]).powi(2);
            ss_tot += (yt[(i, j)] - mean[j]).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::Degenerate("held-out frames have zero variance".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Full report over held-out utterances of every speaker the model serves.
pub fn diagnose(
    model: &Model,
    heldout: &[Utterance],
    n_utts: usize,
    weights: ObjectiveWeights,
    probe: &ProbeConfig,
) -> Result<DiagnosticsReport> {
    weights.validate()?;
    let mut speakers = Vec::new();
    for &s in &model.config.speakers {
        speakers.push(SpeakerDiagnostics {
            speaker: s,
            reconstruction_l1: heldout_l1(model, heldout, s, n_utts)?,
            readout_r2: ridge_readout_r2(model, heldout, s, 1e-3)?,
            cer: eval_target_cer(model, heldout, s, n_utts)?,
        });
    }
    let (hx, hy) = hidden_features(model, heldout)?;
    let (gx, gy) = head_features(model, heldout)?;
    let probe_hidden = speaker_probe(&hx, &hy, probe)?;
    let probe_heads = speaker_probe(&gx, &gy, probe)?;
    let chance = 1.0 / model.config.num_speakers() as f64;
    let recon: f64 = speakers
        .iter()
        .map(|s| -s.reconstruction_l1 + weights.gamma * s.readout_r2)
        .sum::<f64>()
        / speakers.len() as f64;
    Ok(DiagnosticsReport {
        weights,
        chance,
        probe_hidden,
        probe_heads,
        objective_proxy: recon - weights.lambda * (probe_hidden - chance),
        speakers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_validated() {
        assert!(ObjectiveWeights::default().validate().is_ok());
        assert!(ObjectiveWeights { lambda: -1.0, gamma: 1.0 }.validate().is_err());
    }
}
