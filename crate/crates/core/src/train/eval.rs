use serde::{Deserialize, Serialize};

use crate::corpus::{rule_durations, CerTally, OracleDecoder, Utterance};
use crate::error::{Error, Result};
use crate::model::Model;

/// Pooled character error rate of synthesized speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CerResult {
    /// Total edits over total reference length, capped at 1.
    pub cer: f64,
    /// Uncapped rate.
    pub raw: f64,
    pub edits: usize,
    pub reference_len: usize,
    pub utterances: usize,
    /// Set when the output is unrecognizable: the rate hit the cap or the
    /// model produced non-finite frames.
    pub unrecognizable: bool,
}

/// Synthesizes the clean reference of up to `n_utts` held-out utterances of
/// `speaker` with rule durations, decodes each with the oracle and pools the
/// edits.
pub fn eval_target_cer(model: &Model, heldout: &[Utterance], speaker: u32, n_utts: usize) -> Result<CerResult> {
    model.config.speaker_slot(speaker)?;
    let decoder = OracleDecoder::new(model.config.vocab_size, model.config.acoustic_dim);
    let mut tally = CerTally::default();
    let mut count = 0;
    let mut non_finite = false;
    for u in heldout.iter().filter(|u| u.speaker == speaker).take(n_utts) {
        let durations = rule_durations(&u.reference, speaker);
        let frames = model.synthesize(&u.reference, &durations, speaker)?;
        non_finite |= frames.data().iter().any(|v| !v.is_finite());
        let hyp = decoder.decode(&frames, speaker)?;
        tally.add(&u.reference, &hyp);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate(format!("no held-out utterances for speaker {speaker}")));
    }
    let raw = tally.rate();
    Ok(CerResult {
        cer: raw.min(1.0),
        raw,
        edits: tally.edits,
        reference_len: tally.reference_len,
        utterances: count,
        unrecognizable: non_finite || raw >= 1.0,
    })
}

/// Mean per-utterance L1 between synthesized and reference frames.
pub fn heldout_l1(model: &Model, heldout: &[Utterance], speaker: u32, n_utts: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for u in heldout.iter().filter(|u| u.speaker == speaker).take(n_utts) {
        let durations = rule_durations(&u.reference, speaker);
        let out = model.synthesize(&u.reference, &durations, speaker)?;
        let diff: f64 = out
            .data()
            .iter()
            .zip(u.frames.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        sum += diff / out.len() as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Degenerate(format!("no held-out utterances for speaker {speaker}")));
    }
    Ok(sum / n as f64)
}
