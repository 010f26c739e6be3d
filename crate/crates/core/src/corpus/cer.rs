use crate::error::{Error, Result};

use super::Token;

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn edit_distance(a: &[Token], b: &[Token]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate: edit distance over reference length.
pub fn cer(reference: &[Token], hypothesis: &[Token]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::contract("character error rate needs a non-empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Edits and reference characters pooled over many utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CerTally {
    pub edits: usize,
    pub reference_len: usize,
}

impl CerTally {
    pub fn add(&mut self, reference: &[Token], hypothesis: &[Token]) {
        self.edits += edit_distance(reference, hypothesis);
        self.reference_len += reference.len();
    }

    pub fn rate(&self) -> f64 {
        if self.reference_len == 0 {
            return 0.0;
        }
        self.edits as f64 / self.reference_len as f64
    }
}
