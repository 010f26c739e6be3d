//! Central finite-difference oracle for tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)`
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates within `h` of a kink (ReLU, |·|), where the one-sided
    /// slopes disagree and central differences are meaningless.
    pub skipped: usize,
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences with step `h`, coordinate by coordinate.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value();
        if v.len() != 1 {
            return Err(Error::contract("gradient check needs a scalar function"));
        }
        Ok(v.data()[0])
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| {
            grads
                .get(*v)
                .map_or_else(|| vec![0.0; x.len()], Tensor::into_data)
        })
        .collect();

    let mut xs = inputs.to_vec();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..xs.len() {
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            let f0 = eval(&xs)?;
            xs[i].data_mut()[j] = orig + h;
            let fp = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let fm = eval(&xs)?;
            xs[i].data_mut()[j] = orig;

            let forward = (fp - f0) / h;
            let backward = (f0 - fm) / h;
            let numeric = (fp - fm) / (2.0 * h);
            // Smooth functions have one-sided slopes agreeing to O(h).
            if (forward - backward).abs() > 1e-3 * forward.abs().max(backward.abs()).max(1.0) {
                result.skipped += 1;
                continue;
            }
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            result.max_rel_error = result.max_rel_error.max(err);
            result.checked += 1;
        }
    }
    Ok(result)
}
