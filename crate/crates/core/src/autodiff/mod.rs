//! Dense tensors, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_gradients, GradCheck};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Epsilon used by every layer norm in the model.
pub const LN_EPS: f64 = 1e-5;

/// Layer norm over the last axis with an optional `(gain, bias)` affine.
pub fn layer_norm<'t>(
    x: &Var<'t>,
    affine: Option<(&Var<'t>, &Var<'t>)>,
    eps: f64,
) -> Result<Var<'t>> {
    let y = x.layer_norm(eps)?;
    match affine {
        Some((gain, bias)) => y.mul_row(gain)?.add_row(bias),
        None => Ok(y),
    }
}
