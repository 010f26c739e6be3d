//! Forward passes on a tape. The same code serves training (trainable
//! leaves) and inference (constant leaves).

use super::config::{HeadLayout, ModelConfig};
use super::params::{BoundHead, BoundParams};
use crate::autodiff::{layer_norm, Var, LN_EPS};
use crate::corpus::Token;
use crate::error::{Error, Result};

/// Down path of stride-2 convolutions, up path of ×2 upsampling and stride-1
/// convolutions, each up level adding the matching down level's output.
/// Width stays constant; input length must be a multiple of `2^M`.
pub fn unet_forward<'t>(x: &Var<'t>, down: &[Var<'t>], up: &[Var<'t>]) -> Result<Var<'t>> {
    if down.len() != up.len() || down.is_empty() {
        return Err(Error::contract("U-Net needs M ≥ 1 down and up levels"));
    }
    let depth = down.len();
    let rows = x.shape()[0];
    if rows % (1 << depth) != 0 {
        return Err(Error::contract(format!(
            "U-Net input length {rows} is not a multiple of 2^{depth}"
        )));
    }
    let mut skips = Vec::with_capacity(depth + 1);
    skips.push(*x);
    let mut cur = *x;
    for w in down {
        cur = cur.conv1d_rows(w, 2)?.relu();
        skips.push(cur);
    }
    for level in (0..depth).rev() {
        cur = cur
            .upsample2_rows()?
            .conv1d_rows(&up[level], 1)?
            .relu()
            .add(&skips[level])?;
    }
    Ok(cur)
}

/// Embedding, zero-padded U-Net, crop, then layer norm without affine.
/// Output is `[len(tokens) × d_h]`. There is no speaker input.
pub fn encode_text<'t>(
    tokens: &[Token],
    params: &BoundParams<'t>,
    config: &ModelConfig,
) -> Result<Var<'t>> {
    if tokens.is_empty() {
        return Err(Error::contract("cannot encode an empty token sequence"));
    }
    let emb = params.embedding.embedding(tokens)?;
    let block = config.block();
    let padded = tokens.len().div_ceil(block) * block;
    let x = emb.pad_rows(padded)?;
    let u = unet_forward(&x, &params.down, &params.up)?;
    layer_norm(&u.crop_rows(tokens.len())?, None, LN_EPS)
}

/// Repeats row `t` of `h` `durations[t]` times.
pub fn length_regulate<'t>(h: &Var<'t>, durations: &[usize]) -> Result<Var<'t>> {
    let rows = h.shape()[0];
    if durations.len() != rows {
        return Err(Error::contract(format!(
            "{} durations for {rows} hidden vectors",
            durations.len()
        )));
    }
    let index = durations
        .iter()
        .enumerate()
        .flat_map(|(t, &d)| std::iter::repeat(t).take(d))
        .collect();
    h.gather_rows(index)
}

/// Converts signed durations, rejecting negative entries.
pub fn checked_durations(durations: &[i64]) -> Result<Vec<usize>> {
    durations
        .iter()
        .map(|&d| {
            usize::try_from(d).map_err(|_| Error::contract(format!("negative duration {d}")))
        })
        .collect()
}

fn run_head<'t>(head: &BoundHead<'t>, x: &Var<'t>, relu: bool) -> Result<Var<'t>> {
    let mut y = x.mul_row(&head.entry_gain)?.add_row(&head.entry_bias)?;
    for layer in &head.layers {
        y = y.matmul(&layer.weight)?.add_row(&layer.bias)?;
        if relu {
            y = y.relu();
        }
        y = layer_norm(&y, Some((&layer.ln_gain, &layer.ln_bias)), LN_EPS)?;
    }
    y.matmul(&head.out_weight)?.add_row(&head.out_bias)
}

/// Per-frame speaker head: frame `t` of the output depends on frame `t` of
/// the input only.
pub fn head_forward<'t>(
    speaker: u32,
    h_frames: &Var<'t>,
    params: &BoundParams<'t>,
    config: &ModelConfig,
) -> Result<Var<'t>> {
    let slot = config.speaker_slot(speaker)?;
    match config.head_layout {
        HeadLayout::PerSpeaker => run_head(&params.heads[slot], h_frames, config.head_relu),
        HeadLayout::Shared => {
            let table = params
                .speaker_table
                .as_ref()
                .ok_or_else(|| Error::contract("shared-head model lacks a speaker table"))?;
            let frames = h_frames.shape()[0];
            let conditioned = h_frames.add(&table.gather_rows(vec![slot; frames])?)?;
            run_head(&params.heads[0], &conditioned, config.head_relu)
        }
    }
}

/// `head(speaker, length_regulate(encode_text(tokens), durations))`
pub fn synthesize<'t>(
    tokens: &[Token],
    durations: &[usize],
    speaker: u32,
    params: &BoundParams<'t>,
    config: &ModelConfig,
) -> Result<Var<'t>> {
    config.speaker_slot(speaker)?;
    let h = encode_text(tokens, params, config)?;
    let frames = length_regulate(&h, durations)?;
    if frames.shape()[0] == 0 {
        return Err(Error::Degenerate(
            "every duration is zero; nothing to synthesize".into(),
        ));
    }
    head_forward(speaker, &frames, params, config)
}
