use super::encoder::{
    expand_mask_heads, linear3, multi_head_attention, AttnAxis, ForwardCtx, LAYER_NORM_EPS,
};
use super::{BoundDecoderLayer, BoundFeedForward, BoundNorm, BoundTemporalLayer, ModelConfig};
use crate::numerics::{separable_conv, separable_conv_causal, BoolTensor, Tape, Tensor, Var};
use crate::{Error, Result};

/// Sinusoid table for positions `0..len`: even columns carry
/// sin(pos / 10000^(2i/d)), odd columns the matching cosine.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut table = Tensor::zeros(vec![len, d_model]);
    for pos in 0..len {
        for col in 0..d_model {
            let pair = (col / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            let v = if col % 2 == 0 { angle.sin() } else { angle.cos() };
            table.set(&[pos, col], v);
        }
    }
    table
}

/// Feed-forward sub-layer (separable convolution or dense) with dropout,
/// residual add, and layer norm.
fn ff_sublayer(
    tape: &mut Tape,
    h: Var,
    ff: &BoundFeedForward,
    norm: &BoundNorm,
    causal: bool,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let out = match ff {
        BoundFeedForward::SeparableConv { depthwise, pointwise } => {
            if causal {
                separable_conv_causal(tape, h, *depthwise, *pointwise)?
            } else {
                separable_conv(tape, h, *depthwise, *pointwise)?
            }
        }
        BoundFeedForward::Dense { w1, b1, w2, b2 } => {
            let hidden = linear3(tape, h, *w1, Some(*b1))?;
            let act = tape.relu(hidden);
            linear3(tape, act, *w2, Some(*b2))?
        }
    };
    let dropped = tape.dropout(out, cfg.dropout, ctx.training, ctx.rng)?;
    let sum = tape.add(h, dropped)?;
    Ok(tape.layer_norm(sum, norm.gain, norm.bias, LAYER_NORM_EPS)?)
}

fn attn_sublayer(
    tape: &mut Tape,
    q_src: Var,
    kv_src: Var,
    attn: &super::BoundAttention,
    norm: &BoundNorm,
    mask: &BoolTensor,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let out = multi_head_attention(tape, q_src, kv_src, attn, cfg.heads, mask, AttnAxis::PerAgent)?;
    let dropped = tape.dropout(out, cfg.dropout, ctx.training, ctx.rng)?;
    let sum = tape.add(q_src, dropped)?;
    Ok(tape.layer_norm(sum, norm.gain, norm.bias, LAYER_NORM_EPS)?)
}

/// Temporal Transformer encoder: per-agent self-attention over observed
/// frames followed by the feed-forward sub-layer; agents never exchange
/// information here.
pub fn temporal_encoder_forward(
    tape: &mut Tape,
    memory: Var,
    temporal_mask: &BoolTensor,
    layers: &[BoundTemporalLayer],
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let mask = expand_mask_heads(temporal_mask, cfg.heads);
    let mut h = memory;
    for layer in layers {
        h = attn_sublayer(tape, h, h, &layer.attn, &layer.attn_norm, &mask, cfg, ctx)?;
        h = ff_sublayer(tape, h, &layer.ff, &layer.ff_norm, false, cfg, ctx)?;
    }
    Ok(h)
}

/// Lower-triangular self-attention pattern over `s` decoder positions,
/// replicated for every agent-head batch.
fn causal_mask(s: usize, batches: usize) -> BoolTensor {
    let mut mask = BoolTensor::filled(vec![batches, s, s], false);
    for b in 0..batches {
        for i in 0..s {
            for j in 0..=i {
                mask.set(&[b, i, j], true);
            }
        }
    }
    mask
}

/// Cross-attention admissibility: decoder queries may look at every encoder
/// frame where the agent was observed.
fn cross_mask(padding: &BoolTensor, heads: usize, s: usize) -> BoolTensor {
    let (t_obs, n) = (padding.shape()[0], padding.shape()[1]);
    let mut mask = BoolTensor::filled(vec![n * heads, s, t_obs], false);
    for i in 0..n {
        for h in 0..heads {
            for q in 0..s {
                for t in 0..t_obs {
                    mask.set(&[i * heads + h, q, t], padding.at(&[t, i]));
                }
            }
        }
    }
    mask
}

/// Temporal Transformer decoder over `s` previously produced coordinate
/// rows. Embeds them, adds positional encodings (with dropout), then runs L
/// layers of masked self-attention, encoder-decoder attention, and the
/// feed-forward sub-layer. Returns [s, n, d_model].
pub fn temporal_decoder_forward(
    tape: &mut Tape,
    prev_outputs: &Tensor,
    enc_out: Var,
    padding: &BoolTensor,
    bound: &super::BoundParams,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let shape = prev_outputs.shape().to_vec();
    if shape.len() != 3 || shape[2] != 2 {
        return Err(Error::Data(format!("decoder inputs must be [S, N, 2], got {shape:?}")));
    }
    let (s, n) = (shape[0], shape[1]);
    if s == 0 {
        return Err(Error::Data("decoder needs at least the start token (S >= 1)".into()));
    }

    let prev = tape.constant(shape.clone(), prev_outputs.data().to_vec())?;
    let mut h = linear3(tape, prev, bound.dec_embed_w, Some(bound.dec_embed_b))?;
    let pe_table = positional_encoding(s, cfg.d_model);
    let mut pe_data = Vec::with_capacity(s * n * cfg.d_model);
    for pos in 0..s {
        for _ in 0..n {
            pe_data.extend_from_slice(
                &pe_table.data()[pos * cfg.d_model..(pos + 1) * cfg.d_model],
            );
        }
    }
    let pe = tape.constant(vec![s, n, cfg.d_model], pe_data)?;
    h = tape.add(h, pe)?;
    h = tape.dropout(h, cfg.dropout, ctx.training, ctx.rng)?;

    let self_mask = causal_mask(s, n * cfg.heads);
    let enc_mask = cross_mask(padding, cfg.heads, s);
    for layer in &bound.td_layers {
        h = attn_sublayer(tape, h, h, &layer.self_attn, &layer.self_norm, &self_mask, cfg, ctx)?;
        h = cross_attn_sublayer(tape, h, enc_out, layer, &enc_mask, cfg, ctx)?;
        // causal padding: the convolution must not look ahead of step t
        h = ff_sublayer(tape, h, &layer.ff, &layer.ff_norm, true, cfg, ctx)?;
    }
    Ok(h)
}

fn cross_attn_sublayer(
    tape: &mut Tape,
    h: Var,
    enc_out: Var,
    layer: &BoundDecoderLayer,
    mask: &BoolTensor,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let out = multi_head_attention(
        tape,
        h,
        enc_out,
        &layer.cross_attn,
        cfg.heads,
        mask,
        AttnAxis::PerAgent,
    )?;
    let dropped = tape.dropout(out, cfg.dropout, ctx.training, ctx.rng)?;
    let sum = tape.add(h, dropped)?;
    Ok(tape.layer_norm(sum, layer.cross_norm.gain, layer.cross_norm.bias, LAYER_NORM_EPS)?)
}

#[cfg(test)]
pub(crate) fn causal_mask_for_test(s: usize) -> BoolTensor {
    causal_mask(s, 1)
}

/// Decoding regimes of the trajectory generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Feed each predicted step back as the next decoder input.
    Autoregressive,
    /// Feed ground-truth previous positions (training only).
    TeacherForced,
}
