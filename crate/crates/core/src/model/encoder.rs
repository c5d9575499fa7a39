use rand_chacha::ChaCha8Rng;

use super::{BoundAttention, BoundParams, BoundSTLayer, ModelConfig};
use crate::graph::STGraph;
use crate::numerics::{BoolTensor, Tape, Tensor, Var};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Mutable per-forward state: dropout mode and its RNG.
pub struct ForwardCtx<'r> {
    pub training: bool,
    pub rng: &'r mut ChaCha8Rng,
}

/// Affine map over the last dimension of a rank-3 tensor.
pub(crate) fn linear3(tape: &mut Tape, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (a, b, f) = (shape[0], shape[1], shape[2]);
    let d = tape.shape(w)[1];
    let flat = tape.reshape(x, vec![a * b, f])?;
    let mut out = tape.matmul(flat, w)?;
    if let Some(bias) = bias {
        out = tape.add_bias(out, bias)?;
    }
    Ok(tape.reshape(out, vec![a, b, d])?)
}

/// Which axis of a [A, B, d] activation becomes the attention sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum AttnAxis {
    /// Sequence = agents; batched over frames x heads (spatial attention).
    PerFrame,
    /// Sequence = time; batched over agents x heads (temporal attention).
    PerAgent,
}

/// Projects [A, B, d] onto heads: returns [batch, seq, d_head].
fn project_heads(tape: &mut Tape, x: Var, w: Var, heads: usize, axis: AttnAxis) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (a, b, d) = (shape[0], shape[1], shape[2]);
    let dk = d / heads;
    let proj = linear3(tape, x, w, None)?;
    let split = tape.reshape(proj, vec![a, b, heads, dk])?;
    match axis {
        AttnAxis::PerFrame => {
            let p = tape.permute(split, &[0, 2, 1, 3])?;
            Ok(tape.reshape(p, vec![a * heads, b, dk])?)
        }
        AttnAxis::PerAgent => {
            let p = tape.permute(split, &[1, 2, 0, 3])?;
            Ok(tape.reshape(p, vec![b * heads, a, dk])?)
        }
    }
}

/// Inverse of [`project_heads`]: [batch, seq, d_head] back to [A, B, d].
fn merge_heads(
    tape: &mut Tape,
    x: Var,
    heads: usize,
    a: usize,
    b: usize,
    axis: AttnAxis,
) -> Result<Var> {
    let dk = tape.shape(x)[2];
    match axis {
        AttnAxis::PerFrame => {
            let split = tape.reshape(x, vec![a, heads, b, dk])?;
            let p = tape.permute(split, &[0, 2, 1, 3])?;
            Ok(tape.reshape(p, vec![a, b, heads * dk])?)
        }
        AttnAxis::PerAgent => {
            let split = tape.reshape(x, vec![b, heads, a, dk])?;
            let p = tape.permute(split, &[2, 0, 1, 3])?;
            Ok(tape.reshape(p, vec![a, b, heads * dk])?)
        }
    }
}

/// Repeats each leading-axis block of a [G, m, n] mask `heads` times,
/// matching the [G*heads, m, n] score layout.
pub(crate) fn expand_mask_heads(base: &BoolTensor, heads: usize) -> BoolTensor {
    let shape = base.shape();
    let (g, m, n) = (shape[0], shape[1], shape[2]);
    let mut out = BoolTensor::filled(vec![g * heads, m, n], false);
    for gi in 0..g {
        for h in 0..heads {
            for i in 0..m {
                for j in 0..n {
                    out.set(&[gi * heads + h, i, j], base.at(&[gi, i, j]));
                }
            }
        }
    }
    out
}

/// Multi-head scaled dot-product attention with separate query and key/value
/// sources. `mask` must already be expanded to the [batch, seq_q, seq_k]
/// score layout.
pub(crate) fn multi_head_attention(
    tape: &mut Tape,
    q_src: Var,
    kv_src: Var,
    attn: &BoundAttention,
    heads: usize,
    mask: &BoolTensor,
    axis: AttnAxis,
) -> Result<Var> {
    let q_shape = tape.shape(q_src).to_vec();
    let (a, b, d) = (q_shape[0], q_shape[1], q_shape[2]);
    let dk = d / heads;
    let q = project_heads(tape, q_src, attn.wq, heads, axis)?;
    let k = project_heads(tape, kv_src, attn.wk, heads, axis)?;
    let v = project_heads(tape, kv_src, attn.wv, heads, axis)?;
    let scores = tape.bmm(q, k, true)?;
    let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.masked_softmax(scaled, mask)?;
    let ctx = tape.bmm(weights, v, false)?;
    let merged = merge_heads(tape, ctx, heads, a, b, axis)?;
    linear3(tape, merged, attn.wo, None)
}

/// Embeds encoded features onto d_model with a shared affine map, re-zeroing
/// padded agent-frame slots.
pub fn embed_inputs(
    tape: &mut Tape,
    features: &Tensor,
    bound: &BoundParams,
    padding: &BoolTensor,
) -> Result<Var> {
    let f_in = tape.shape(bound.embed_w)[0];
    if features.shape().len() != 3 || features.shape()[2] != f_in {
        return Err(Error::Config(format!(
            "feature dim {:?} does not match configured encoding width {}",
            features.shape(),
            f_in
        )));
    }
    let x = tape.constant(features.shape().to_vec(), features.data().to_vec())?;
    let h = linear3(tape, x, bound.embed_w, Some(bound.embed_b))?;
    Ok(tape.mask_rows(h, padding)?)
}

/// Per-frame attention across agents (no cross-frame information flow).
pub fn spatial_self_attention(
    tape: &mut Tape,
    h: Var,
    attn: &BoundAttention,
    heads: usize,
    spatial_mask: &BoolTensor,
) -> Result<Var> {
    let mask = expand_mask_heads(spatial_mask, heads);
    multi_head_attention(tape, h, h, attn, heads, &mask, AttnAxis::PerFrame)
}

/// Temporal convolution sub-layer: conv along time per agent, dropout,
/// residual add, layer norm.
pub fn tcn_sublayer(
    tape: &mut Tape,
    h: Var,
    kernel: Var,
    norm: &super::BoundNorm,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let conv = tape.conv_temporal(h, kernel)?;
    let dropped = tape.dropout(conv, cfg.dropout, ctx.training, ctx.rng)?;
    let sum = tape.add(h, dropped)?;
    Ok(tape.layer_norm(sum, norm.gain, norm.bias, LAYER_NORM_EPS)?)
}

fn spatial_sublayer(
    tape: &mut Tape,
    h: Var,
    layer: &BoundSTLayer,
    graph: &STGraph,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let attn = layer.attn.as_ref().expect("spatial sublayer requires attention params");
    let out = spatial_self_attention(tape, h, attn, cfg.heads, &graph.spatial_mask)?;
    let dropped = tape.dropout(out, cfg.dropout, ctx.training, ctx.rng)?;
    match &layer.attn_norm {
        Some(norm) => {
            let sum = tape.add(h, dropped)?;
            Ok(tape.layer_norm(sum, norm.gain, norm.bias, LAYER_NORM_EPS)?)
        }
        None => Ok(dropped),
    }
}

/// The spatio-temporal encoder: embedding followed by L layers interleaving
/// the spatial self-attention and temporal-convolution sub-layers.
pub fn st_encoder_forward(
    tape: &mut Tape,
    features: &Tensor,
    graph: &STGraph,
    bound: &BoundParams,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let mut h = embed_inputs(tape, features, bound, &graph.padding_mask)?;
    for layer in &bound.st_layers {
        if layer.attn.is_some() {
            h = spatial_sublayer(tape, h, layer, graph, cfg, ctx)?;
        }
        if let Some(kernel) = layer.tcn_kernel {
            let norm = layer.tcn_norm.as_ref().expect("tcn sublayer requires norm params");
            h = tcn_sublayer(tape, h, kernel, norm, cfg, ctx)?;
        }
    }
    Ok(h)
}
