//! The forecasting model: input embedding, spatio-temporal Transformer
//! encoder, temporal Transformer encoder/decoder, and trajectory generator.

pub mod checkpoint;
mod encoder;
mod forward;
mod temporal;

#[cfg(test)]
mod tests_model;

pub use encoder::{
    embed_inputs, spatial_self_attention, st_encoder_forward, tcn_sublayer, ForwardCtx,
    LAYER_NORM_EPS,
};
pub use forward::{forecast_from_normalized, teacher_inputs, S2TNet};
pub use temporal::{
    positional_encoding, temporal_decoder_forward, temporal_encoder_forward, DecodeMode,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::FeatureEncoding;
use crate::numerics::{BoolTensor, Tape, Tensor, Var};
use crate::{Error, Result};

/// Feed-forward sub-layer flavor of the temporal stacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedForwardKind {
    SeparableConv,
    Dense,
}

/// Whether the temporal Transformer encoder runs, and with which
/// feed-forward sub-layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemporalEncoderMode {
    Off,
    On(FeedForwardKind),
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub tcn_kernel: usize,
    pub dropout: f64,
    pub t_obs: usize,
    /// Number of future steps to predict.
    pub t_pred: usize,
    pub encoding: FeatureEncoding,
    /// Spatial self-attention sub-layer toggle.
    pub spatial_attention: bool,
    /// Temporal-convolution sub-layer toggle.
    pub tcn: bool,
    pub temporal_encoder: TemporalEncoderMode,
    pub decoder_ff: FeedForwardKind,
    /// Attention radius in meters; `None` attends over the whole scene.
    pub spatial_limit: Option<f64>,
    /// Residual + layer norm after the spatial sub-layer (not only after
    /// the TCN sub-layer).
    pub spatial_residual: bool,
    /// Hidden width of the dense feed-forward ablation.
    pub ff_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            heads: 8,
            layers: 6,
            tcn_kernel: 3,
            dropout: 0.1,
            t_obs: 6,
            t_pred: 6,
            encoding: FeatureEncoding::default(),
            spatial_attention: true,
            tcn: true,
            temporal_encoder: TemporalEncoderMode::On(FeedForwardKind::SeparableConv),
            decoder_ff: FeedForwardKind::SeparableConv,
            spatial_limit: None,
            spatial_residual: true,
            ff_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.tcn_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "tcn_kernel {} must be odd for same-padding",
                self.tcn_kernel
            )));
        }
        if self.t_obs == 0 || self.t_pred == 0 {
            return Err(Error::Config("t_obs and t_pred must be at least 1".into()));
        }
        if let Some(limit) = self.spatial_limit {
            if limit < 0.0 || !limit.is_finite() {
                return Err(Error::Config(format!("spatial_limit {limit} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn feature_dim(&self) -> usize {
        self.encoding.dim()
    }
}

// ── Parameters ──────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Clone, Debug)]
pub struct NormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub enum FeedForwardParams {
    SeparableConv { depthwise: Tensor, pointwise: Tensor },
    Dense { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor },
}

#[derive(Clone, Debug)]
pub struct STLayerParams {
    pub attn: Option<AttentionParams>,
    pub attn_norm: Option<NormParams>,
    pub tcn_kernel: Option<Tensor>,
    pub tcn_norm: Option<NormParams>,
}

#[derive(Clone, Debug)]
pub struct TemporalLayerParams {
    pub attn: AttentionParams,
    pub attn_norm: NormParams,
    pub ff: FeedForwardParams,
    pub ff_norm: NormParams,
}

#[derive(Clone, Debug)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub self_norm: NormParams,
    pub cross_attn: AttentionParams,
    pub cross_norm: NormParams,
    pub ff: FeedForwardParams,
    pub ff_norm: NormParams,
}

/// Every trainable weight of the three stacks plus embedding and generator.
#[derive(Clone, Debug)]
pub struct S2TNetParams {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub st_layers: Vec<STLayerParams>,
    pub te_layers: Vec<TemporalLayerParams>,
    pub dec_embed_w: Tensor,
    pub dec_embed_b: Tensor,
    pub td_layers: Vec<DecoderLayerParams>,
    pub gen_w: Tensor,
    pub gen_b: Tensor,
}

fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::glorot_uniform(shape, fan_in, fan_out, rng).with_grad()
}

fn zeros_grad(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape).with_grad()
}

fn norm_params(d: usize) -> NormParams {
    NormParams { gain: Tensor::filled(vec![d], 1.0).with_grad(), bias: zeros_grad(vec![d]) }
}

fn attention_params(d: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
    AttentionParams {
        wq: glorot(vec![d, d], d, d, rng),
        wk: glorot(vec![d, d], d, d, rng),
        wv: glorot(vec![d, d], d, d, rng),
        wo: glorot(vec![d, d], d, d, rng),
    }
}

fn feed_forward_params(kind: FeedForwardKind, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> FeedForwardParams {
    let d = cfg.d_model;
    match kind {
        FeedForwardKind::SeparableConv => FeedForwardParams::SeparableConv {
            depthwise: glorot(vec![cfg.tcn_kernel, d], cfg.tcn_kernel, cfg.tcn_kernel, rng),
            pointwise: glorot(vec![d, d], d, d, rng),
        },
        FeedForwardKind::Dense => FeedForwardParams::Dense {
            w1: glorot(vec![d, cfg.ff_hidden], d, cfg.ff_hidden, rng),
            b1: zeros_grad(vec![cfg.ff_hidden]),
            w2: glorot(vec![cfg.ff_hidden, d], cfg.ff_hidden, d, rng),
            b2: zeros_grad(vec![d]),
        },
    }
}

impl S2TNetParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let f_in = cfg.feature_dim();
        let k = cfg.tcn_kernel;

        let st_layers = (0..cfg.layers)
            .map(|_| STLayerParams {
                attn: cfg.spatial_attention.then(|| attention_params(d, &mut rng)),
                attn_norm: (cfg.spatial_attention && cfg.spatial_residual).then(|| norm_params(d)),
                tcn_kernel: cfg.tcn.then(|| glorot(vec![k, 1, d, d], k * d, k * d, &mut rng)),
                tcn_norm: cfg.tcn.then(|| norm_params(d)),
            })
            .collect();

        let te_layers = match cfg.temporal_encoder {
            TemporalEncoderMode::Off => Vec::new(),
            TemporalEncoderMode::On(kind) => (0..cfg.layers)
                .map(|_| TemporalLayerParams {
                    attn: attention_params(d, &mut rng),
                    attn_norm: norm_params(d),
                    ff: feed_forward_params(kind, cfg, &mut rng),
                    ff_norm: norm_params(d),
                })
                .collect(),
        };

        let td_layers = (0..cfg.layers)
            .map(|_| DecoderLayerParams {
                self_attn: attention_params(d, &mut rng),
                self_norm: norm_params(d),
                cross_attn: attention_params(d, &mut rng),
                cross_norm: norm_params(d),
                ff: feed_forward_params(cfg.decoder_ff, cfg, &mut rng),
                ff_norm: norm_params(d),
            })
            .collect();

        Ok(S2TNetParams {
            embed_w: glorot(vec![f_in, d], f_in, d, &mut rng),
            embed_b: zeros_grad(vec![d]),
            st_layers,
            te_layers,
            dec_embed_w: glorot(vec![2, d], 2, d, &mut rng),
            dec_embed_b: zeros_grad(vec![d]),
            td_layers,
            gen_w: glorot(vec![d, 2], d, 2, &mut rng),
            gen_b: zeros_grad(vec![2]),
        })
    }

    /// Every parameter with a stable name, in a stable order. Must stay
    /// aligned with `named_tensors_mut` and `bind`; a unit test checks this.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("embed.w".into(), &self.embed_w));
        out.push(("embed.b".into(), &self.embed_b));
        for (l, layer) in self.st_layers.iter().enumerate() {
            if let Some(a) = &layer.attn {
                out.push((format!("st.{l}.attn.wq"), &a.wq));
                out.push((format!("st.{l}.attn.wk"), &a.wk));
                out.push((format!("st.{l}.attn.wv"), &a.wv));
                out.push((format!("st.{l}.attn.wo"), &a.wo));
            }
            if let Some(nrm) = &layer.attn_norm {
                out.push((format!("st.{l}.attn_norm.gain"), &nrm.gain));
                out.push((format!("st.{l}.attn_norm.bias"), &nrm.bias));
            }
            if let Some(kern) = &layer.tcn_kernel {
                out.push((format!("st.{l}.tcn.kernel"), kern));
            }
            if let Some(nrm) = &layer.tcn_norm {
                out.push((format!("st.{l}.tcn_norm.gain"), &nrm.gain));
                out.push((format!("st.{l}.tcn_norm.bias"), &nrm.bias));
            }
        }
        for (l, layer) in self.te_layers.iter().enumerate() {
            out.push((format!("te.{l}.attn.wq"), &layer.attn.wq));
            out.push((format!("te.{l}.attn.wk"), &layer.attn.wk));
            out.push((format!("te.{l}.attn.wv"), &layer.attn.wv));
            out.push((format!("te.{l}.attn.wo"), &layer.attn.wo));
            out.push((format!("te.{l}.attn_norm.gain"), &layer.attn_norm.gain));
            out.push((format!("te.{l}.attn_norm.bias"), &layer.attn_norm.bias));
            push_ff(&mut out, &layer.ff, &format!("te.{l}.ff"));
            out.push((format!("te.{l}.ff_norm.gain"), &layer.ff_norm.gain));
            out.push((format!("te.{l}.ff_norm.bias"), &layer.ff_norm.bias));
        }
        out.push(("dec_embed.w".into(), &self.dec_embed_w));
        out.push(("dec_embed.b".into(), &self.dec_embed_b));
        for (l, layer) in self.td_layers.iter().enumerate() {
            out.push((format!("td.{l}.self.wq"), &layer.self_attn.wq));
            out.push((format!("td.{l}.self.wk"), &layer.self_attn.wk));
            out.push((format!("td.{l}.self.wv"), &layer.self_attn.wv));
            out.push((format!("td.{l}.self.wo"), &layer.self_attn.wo));
            out.push((format!("td.{l}.self_norm.gain"), &layer.self_norm.gain));
            out.push((format!("td.{l}.self_norm.bias"), &layer.self_norm.bias));
            out.push((format!("td.{l}.cross.wq"), &layer.cross_attn.wq));
            out.push((format!("td.{l}.cross.wk"), &layer.cross_attn.wk));
            out.push((format!("td.{l}.cross.wv"), &layer.cross_attn.wv));
            out.push((format!("td.{l}.cross.wo"), &layer.cross_attn.wo));
            out.push((format!("td.{l}.cross_norm.gain"), &layer.cross_norm.gain));
            out.push((format!("td.{l}.cross_norm.bias"), &layer.cross_norm.bias));
            push_ff(&mut out, &layer.ff, &format!("td.{l}.ff"));
            out.push((format!("td.{l}.ff_norm.gain"), &layer.ff_norm.gain));
            out.push((format!("td.{l}.ff_norm.bias"), &layer.ff_norm.bias));
        }
        out.push(("gen.w".into(), &self.gen_w));
        out.push(("gen.b".into(), &self.gen_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("embed.w".into(), &mut self.embed_w));
        out.push(("embed.b".into(), &mut self.embed_b));
        for (l, layer) in self.st_layers.iter_mut().enumerate() {
            if let Some(a) = layer.attn.as_mut() {
                out.push((format!("st.{l}.attn.wq"), &mut a.wq));
                out.push((format!("st.{l}.attn.wk"), &mut a.wk));
                out.push((format!("st.{l}.attn.wv"), &mut a.wv));
                out.push((format!("st.{l}.attn.wo"), &mut a.wo));
            }
            if let Some(nrm) = layer.attn_norm.as_mut() {
                out.push((format!("st.{l}.attn_norm.gain"), &mut nrm.gain));
                out.push((format!("st.{l}.attn_norm.bias"), &mut nrm.bias));
            }
            if let Some(kern) = layer.tcn_kernel.as_mut() {
                out.push((format!("st.{l}.tcn.kernel"), kern));
            }
            if let Some(nrm) = layer.tcn_norm.as_mut() {
                out.push((format!("st.{l}.tcn_norm.gain"), &mut nrm.gain));
                out.push((format!("st.{l}.tcn_norm.bias"), &mut nrm.bias));
            }
        }
        for (l, layer) in self.te_layers.iter_mut().enumerate() {
            out.push((format!("te.{l}.attn.wq"), &mut layer.attn.wq));
            out.push((format!("te.{l}.attn.wk"), &mut layer.attn.wk));
            out.push((format!("te.{l}.attn.wv"), &mut layer.attn.wv));
            out.push((format!("te.{l}.attn.wo"), &mut layer.attn.wo));
            out.push((format!("te.{l}.attn_norm.gain"), &mut layer.attn_norm.gain));
            out.push((format!("te.{l}.attn_norm.bias"), &mut layer.attn_norm.bias));
            push_ff_mut(&mut out, &mut layer.ff, &format!("te.{l}.ff"));
            out.push((format!("te.{l}.ff_norm.gain"), &mut layer.ff_norm.gain));
            out.push((format!("te.{l}.ff_norm.bias"), &mut layer.ff_norm.bias));
        }
        out.push(("dec_embed.w".into(), &mut self.dec_embed_w));
        out.push(("dec_embed.b".into(), &mut self.dec_embed_b));
        for (l, layer) in self.td_layers.iter_mut().enumerate() {
            out.push((format!("td.{l}.self.wq"), &mut layer.self_attn.wq));
            out.push((format!("td.{l}.self.wk"), &mut layer.self_attn.wk));
            out.push((format!("td.{l}.self.wv"), &mut layer.self_attn.wv));
            out.push((format!("td.{l}.self.wo"), &mut layer.self_attn.wo));
            out.push((format!("td.{l}.self_norm.gain"), &mut layer.self_norm.gain));
            out.push((format!("td.{l}.self_norm.bias"), &mut layer.self_norm.bias));
            out.push((format!("td.{l}.cross.wq"), &mut layer.cross_attn.wq));
            out.push((format!("td.{l}.cross.wk"), &mut layer.cross_attn.wk));
            out.push((format!("td.{l}.cross.wv"), &mut layer.cross_attn.wv));
            out.push((format!("td.{l}.cross.wo"), &mut layer.cross_attn.wo));
            out.push((format!("td.{l}.cross_norm.gain"), &mut layer.cross_norm.gain));
            out.push((format!("td.{l}.cross_norm.bias"), &mut layer.cross_norm.bias));
            push_ff_mut(&mut out, &mut layer.ff, &format!("td.{l}.ff"));
            out.push((format!("td.{l}.ff_norm.gain"), &mut layer.ff_norm.gain));
            out.push((format!("td.{l}.ff_norm.bias"), &mut layer.ff_norm.bias));
        }
        out.push(("gen.w".into(), &mut self.gen_w));
        out.push(("gen.b".into(), &mut self.gen_b));
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.named_tensors_mut() {
            t.zero_grad();
        }
    }

    /// Writes the tape's leaf gradients back into the parameter tensors.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundParams) {
        let named = self.named_tensors_mut();
        assert_eq!(named.len(), bound.bindings.len(), "binding/parameter mismatch");
        for ((name, tensor), (bound_name, var)) in named.into_iter().zip(&bound.bindings) {
            assert_eq!(&name, bound_name, "binding order diverged");
            if let Some(g) = tape.grad(*var) {
                tensor.accumulate_grad(g);
            }
        }
    }
}

/// Parameter handles on a tape, mirroring [`S2TNetParams`].
pub struct BoundParams {
    pub embed_w: Var,
    pub embed_b: Var,
    pub st_layers: Vec<BoundSTLayer>,
    pub te_layers: Vec<BoundTemporalLayer>,
    pub dec_embed_w: Var,
    pub dec_embed_b: Var,
    pub td_layers: Vec<BoundDecoderLayer>,
    pub gen_w: Var,
    pub gen_b: Var,
    /// (name, var) pairs in [`S2TNetParams::named_tensors`] order.
    pub bindings: Vec<(String, Var)>,
}

pub struct BoundAttention {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

pub struct BoundNorm {
    pub gain: Var,
    pub bias: Var,
}

pub enum BoundFeedForward {
    SeparableConv { depthwise: Var, pointwise: Var },
    Dense { w1: Var, b1: Var, w2: Var, b2: Var },
}

pub struct BoundSTLayer {
    pub attn: Option<BoundAttention>,
    pub attn_norm: Option<BoundNorm>,
    pub tcn_kernel: Option<Var>,
    pub tcn_norm: Option<BoundNorm>,
}

pub struct BoundTemporalLayer {
    pub attn: BoundAttention,
    pub attn_norm: BoundNorm,
    pub ff: BoundFeedForward,
    pub ff_norm: BoundNorm,
}

pub struct BoundDecoderLayer {
    pub self_attn: BoundAttention,
    pub self_norm: BoundNorm,
    pub cross_attn: BoundAttention,
    pub cross_norm: BoundNorm,
    pub ff: BoundFeedForward,
    pub ff_norm: BoundNorm,
}

impl S2TNetParams {
    /// Registers every parameter on the tape. The same traversal order as
    /// `named_tensors` keeps gradient write-back aligned.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut bindings = Vec::new();
        let mut leaf = |name: String, t: &Tensor, tape: &mut Tape| -> Var {
            let var = tape.leaf(t);
            bindings.push((name, var));
            var
        };

        let embed_w = leaf("embed.w".into(), &self.embed_w, tape);
        let embed_b = leaf("embed.b".into(), &self.embed_b, tape);
        let st_layers = self
            .st_layers
            .iter()
            .enumerate()
            .map(|(l, layer)| BoundSTLayer {
                attn: layer.attn.as_ref().map(|a| BoundAttention {
                    wq: leaf(format!("st.{l}.attn.wq"), &a.wq, tape),
                    wk: leaf(format!("st.{l}.attn.wk"), &a.wk, tape),
                    wv: leaf(format!("st.{l}.attn.wv"), &a.wv, tape),
                    wo: leaf(format!("st.{l}.attn.wo"), &a.wo, tape),
                }),
                attn_norm: layer.attn_norm.as_ref().map(|nrm| BoundNorm {
                    gain: leaf(format!("st.{l}.attn_norm.gain"), &nrm.gain, tape),
                    bias: leaf(format!("st.{l}.attn_norm.bias"), &nrm.bias, tape),
                }),
                tcn_kernel: layer
                    .tcn_kernel
                    .as_ref()
                    .map(|kern| leaf(format!("st.{l}.tcn.kernel"), kern, tape)),
                tcn_norm: layer.tcn_norm.as_ref().map(|nrm| BoundNorm {
                    gain: leaf(format!("st.{l}.tcn_norm.gain"), &nrm.gain, tape),
                    bias: leaf(format!("st.{l}.tcn_norm.bias"), &nrm.bias, tape),
                }),
            })
            .collect();
        let te_layers = self
            .te_layers
            .iter()
            .enumerate()
            .map(|(l, layer)| BoundTemporalLayer {
                attn: BoundAttention {
                    wq: leaf(format!("te.{l}.attn.wq"), &layer.attn.wq, tape),
                    wk: leaf(format!("te.{l}.attn.wk"), &layer.attn.wk, tape),
                    wv: leaf(format!("te.{l}.attn.wv"), &layer.attn.wv, tape),
                    wo: leaf(format!("te.{l}.attn.wo"), &layer.attn.wo, tape),
                },
                attn_norm: BoundNorm {
                    gain: leaf(format!("te.{l}.attn_norm.gain"), &layer.attn_norm.gain, tape),
                    bias: leaf(format!("te.{l}.attn_norm.bias"), &layer.attn_norm.bias, tape),
                },
                ff: bind_ff(&layer.ff, &format!("te.{l}.ff"), &mut leaf, tape),
                ff_norm: BoundNorm {
                    gain: leaf(format!("te.{l}.ff_norm.gain"), &layer.ff_norm.gain, tape),
                    bias: leaf(format!("te.{l}.ff_norm.bias"), &layer.ff_norm.bias, tape),
                },
            })
            .collect();
        let dec_embed_w = leaf("dec_embed.w".into(), &self.dec_embed_w, tape);
        let dec_embed_b = leaf("dec_embed.b".into(), &self.dec_embed_b, tape);
        let td_layers = self
            .td_layers
            .iter()
            .enumerate()
            .map(|(l, layer)| BoundDecoderLayer {
                self_attn: BoundAttention {
                    wq: leaf(format!("td.{l}.self.wq"), &layer.self_attn.wq, tape),
                    wk: leaf(format!("td.{l}.self.wk"), &layer.self_attn.wk, tape),
                    wv: leaf(format!("td.{l}.self.wv"), &layer.self_attn.wv, tape),
                    wo: leaf(format!("td.{l}.self.wo"), &layer.self_attn.wo, tape),
                },
                self_norm: BoundNorm {
                    gain: leaf(format!("td.{l}.self_norm.gain"), &layer.self_norm.gain, tape),
                    bias: leaf(format!("td.{l}.self_norm.bias"), &layer.self_norm.bias, tape),
                },
                cross_attn: BoundAttention {
                    wq: leaf(format!("td.{l}.cross.wq"), &layer.cross_attn.wq, tape),
                    wk: leaf(format!("td.{l}.cross.wk"), &layer.cross_attn.wk, tape),
                    wv: leaf(format!("td.{l}.cross.wv"), &layer.cross_attn.wv, tape),
                    wo: leaf(format!("td.{l}.cross.wo"), &layer.cross_attn.wo, tape),
                },
                cross_norm: BoundNorm {
                    gain: leaf(format!("td.{l}.cross_norm.gain"), &layer.cross_norm.gain, tape),
                    bias: leaf(format!("td.{l}.cross_norm.bias"), &layer.cross_norm.bias, tape),
                },
                ff: bind_ff(&layer.ff, &format!("td.{l}.ff"), &mut leaf, tape),
                ff_norm: BoundNorm {
                    gain: leaf(format!("td.{l}.ff_norm.gain"), &layer.ff_norm.gain, tape),
                    bias: leaf(format!("td.{l}.ff_norm.bias"), &layer.ff_norm.bias, tape),
                },
            })
            .collect();
        let gen_w = leaf("gen.w".into(), &self.gen_w, tape);
        let gen_b = leaf("gen.b".into(), &self.gen_b, tape);

        BoundParams {
            embed_w,
            embed_b,
            st_layers,
            te_layers,
            dec_embed_w,
            dec_embed_b,
            td_layers,
            gen_w,
            gen_b,
            bindings,
        }
    }
}

fn bind_ff(
    ff: &FeedForwardParams,
    prefix: &str,
    leaf: &mut impl FnMut(String, &Tensor, &mut Tape) -> Var,
    tape: &mut Tape,
) -> BoundFeedForward {
    match ff {
        FeedForwardParams::SeparableConv { depthwise, pointwise } => {
            BoundFeedForward::SeparableConv {
                depthwise: leaf(format!("{prefix}.dw"), depthwise, tape),
                pointwise: leaf(format!("{prefix}.pw"), pointwise, tape),
            }
        }
        FeedForwardParams::Dense { w1, b1, w2, b2 } => BoundFeedForward::Dense {
            w1: leaf(format!("{prefix}.w1"), w1, tape),
            b1: leaf(format!("{prefix}.b1"), b1, tape),
            w2: leaf(format!("{prefix}.w2"), w2, tape),
            b2: leaf(format!("{prefix}.b2"), b2, tape),
        },
    }
}

fn push_ff<'a>(out: &mut Vec<(String, &'a Tensor)>, ff: &'a FeedForwardParams, prefix: &str) {
    match ff {
        FeedForwardParams::SeparableConv { depthwise, pointwise } => {
            out.push((format!("{prefix}.dw"), depthwise));
            out.push((format!("{prefix}.pw"), pointwise));
        }
        FeedForwardParams::Dense { w1, b1, w2, b2 } => {
            out.push((format!("{prefix}.w1"), w1));
            out.push((format!("{prefix}.b1"), b1));
            out.push((format!("{prefix}.w2"), w2));
            out.push((format!("{prefix}.b2"), b2));
        }
    }
}

fn push_ff_mut<'a>(
    out: &mut Vec<(String, &'a mut Tensor)>,
    ff: &'a mut FeedForwardParams,
    prefix: &str,
) {
    match ff {
        FeedForwardParams::SeparableConv { depthwise, pointwise } => {
            out.push((format!("{prefix}.dw"), depthwise));
            out.push((format!("{prefix}.pw"), pointwise));
        }
        FeedForwardParams::Dense { w1, b1, w2, b2 } => {
            out.push((format!("{prefix}.w1"), w1));
            out.push((format!("{prefix}.b1"), b1));
            out.push((format!("{prefix}.w2"), w2));
            out.push((format!("{prefix}.b2"), b2));
        }
    }
}

/// Predicted global positions per agent per future step.
#[derive(Clone, Debug)]
pub struct Forecast {
    /// [t_pred, n, 2] in global coordinates.
    pub positions: Tensor,
    /// [t_pred, n]: slots with ground truth available for scoring.
    pub validity: BoolTensor,
}
