use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{linear3, st_encoder_forward, ForwardCtx};
use super::temporal::{temporal_decoder_forward, temporal_encoder_forward, DecodeMode};
use super::{BoundParams, Forecast, ModelConfig, S2TNetParams, TemporalEncoderMode};
use crate::data::{denormalize_point, encode_features, Reference, Scene};
use crate::graph::{build_graph, STGraph};
use crate::numerics::{BoolTensor, Tape, Tensor, Var};
use crate::{Error, Result};

/// Model configuration plus its trainable parameters.
#[derive(Clone, Debug)]
pub struct S2TNet {
    pub config: ModelConfig,
    pub params: S2TNetParams,
}

impl S2TNet {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = S2TNetParams::init(&config, seed)?;
        Ok(S2TNet { config, params })
    }

    /// Runs both encoders; returns the representation the decoder
    /// cross-attends to.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        scene: &Scene,
        graph: &STGraph,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let features = encode_features(scene, &self.config.encoding);
        let memory = st_encoder_forward(tape, &features, graph, bound, &self.config, ctx)?;
        match self.config.temporal_encoder {
            TemporalEncoderMode::Off => Ok(memory),
            TemporalEncoderMode::On(_) => temporal_encoder_forward(
                tape,
                memory,
                &graph.temporal_mask,
                &bound.te_layers,
                &self.config,
                ctx,
            ),
        }
    }

    /// Full teacher-forced pass; returns predicted positions [t_pred, n, 2]
    /// in the scene's (normalized) coordinate frame.
    pub fn teacher_forced_prediction(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        scene: &Scene,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        if scene.t_fut() < self.config.t_pred {
            return Err(Error::Data(format!(
                "teacher forcing needs {} ground-truth future frames, scene has {}",
                self.config.t_pred,
                scene.t_fut()
            )));
        }
        let graph = build_graph(scene, self.config.spatial_limit)?;
        let enc_out = self.encode(tape, bound, scene, &graph, ctx)?;
        let inputs = teacher_inputs(scene, self.config.t_pred);
        self.decode_step(tape, bound, &inputs, enc_out, &graph, ctx)
    }

    /// Decoder + generator over the given previous-coordinate rows; the
    /// prediction for row s is inputs[s] plus the generated displacement.
    fn decode_step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        inputs: &Tensor,
        enc_out: Var,
        graph: &STGraph,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let dec_out = temporal_decoder_forward(
            tape,
            inputs,
            enc_out,
            &graph.padding_mask,
            bound,
            &self.config,
            ctx,
        )?;
        let disp = linear3(tape, dec_out, bound.gen_w, Some(bound.gen_b))?;
        let anchor = tape.constant(inputs.shape().to_vec(), inputs.data().to_vec())?;
        Ok(tape.add(anchor, disp)?)
    }

    /// Forecasts `t_pred` future positions per agent. Autoregressive mode
    /// feeds each predicted step back; teacher-forced mode consumes the
    /// scene's ground truth shifted right. Evaluation is dropout-free and
    /// deterministic given parameters and input.
    pub fn generate_trajectory(&self, scene: &Scene, mode: DecodeMode) -> Result<Forecast> {
        let t_pred = self.config.t_pred;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = ForwardCtx { training: false, rng: &mut rng };
        let graph = build_graph(scene, self.config.spatial_limit)?;

        let predicted: Tensor = match mode {
            DecodeMode::TeacherForced => {
                let mut tape = Tape::new();
                let bound = self.params.bind(&mut tape);
                let pred = self.teacher_forced_prediction(&mut tape, &bound, scene, &mut ctx)?;
                Tensor::new(tape.shape(pred).to_vec(), tape.value(pred).to_vec())?
            }
            DecodeMode::Autoregressive => {
                let mut rows: Vec<Vec<(f64, f64)>> = Vec::with_capacity(t_pred);
                for step in 1..=t_pred {
                    let mut tape = Tape::new();
                    let bound = self.params.bind(&mut tape);
                    let enc_out = self.encode(&mut tape, &bound, scene, &graph, &mut ctx)?;
                    let inputs = autoregressive_inputs(scene, &rows, step);
                    let pred =
                        self.decode_step(&mut tape, &bound, &inputs, enc_out, &graph, &mut ctx)?;
                    let v = tape.value(pred);
                    let n = scene.n;
                    let last = step - 1;
                    rows.push(
                        (0..n)
                            .map(|i| (v[(last * n + i) * 2], v[(last * n + i) * 2 + 1]))
                            .collect(),
                    );
                }
                let mut out = Tensor::zeros(vec![t_pred, scene.n, 2]);
                for (s, row) in rows.iter().enumerate() {
                    for (i, &(x, y)) in row.iter().enumerate() {
                        out.set(&[s, i, 0], x);
                        out.set(&[s, i, 1], y);
                    }
                }
                out
            }
        };

        Ok(forecast_from_normalized(scene, predicted, t_pred))
    }
}

/// Builds the global-coordinate forecast from normalized predictions.
pub fn forecast_from_normalized(scene: &Scene, predicted: Tensor, t_pred: usize) -> Forecast {
    let reference = scene.reference.unwrap_or(Reference { cx: 0.0, cy: 0.0 });
    let mut positions = Tensor::zeros(vec![t_pred, scene.n, 2]);
    let mut validity = BoolTensor::filled(vec![t_pred, scene.n], true);
    for s in 0..t_pred {
        for i in 0..scene.n {
            let p = (predicted.at(&[s, i, 0]), predicted.at(&[s, i, 1]));
            let (gx, gy) = denormalize_point(p, &reference);
            positions.set(&[s, i, 0], gx);
            positions.set(&[s, i, 1], gy);
            if s < scene.t_fut() {
                validity.set(&[s, i], scene.presence.at(&[scene.t_obs + s, i]));
            }
        }
    }
    Forecast { positions, validity }
}

/// Decoder inputs for teacher forcing: the last observed position followed
/// by ground-truth future rows shifted right. Slots without ground truth
/// carry the most recent known position forward.
pub fn teacher_inputs(scene: &Scene, t_pred: usize) -> Tensor {
    let n = scene.n;
    let mut inputs = Tensor::zeros(vec![t_pred, n, 2]);
    for i in 0..n {
        let (mut px, mut py) = scene.last_observed_pos(i);
        for s in 0..t_pred {
            inputs.set(&[s, i, 0], px);
            inputs.set(&[s, i, 1], py);
            if scene.presence.at(&[scene.t_obs + s, i]) {
                let (gx, gy) = scene.future_pos(s, i);
                px = gx;
                py = gy;
            }
        }
    }
    inputs
}

/// Decoder inputs after `rows` autoregressive steps: start token plus the
/// model's own previous outputs.
fn autoregressive_inputs(scene: &Scene, rows: &[Vec<(f64, f64)>], steps: usize) -> Tensor {
    let n = scene.n;
    let mut inputs = Tensor::zeros(vec![steps, n, 2]);
    for i in 0..n {
        let (sx, sy) = scene.last_observed_pos(i);
        inputs.set(&[0, i, 0], sx);
        inputs.set(&[0, i, 1], sy);
    }
    for (s, row) in rows.iter().take(steps - 1).enumerate() {
        for (i, &(x, y)) in row.iter().enumerate() {
            inputs.set(&[s + 1, i, 0], x);
            inputs.set(&[s + 1, i, 1], y);
        }
    }
    inputs
}
