//! Loss, optimizer, learning-rate schedule, and the training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunManifest, TrainConfig};
use crate::data::{random_rotation, DatasetSplit, Scene};
use crate::evaluation::{evaluate, MetricsReport};
use crate::model::{checkpoint, ForwardCtx, S2TNet};
use crate::numerics::{BoolTensor, Tape, Tensor, Var};
use crate::{Error, Result};

/// Squared-Euclidean trajectory loss summed over valid future agent-frames,
/// averaged over the number of agents with any valid slot.
pub fn l2_loss(
    tape: &mut Tape,
    pred: Var,
    gt: &Tensor,
    future_presence: &BoolTensor,
) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    if gt.shape() != shape.as_slice() || future_presence.shape() != &shape[..2] {
        return Err(Error::Evaluation(format!(
            "loss shapes disagree: pred {:?}, gt {:?}, presence {:?}",
            shape,
            gt.shape(),
            future_presence.shape()
        )));
    }
    let (s, n) = (shape[0], shape[1]);
    let valid_agents = (0..n)
        .filter(|&i| (0..s).any(|si| future_presence.at(&[si, i])))
        .count();
    if valid_agents == 0 {
        return Err(Error::Training("no valid future slots to compute a loss".into()));
    }
    let gt_var = tape.constant(gt.shape().to_vec(), gt.data().to_vec())?;
    let diff = tape.sub(pred, gt_var)?;
    let sq = tape.mul(diff, diff)?;
    let masked = tape.mask_rows(sq, future_presence)?;
    let total = tape.sum_all(masked);
    Ok(tape.scale(total, 1.0 / valid_agents as f64))
}

/// Warmup-then-decay schedule:
/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5), peaking at
/// (d_model * warmup)^-0.5 when step == warmup.
pub fn lr_schedule(step: usize, d_model: usize, warmup: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::Training("lr_schedule is defined for step >= 1".into()));
    }
    if warmup == 0 {
        return Err(Error::Training("warmup must be at least 1".into()));
    }
    let s = step as f64;
    let scale = (d_model as f64).powf(-0.5);
    Ok(scale * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5)))
}

/// Adam moment buffers, one pair per parameter tensor in `named_tensors`
/// order.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &S2TNet) -> AdamState {
        let sizes: Vec<usize> =
            model.params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
        AdamState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients accumulated in the
/// parameter tensors; gradients are consumed. Deterministic given inputs.
pub fn adam_step(model: &mut S2TNet, state: &mut AdamState, lr: f64) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (idx, (name, tensor)) in model.params.named_tensors_mut().into_iter().enumerate() {
        let grad = tensor.grad.take();
        let zero;
        let g: &[f64] = match &grad {
            Some(g) => g,
            None => {
                zero = vec![0.0; tensor.numel()];
                &zero
            }
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient for parameter {name}")));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = tensor.data_mut();
        for i in 0..data.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm does not exceed `max_norm`.
pub fn clip_gradients(model: &mut S2TNet, max_norm: f64) {
    let mut sq = 0.0;
    for (_, t) in model.params.named_tensors() {
        if let Some(g) = &t.grad {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, t) in model.params.named_tensors_mut() {
            if let Some(g) = &mut t.grad {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
}

/// Future-half presence mask of a scene, shaped [t_pred, n].
pub fn future_presence(scene: &Scene, t_pred: usize) -> BoolTensor {
    let mut mask = BoolTensor::filled(vec![t_pred, scene.n], false);
    for s in 0..t_pred.min(scene.t_fut()) {
        for i in 0..scene.n {
            mask.set(&[s, i], scene.presence.at(&[scene.t_obs + s, i]));
        }
    }
    mask
}

/// Teacher-forced loss for one scene; gradients are accumulated into the
/// parameter tensors, scaled by `loss_scale`.
pub fn scene_loss_backward(
    model: &mut S2TNet,
    scene: &Scene,
    loss_scale: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut ctx = ForwardCtx { training, rng };
    let pred = model.teacher_forced_prediction(&mut tape, &bound, scene, &mut ctx)?;
    let t_pred = model.config.t_pred;
    let gt = truncated_future(scene, t_pred);
    let presence = future_presence(scene, t_pred);
    let loss = l2_loss(&mut tape, pred, &gt, &presence)?;
    let scaled = tape.scale(loss, loss_scale);
    let value = tape.value(loss)[0];
    tape.backward(scaled)?;
    model.params.accumulate_grads(&tape, &bound);
    Ok(value)
}

fn truncated_future(scene: &Scene, t_pred: usize) -> Tensor {
    let mut gt = Tensor::zeros(vec![t_pred, scene.n, 2]);
    for s in 0..t_pred.min(scene.t_fut()) {
        for i in 0..scene.n {
            gt.set(&[s, i, 0], scene.future.at(&[s, i, 0]));
            gt.set(&[s, i, 1], scene.future.at(&[s, i, 1]));
        }
    }
    gt
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: f64,
    pub final_checkpoint: PathBuf,
    pub curve_path: PathBuf,
    pub last_validation: Option<MetricsReport>,
}

/// Runs the full training recipe into `out_dir`: per step, sample a batch,
/// augment with random rotation, teacher-forced forward, L2 loss, backward,
/// Adam with the warmup schedule. Writes the manifest, periodic checkpoints,
/// and the loss curve CSV. Fully reproducible under a fixed seed.
pub fn train(
    dataset: &DatasetSplit,
    val: &DatasetSplit,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if dataset.scenes.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let mut model = S2TNet::init(cfg.model.clone(), cfg.seed)?;
    let mut adam = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let final_path = ckpt_dir.join("final.ckpt");
    let mut last_good = ckpt_dir.join("step-0.ckpt");
    checkpoint::save_params(&last_good, &model.params)?;

    RunManifest { config: cfg, checkpoint: Some(&final_path) }.write(out_dir)?;

    let mut curve = String::from("step,lr,train_loss,val_wsade,val_wsfde\n");
    let curve_path = out_dir.join("loss_curve.csv");
    let mut last_validation = None;
    let mut final_loss = f64::NAN;

    for step in 1..=cfg.max_steps {
        let batch: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.gen_range(0..dataset.scenes.len())).collect();
        let scale = 1.0 / cfg.batch_size as f64;
        let mut batch_loss = 0.0;
        for &idx in &batch {
            let mut scene = dataset.scenes[idx].clone();
            if cfg.augment {
                random_rotation(&mut scene, &mut rng);
            }
            let loss = scene_loss_backward(&mut model, &scene, scale, true, &mut rng)?;
            batch_loss += loss * scale;
        }
        if !batch_loss.is_finite() {
            return Err(Error::Training(format!(
                "loss diverged at step {step}; last good checkpoint: {}",
                last_good.display()
            )));
        }
        final_loss = batch_loss;
        if let Some(max_norm) = cfg.clip_norm {
            clip_gradients(&mut model, max_norm);
        }
        let lr = lr_schedule(step, cfg.model.d_model, cfg.warmup_steps)?;
        adam_step(&mut model, &mut adam, lr)?;

        let validate_now =
            (step % cfg.val_every == 0 || step == cfg.max_steps) && !val.scenes.is_empty();
        let (val_wsade, val_wsfde) = if validate_now {
            let (report, _) = evaluate(&model, val)?;
            let cells = (report.wsade.to_string(), report.wsfde.to_string());
            last_validation = Some(report);
            cells
        } else {
            (String::new(), String::new())
        };
        let _ = writeln!(curve, "{step},{lr},{batch_loss},{val_wsade},{val_wsfde}");

        if step % cfg.checkpoint_every == 0 {
            let path = ckpt_dir.join(format!("step-{step}.ckpt"));
            checkpoint::save_params(&path, &model.params)?;
            last_good = path;
        }
    }

    checkpoint::save_params(&final_path, &model.params)?;
    std::fs::write(&curve_path, &curve)?;

    Ok(TrainSummary {
        steps: cfg.max_steps,
        final_loss,
        final_checkpoint: final_path,
        curve_path,
        last_validation,
    })
}
