//! The finite-difference verification suite behind the `gradcheck`
//! subcommand: per-primitive checks plus whole-model checks per parameter
//! group on a fixed reference scene.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_scenes, normalize_scene, AgentState, Category, FrameRecords, Scene, WindowParams};
use crate::model::{ForwardCtx, ModelConfig, S2TNet};
use crate::numerics::gradcheck::{check, GradCheck, DEFAULT_EPS};
use crate::numerics::gradcheck::check_tape_op;
use crate::numerics::{scaled_dot_product_attention, separable_conv, BoolTensor, Tape};
use crate::training::{future_presence, l2_loss};
use crate::Result;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Finite-difference checks of each differentiable layer primitive.
pub fn primitive_suite() -> Vec<GradCheck> {
    let tol = PRIMITIVE_TOLERANCE;
    let mut out = Vec::new();
    out.push(check_tape_op("matmul", &[3, 4], 101, tol, |t, x| {
        let w = t.constant(vec![4, 5], (0..20).map(|i| 0.1 * i as f64 - 1.0).collect()).unwrap();
        t.matmul(x, w).unwrap()
    }));
    out.push(check_tape_op("bmm", &[2, 3, 4], 102, tol, |t, x| {
        let w = t.constant(vec![2, 4, 3], (0..24).map(|i| 0.07 * i as f64 - 0.8).collect()).unwrap();
        t.bmm(x, w, false).unwrap()
    }));
    out.push(check_tape_op("softmax", &[2, 3, 4], 103, tol, |t, x| t.softmax(x, 2).unwrap()));
    out.push(check_tape_op("masked_softmax", &[2, 3, 4], 104, tol, |t, x| {
        let mut mask = BoolTensor::filled(vec![2, 3, 4], true);
        mask.set(&[0, 0, 3], false);
        mask.set(&[1, 2, 0], false);
        t.masked_softmax(x, &mask).unwrap()
    }));
    out.push(check_tape_op("layer_norm", &[4, 6], 105, tol, |t, x| {
        let gain = t.constant(vec![6], vec![1.2, 0.8, 1.0, 0.9, 1.1, 1.0]).unwrap();
        let bias = t.constant(vec![6], vec![0.1, -0.1, 0.0, 0.2, -0.2, 0.05]).unwrap();
        t.layer_norm(x, gain, bias, 1e-5).unwrap()
    }));
    out.push(check_tape_op("conv_temporal", &[6, 2, 3], 106, tol, |t, x| {
        let k = t
            .constant(vec![3, 1, 3, 3], (0..27).map(|i| 0.05 * i as f64 - 0.6).collect())
            .unwrap();
        t.conv_temporal(x, k).unwrap()
    }));
    out.push(check_tape_op("separable_conv", &[6, 2, 3], 107, tol, |t, x| {
        let dw = t.constant(vec![3, 3], (0..9).map(|i| 0.1 * i as f64 - 0.4).collect()).unwrap();
        let pw = t.constant(vec![3, 3], (0..9).map(|i| 0.08 * i as f64 - 0.3).collect()).unwrap();
        separable_conv(t, x, dw, pw).unwrap()
    }));
    out.push(check_tape_op("attention", &[3, 4], 108, tol, |t, q| {
        let k = t.constant(vec![5, 4], (0..20).map(|i| 0.09 * i as f64 - 0.9).collect()).unwrap();
        let v = t.constant(vec![5, 2], (0..10).map(|i| 0.2 * i as f64 - 1.0).collect()).unwrap();
        scaled_dot_product_attention(t, q, k, v, None).unwrap()
    }));
    out.push(check_tape_op("dropout", &[4, 5], 109, tol, |t, x| {
        // fixed seed per evaluation keeps the mask constant, so the loss is
        // a pure function and central differences remain valid
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        t.dropout(x, 0.3, true, &mut rng).unwrap()
    }));
    out.push(check_tape_op("embedding_affine", &[2, 3, 4], 110, tol, |t, x| {
        let w = t.constant(vec![4, 6], (0..24).map(|i| 0.06 * i as f64 - 0.7).collect()).unwrap();
        let b = t.constant(vec![6], vec![0.1; 6]).unwrap();
        let flat = t.reshape(x, vec![6, 4]).unwrap();
        let h = t.matmul(flat, w).unwrap();
        t.add_bias(h, b).unwrap()
    }));
    out
}

/// The reference configuration for whole-model gradient verification.
pub fn reference_config() -> ModelConfig {
    ModelConfig { d_model: 8, heads: 2, layers: 1, tcn_kernel: 3, ff_hidden: 16, ..ModelConfig::default() }
}

/// A deterministic 3-agent, 6+6-frame scene mixing straight, turning, and
/// partially observed trajectories.
pub fn reference_scene() -> Scene {
    let frames: Vec<FrameRecords> = (0..12)
        .map(|t| {
            let tf = t as f64;
            let mut agents = vec![
                AgentState {
                    agent_id: 1,
                    x: tf * 1.5,
                    y: 0.5,
                    length: 4.5,
                    width: 2.0,
                    heading: 0.0,
                    category: Category::SmallVehicle,
                },
                AgentState {
                    agent_id: 2,
                    x: 8.0 * (0.2 * tf).cos(),
                    y: 8.0 * (0.2 * tf).sin(),
                    length: 1.75,
                    width: 0.5,
                    heading: crate::data::wrap_angle(0.2 * tf + std::f64::consts::FRAC_PI_2),
                    category: Category::Cyclist,
                },
            ];
            if t >= 2 {
                agents.push(AgentState {
                    agent_id: 3,
                    x: 3.0,
                    y: tf * 0.75 - 2.0,
                    length: 0.5,
                    width: 0.5,
                    heading: std::f64::consts::FRAC_PI_2,
                    category: Category::Pedestrian,
                });
            }
            FrameRecords { frame_id: t + 1, agents }
        })
        .collect();
    let scene = build_scenes(&frames, &WindowParams::default())
        .expect("reference frames are valid")
        .0
        .scenes
        .remove(0);
    normalize_scene(&scene).0
}

/// Teacher-forced scene loss in evaluation mode (dropout off), as a pure
/// function of the parameters.
fn scene_loss_value(model: &S2TNet, scene: &Scene) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx { training: false, rng: &mut rng };
    let pred = model.teacher_forced_prediction(&mut tape, &bound, scene, &mut ctx)?;
    let t_pred = model.config.t_pred;
    let mut gt = crate::numerics::Tensor::zeros(vec![t_pred, scene.n, 2]);
    for s in 0..t_pred.min(scene.t_fut()) {
        for i in 0..scene.n {
            gt.set(&[s, i, 0], scene.future.at(&[s, i, 0]));
            gt.set(&[s, i, 1], scene.future.at(&[s, i, 1]));
        }
    }
    let presence = future_presence(scene, t_pred);
    let loss = l2_loss(&mut tape, pred, &gt, &presence)?;
    Ok(tape.value(loss)[0])
}

/// Whole-model check: autodiff gradient of the teacher-forced scene loss
/// versus central finite differences, one entry per parameter group.
pub fn model_suite() -> Result<Vec<GradCheck>> {
    let model = S2TNet::init(reference_config(), 2024)?;
    let scene = reference_scene();

    // analytic gradients from a single backward pass
    let mut analytic_model = model.clone();
    crate::training::scene_loss_backward(
        &mut analytic_model,
        &scene,
        1.0,
        false,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;

    let mut out = Vec::new();
    let names: Vec<String> =
        model.params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
    for (idx, name) in names.iter().enumerate() {
        let x0: Vec<f64> = model.params.named_tensors()[idx].1.data().to_vec();
        let analytic: Vec<f64> = analytic_model.params.named_tensors()[idx]
            .1
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; x0.len()]);
        let loss_fn = |data: &[f64]| -> f64 {
            let mut probe = model.clone();
            {
                let mut named = probe.params.named_tensors_mut();
                named[idx].1.data_mut().copy_from_slice(data);
            }
            scene_loss_value(&probe, &scene).expect("loss evaluation")
        };
        out.push(check(name.clone(), loss_fn, &x0, &analytic, DEFAULT_EPS, MODEL_TOLERANCE));
    }
    Ok(out)
}

/// Primitive checks followed by per-parameter-group model checks.
pub fn full_suite() -> Result<Vec<GradCheck>> {
    let mut out = primitive_suite();
    out.extend(model_suite()?);
    Ok(out)
}
