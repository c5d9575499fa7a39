use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoder::ForwardCtx;
use super::*;
use crate::data::{normalize_scene, synth_scene, FeatureMode, Scene, SynthKind};
use crate::graph::build_graph;
use crate::model::forward::S2TNet;
use crate::model::temporal::DecodeMode;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_config() -> ModelConfig {
    ModelConfig { d_model: 8, heads: 2, layers: 1, ff_hidden: 16, ..ModelConfig::default() }
}

fn norm_synth(kind: SynthKind, seed: u64) -> Scene {
    let mut r = rng(seed);
    let scene = synth_scene(kind, &mut r);
    normalize_scene(&scene).0
}

// ── parameter bookkeeping ───────────────────────────────────────────────

#[test]
fn bind_order_matches_named_tensors() {
    let configs = vec![
        tiny_config(),
        ModelConfig { spatial_attention: false, tcn: false, ..tiny_config() },
        ModelConfig { temporal_encoder: TemporalEncoderMode::Off, ..tiny_config() },
        ModelConfig {
            temporal_encoder: TemporalEncoderMode::On(FeedForwardKind::Dense),
            decoder_ff: FeedForwardKind::Dense,
            ..tiny_config()
        },
        ModelConfig { spatial_residual: false, ..tiny_config() },
    ];
    for cfg in configs {
        let params = S2TNetParams::init(&cfg, 3).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let named = params.named_tensors();
        assert_eq!(named.len(), bound.bindings.len());
        for ((n1, _), (n2, _)) in named.iter().zip(&bound.bindings) {
            assert_eq!(n1, n2);
        }
        // mutable traversal agrees too
        let mut p2 = params.clone();
        let muts = p2.named_tensors_mut();
        assert_eq!(muts.len(), named.len());
        for ((n1, _), (n2, _)) in muts.iter().zip(named.iter()) {
            assert_eq!(n1, n2);
        }
    }
}

#[test]
fn config_validation_rejects_bad_dimensions() {
    assert!(ModelConfig { d_model: 30, heads: 8, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { tcn_kernel: 4, ..ModelConfig::default() }.validate().is_err());
    assert!(ModelConfig { spatial_limit: Some(-3.0), ..ModelConfig::default() }.validate().is_err());
}

// ── embedding ───────────────────────────────────────────────────────────

#[test]
fn zero_input_embeds_to_masked_bias() {
    let cfg = tiny_config();
    let mut params = S2TNetParams::init(&cfg, 5).unwrap();
    for v in params.embed_b.data_mut() {
        *v = 0.5;
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let feats = Tensor::zeros(vec![2, 2, cfg.feature_dim()]);
    let mut padding = crate::numerics::BoolTensor::filled(vec![2, 2], true);
    padding.set(&[1, 1], false);
    let h = embed_inputs(&mut tape, &feats, &bound, &padding).unwrap();
    let v = tape.value(h);
    for i in 0..cfg.d_model {
        assert_eq!(v[i], 0.5); // present slot: bias broadcast
        assert_eq!(v[3 * cfg.d_model + i], 0.0); // masked slot re-zeroed
    }
}

#[test]
fn identical_agents_embed_identically() {
    let cfg = tiny_config();
    let params = S2TNetParams::init(&cfg, 5).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut feats = Tensor::zeros(vec![1, 2, cfg.feature_dim()]);
    for c in 0..cfg.feature_dim() {
        feats.set(&[0, 0, c], 0.1 * c as f64);
        feats.set(&[0, 1, c], 0.1 * c as f64);
    }
    let padding = crate::numerics::BoolTensor::filled(vec![1, 2], true);
    let h = embed_inputs(&mut tape, &feats, &bound, &padding).unwrap();
    let v = tape.value(h);
    assert_eq!(&v[..cfg.d_model], &v[cfg.d_model..2 * cfg.d_model]);
}

#[test]
fn wrong_feature_width_is_a_config_error() {
    let cfg = tiny_config();
    let params = S2TNetParams::init(&cfg, 5).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let feats = Tensor::zeros(vec![1, 2, 5]);
    let padding = crate::numerics::BoolTensor::filled(vec![1, 2], true);
    let err = embed_inputs(&mut tape, &feats, &bound, &padding).unwrap_err();
    assert!(matches!(err, crate::Error::Config(_)));
}

// ── spatial self-attention ──────────────────────────────────────────────

fn identity_attention(tape: &mut Tape, d: usize) -> BoundAttention {
    let eye = Tensor::eye(d);
    BoundAttention {
        wq: tape.leaf(&eye),
        wk: tape.leaf(&eye),
        wv: tape.leaf(&eye),
        wo: tape.leaf(&eye),
    }
}

#[test]
fn single_agent_attends_only_to_itself() {
    let d = 4;
    let mut tape = Tape::new();
    let attn = identity_attention(&mut tape, d);
    let h = tape.constant(vec![1, 1, d], vec![0.3, -0.2, 0.9, 0.5]).unwrap();
    let mask = crate::numerics::BoolTensor::filled(vec![1, 1, 1], true);
    let out = spatial_self_attention(&mut tape, h, &attn, 2, &mask).unwrap();
    assert_eq!(tape.value(out), tape.value(h));
}

#[test]
fn spatial_attention_reproduces_hand_computed_fixture() {
    // h = 1 head, d = 2, identity weights: agent 0 scores [1/sqrt(2), 0]
    let mut tape = Tape::new();
    let attn = identity_attention(&mut tape, 2);
    let h = tape.constant(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mask = crate::numerics::BoolTensor::filled(vec![1, 2, 2], true);
    let out = spatial_self_attention(&mut tape, h, &attn, 1, &mask).unwrap();
    let v = tape.value(out);
    assert!((v[0] - 0.6698).abs() < 1e-4, "{v:?}");
    assert!((v[1] - 0.3302).abs() < 1e-4, "{v:?}");
}

#[test]
fn spatial_attention_is_permutation_equivariant() {
    let cfg = tiny_config();
    let d = cfg.d_model;
    let (t, n) = (3, 4);
    let mut r = rng(9);
    let data: Vec<f64> = (0..t * n * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let params = S2TNetParams::init(&cfg, 11).unwrap();

    let run = |perm: &[usize]| -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let mut permuted = vec![0.0; data.len()];
        for ti in 0..t {
            for ni in 0..n {
                for c in 0..d {
                    permuted[(ti * n + ni) * d + c] = data[(ti * n + perm[ni]) * d + c];
                }
            }
        }
        let h = tape.constant(vec![t, n, d], permuted).unwrap();
        let mask = crate::numerics::BoolTensor::filled(vec![t, n, n], true);
        let attn = bound.st_layers[0].attn.as_ref().unwrap();
        let out = spatial_self_attention(&mut tape, h, attn, cfg.heads, &mask).unwrap();
        tape.value(out).to_vec()
    };

    let base = run(&[0, 1, 2, 3]);
    let perm = [2usize, 0, 3, 1];
    let permuted_out = run(&perm);
    for ti in 0..t {
        for ni in 0..n {
            for c in 0..d {
                let got = permuted_out[(ti * n + ni) * d + c];
                let expect = base[(ti * n + perm[ni]) * d + c];
                assert!((got - expect).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn spatial_attention_never_mixes_frames() {
    let cfg = tiny_config();
    let d = cfg.d_model;
    let (t, n) = (4, 2);
    let mut r = rng(13);
    let data: Vec<f64> = (0..t * n * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let params = S2TNetParams::init(&cfg, 15).unwrap();
    let run = |input: &[f64]| -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let h = tape.constant(vec![t, n, d], input.to_vec()).unwrap();
        let mask = crate::numerics::BoolTensor::filled(vec![t, n, n], true);
        let attn = bound.st_layers[0].attn.as_ref().unwrap();
        let out = spatial_self_attention(&mut tape, h, attn, cfg.heads, &mask).unwrap();
        tape.value(out).to_vec()
    };
    let base = run(&data);
    let mut perturbed = data.clone();
    for v in &mut perturbed[2 * n * d..3 * n * d] {
        *v += 10.0; // rewrite frame 2 entirely
    }
    let out = run(&perturbed);
    for ti in [0usize, 1, 3] {
        let lo = ti * n * d;
        let hi = lo + n * d;
        assert_eq!(&base[lo..hi], &out[lo..hi], "frame {ti} leaked");
    }
}

// ── TCN sub-layer ───────────────────────────────────────────────────────

#[test]
fn identity_tcn_kernel_gives_layer_norm_of_doubled_input() {
    let d = 4;
    let cfg = ModelConfig { d_model: d, heads: 2, layers: 1, ..ModelConfig::default() };
    let mut tape = Tape::new();
    // kernel [3,1,d,d]: center tap identity
    let mut kern = Tensor::zeros(vec![3, 1, d, d]);
    for c in 0..d {
        kern.set(&[1, 0, c, c], 1.0);
    }
    let kernel = tape.leaf(&kern);
    let norm = BoundNorm {
        gain: tape.leaf(&Tensor::filled(vec![d], 1.0)),
        bias: tape.leaf(&Tensor::zeros(vec![d])),
    };
    let mut r = rng(17);
    let data: Vec<f64> = (0..2 * 2 * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let h = tape.constant(vec![2, 2, d], data.clone()).unwrap();
    let mut ctx_rng = rng(0);
    let mut ctx = ForwardCtx { training: false, rng: &mut ctx_rng };
    let out = tcn_sublayer(&mut tape, h, kernel, &norm, &cfg, &mut ctx).unwrap();

    let doubled: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
    let x = tape.constant(vec![2, 2, d], doubled).unwrap();
    let gain = tape.leaf(&Tensor::filled(vec![d], 1.0));
    let bias = tape.leaf(&Tensor::zeros(vec![d]));
    let expect = tape.layer_norm(x, gain, bias, LAYER_NORM_EPS).unwrap();
    let (a, b) = (tape.value(out).to_vec(), tape.value(expect).to_vec());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn st_encoder_with_zero_layers_returns_masked_embedding() {
    let cfg = ModelConfig { layers: 0, ..tiny_config() };
    let model = S2TNet::init(cfg.clone(), 3).unwrap();
    let scene = norm_synth(SynthKind::ConstantVelocity, 5);
    let graph = build_graph(&scene, None).unwrap();
    let feats = crate::data::encode_features(&scene, &cfg.encoding);

    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut r = rng(0);
    let mut ctx = ForwardCtx { training: false, rng: &mut r };
    let memory = st_encoder_forward(&mut tape, &feats, &graph, &bound, &cfg, &mut ctx).unwrap();
    let embedded = embed_inputs(&mut tape, &feats, &bound, &graph.padding_mask).unwrap();
    assert_eq!(tape.value(memory), tape.value(embedded));
}

#[test]
fn ablation_flags_skip_sublayers() {
    let off = ModelConfig { spatial_attention: false, tcn: false, ..tiny_config() };
    let params = S2TNetParams::init(&off, 3).unwrap();
    assert!(params.st_layers[0].attn.is_none());
    assert!(params.st_layers[0].tcn_kernel.is_none());
    // forward still runs and equals the bare embedding
    let model = S2TNet { config: off.clone(), params };
    let scene = norm_synth(SynthKind::Crossing, 7);
    let graph = build_graph(&scene, None).unwrap();
    let feats = crate::data::encode_features(&scene, &off.encoding);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut r = rng(0);
    let mut ctx = ForwardCtx { training: false, rng: &mut r };
    let memory = st_encoder_forward(&mut tape, &feats, &graph, &bound, &off, &mut ctx).unwrap();
    let embedded = embed_inputs(&mut tape, &feats, &bound, &graph.padding_mask).unwrap();
    assert_eq!(tape.value(memory), tape.value(embedded));
}

#[test]
fn moving_an_excluded_agent_does_not_change_others() {
    // two agents far apart under a 15 m limit: agent 1 may move anywhere
    // beyond the radius without affecting agent 0's encoding
    let cfg = ModelConfig { spatial_limit: Some(15.0), ..tiny_config() };
    let model = S2TNet::init(cfg.clone(), 21).unwrap();

    let make_scene = |far_x: f64| -> Scene {
        let frames: Vec<crate::data::FrameRecords> = (0..12)
            .map(|t| crate::data::FrameRecords {
                frame_id: t as i64 + 1,
                agents: vec![
                    crate::data::AgentState {
                        agent_id: 1,
                        x: t as f64 * 0.5,
                        y: 0.0,
                        length: 4.0,
                        width: 2.0,
                        heading: 0.0,
                        category: crate::data::Category::SmallVehicle,
                    },
                    crate::data::AgentState {
                        agent_id: 2,
                        x: far_x,
                        y: 50.0,
                        length: 4.0,
                        width: 2.0,
                        heading: 0.0,
                        category: crate::data::Category::SmallVehicle,
                    },
                ],
            })
            .collect();
        crate::data::build_scenes(&frames, &crate::data::WindowParams::default())
            .unwrap()
            .0
            .scenes
            .remove(0)
    };

    let encode = |scene: &Scene| -> Vec<f64> {
        let graph = build_graph(scene, cfg.spatial_limit).unwrap();
        let feats = crate::data::encode_features(scene, &cfg.encoding);
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let mut r = rng(0);
        let mut ctx = ForwardCtx { training: false, rng: &mut r };
        let out = st_encoder_forward(&mut tape, &feats, &graph, &bound, &cfg, &mut ctx).unwrap();
        let v = tape.value(out);
        let d = cfg.d_model;
        // agent 0 rows only
        (0..6).flat_map(|t| v[t * 2 * d..t * 2 * d + d].to_vec()).collect()
    };

    // both variants keep agent 2 outside the 15 m radius (y offset 50 m)
    let a = encode(&make_scene(100.0));
    let b = encode(&make_scene(400.0));
    assert_eq!(a, b);
}

// ── positional encoding ─────────────────────────────────────────────────

#[test]
fn position_zero_is_zeros_and_ones() {
    let pe = positional_encoding(1, 8);
    for col in 0..8 {
        let expect = if col % 2 == 0 { 0.0 } else { 1.0 };
        assert_eq!(pe.at(&[0, col]), expect);
    }
}

#[test]
fn unit_angle_column_evaluates_to_sin_one() {
    // d_model 8, pair index 2: denominator 10000^(4/8) = 100, so position
    // 100 drives that sine column to sin(1)
    let pe = positional_encoding(101, 8);
    assert!((pe.at(&[100, 4]) - 1.0_f64.sin()).abs() < 1e-12);
    assert!((pe.at(&[100, 5]) - 1.0_f64.cos()).abs() < 1e-12);
}

#[test]
fn encoding_values_bounded_and_rows_distinct() {
    let pe = positional_encoding(100, 32);
    assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    for a in 0..100 {
        for b in (a + 1)..100 {
            let row_a = &pe.data()[a * 32..(a + 1) * 32];
            let row_b = &pe.data()[b * 32..(b + 1) * 32];
            assert_ne!(row_a, row_b, "positions {a} and {b} collide");
        }
    }
}

// ── temporal encoder ────────────────────────────────────────────────────

#[test]
fn temporal_encoder_is_per_agent_independent() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg.clone(), 31).unwrap();
    let d = cfg.d_model;
    let t = 6;
    let mut r = rng(33);
    let agent0: Vec<f64> = (0..t * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let agent1: Vec<f64> = (0..t * d).map(|_| r.gen_range(-1.0..1.0)).collect();

    let run = |agents: &[&[f64]]| -> Vec<f64> {
        let n = agents.len();
        let mut data = vec![0.0; t * n * d];
        for ti in 0..t {
            for (ni, a) in agents.iter().enumerate() {
                data[(ti * n + ni) * d..(ti * n + ni) * d + d]
                    .copy_from_slice(&a[ti * d..(ti + 1) * d]);
            }
        }
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let h = tape.constant(vec![t, n, d], data).unwrap();
        let mask = crate::numerics::BoolTensor::filled(vec![n, t, t], true);
        let mut r2 = rng(0);
        let mut ctx = ForwardCtx { training: false, rng: &mut r2 };
        let out =
            temporal_encoder_forward(&mut tape, h, &mask, &bound.te_layers, &cfg, &mut ctx)
                .unwrap();
        tape.value(out).to_vec()
    };

    let solo = run(&[&agent0]);
    let joint = run(&[&agent0, &agent1]);
    for ti in 0..t {
        let joint_row = &joint[ti * 2 * d..ti * 2 * d + d];
        let solo_row = &solo[ti * d..(ti + 1) * d];
        assert_eq!(joint_row, solo_row, "agent 0 differs at frame {ti}");
    }
}

#[test]
fn single_frame_temporal_attention_weight_is_one() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg.clone(), 41).unwrap();
    let d = cfg.d_model;
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut r = rng(43);
    let data: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let h = tape.constant(vec![1, 1, d], data).unwrap();
    let mask = crate::numerics::BoolTensor::filled(vec![1, 1, 1], true);
    let mut r2 = rng(0);
    let mut ctx = ForwardCtx { training: false, rng: &mut r2 };
    let out =
        temporal_encoder_forward(&mut tape, h, &mask, &bound.te_layers, &cfg, &mut ctx).unwrap();
    assert!(tape.value(out).iter().all(|v| v.is_finite()));
    assert_eq!(tape.all_masked_rows(), 0);
}

// ── decoder ─────────────────────────────────────────────────────────────

#[test]
fn causal_mask_pattern_for_three_steps() {
    let mask = super::temporal::causal_mask_for_test(3);
    let mut admitted = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            if mask.at(&[0, i, j]) {
                admitted.push((i, j));
            }
        }
    }
    assert_eq!(admitted, vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]);
}

#[test]
fn partially_observed_agents_never_starve_cross_attention() {
    // an agent absent from early frames still has admissible encoder frames
    // for every decoder query, so no all-masked rows appear while decoding
    let cfg = tiny_config();
    let model = S2TNet::init(cfg.clone(), 45).unwrap();
    let frames: Vec<crate::data::FrameRecords> = (0..12)
        .map(|t| {
            let mut agents = vec![crate::data::AgentState {
                agent_id: 1,
                x: t as f64,
                y: 0.0,
                length: 4.0,
                width: 2.0,
                heading: 0.0,
                category: crate::data::Category::SmallVehicle,
            }];
            if t >= 4 {
                agents.push(crate::data::AgentState {
                    agent_id: 2,
                    x: 0.0,
                    y: t as f64,
                    length: 0.5,
                    width: 0.5,
                    heading: 1.0,
                    category: crate::data::Category::Pedestrian,
                });
            }
            crate::data::FrameRecords { frame_id: t as i64 + 1, agents }
        })
        .collect();
    let scene = crate::data::build_scenes(&frames, &crate::data::WindowParams::default())
        .unwrap()
        .0
        .scenes
        .remove(0);
    let scene = crate::data::normalize_scene(&scene).0;
    let graph = build_graph(&scene, None).unwrap();

    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut r = rng(0);
    let mut ctx = ForwardCtx { training: false, rng: &mut r };
    let enc = model.encode(&mut tape, &bound, &scene, &graph, &mut ctx).unwrap();
    let masked_during_encoding = tape.all_masked_rows();
    let inputs = crate::model::teacher_inputs(&scene, 6);
    temporal_decoder_forward(&mut tape, &inputs, enc, &graph.padding_mask, &bound, &cfg, &mut ctx)
        .unwrap();
    // encoding sees dead rows for the absent agent's padded frames; the
    // decoder must add none
    assert_eq!(tape.all_masked_rows(), masked_during_encoding);
}

#[test]
fn ss_off_keeps_tcn_sublayer() {
    let cfg = ModelConfig { spatial_attention: false, tcn: true, ..tiny_config() };
    let params = S2TNetParams::init(&cfg, 3).unwrap();
    assert!(params.st_layers[0].attn.is_none());
    assert!(params.st_layers[0].tcn_kernel.is_some());
    let cfg2 = ModelConfig { spatial_attention: true, tcn: false, ..tiny_config() };
    let params2 = S2TNetParams::init(&cfg2, 3).unwrap();
    assert!(params2.st_layers[0].attn.is_some());
    assert!(params2.st_layers[0].tcn_kernel.is_none());
}

#[test]
fn decoder_rejects_empty_input() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg.clone(), 51).unwrap();
    let scene = norm_synth(SynthKind::ConstantVelocity, 53);
    let graph = build_graph(&scene, None).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut r = rng(0);
    let mut ctx = ForwardCtx { training: false, rng: &mut r };
    let enc = model.encode(&mut tape, &bound, &scene, &graph, &mut ctx).unwrap();
    let empty = Tensor::zeros(vec![0, scene.n, 2]);
    let err = temporal_decoder_forward(
        &mut tape,
        &empty,
        enc,
        &graph.padding_mask,
        &bound,
        &cfg,
        &mut ctx,
    );
    assert!(err.is_err());
}

#[test]
fn decoder_outputs_are_causal() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg.clone(), 61).unwrap();
    let scene = norm_synth(SynthKind::Crossing, 63);
    let graph = build_graph(&scene, None).unwrap();
    let mut r = rng(65);
    let s = 5;
    let base: Vec<f64> = (0..s * scene.n * 2).map(|_| r.gen_range(-1.0..1.0)).collect();

    let run = |inputs: &[f64]| -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let mut r2 = rng(0);
        let mut ctx = ForwardCtx { training: false, rng: &mut r2 };
        let enc = model.encode(&mut tape, &bound, &scene, &graph, &mut ctx).unwrap();
        let t = Tensor::new(vec![s, scene.n, 2], inputs.to_vec()).unwrap();
        let out = temporal_decoder_forward(
            &mut tape,
            &t,
            enc,
            &graph.padding_mask,
            &bound,
            &cfg,
            &mut ctx,
        )
        .unwrap();
        tape.value(out).to_vec()
    };

    let reference = run(&base);
    for perturb_at in 1..s {
        let mut changed = base.clone();
        for v in &mut changed[perturb_at * scene.n * 2..(perturb_at + 1) * scene.n * 2] {
            *v += 3.0;
        }
        let out = run(&changed);
        let cutoff = perturb_at * scene.n * cfg.d_model;
        for idx in 0..cutoff {
            assert!(
                (out[idx] - reference[idx]).abs() < 1e-12,
                "row before {perturb_at} changed at {idx}"
            );
        }
    }
}

// ── trajectory generation ───────────────────────────────────────────────

#[test]
fn zero_generator_predicts_stationary_repeat_of_last_position() {
    let cfg = tiny_config();
    let mut model = S2TNet::init(cfg, 71).unwrap();
    for v in model.params.gen_w.data_mut() {
        *v = 0.0;
    }
    for v in model.params.gen_b.data_mut() {
        *v = 0.0;
    }
    let scene = norm_synth(SynthKind::ConstantVelocity, 73);
    let forecast = model.generate_trajectory(&scene, DecodeMode::Autoregressive).unwrap();
    let reference = scene.reference.unwrap();
    for i in 0..scene.n {
        let (lx, ly) = scene.last_observed_pos(i);
        let expect = crate::data::denormalize_point((lx, ly), &reference);
        for s in 0..6 {
            assert_eq!(forecast.positions.at(&[s, i, 0]), expect.0);
            assert_eq!(forecast.positions.at(&[s, i, 1]), expect.1);
        }
    }
}

#[test]
fn teacher_forcing_on_own_outputs_matches_autoregressive() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg, 81).unwrap();
    let mut scene = norm_synth(SynthKind::Turn, 83);
    let ar = model.generate_trajectory(&scene, DecodeMode::Autoregressive).unwrap();

    // overwrite ground truth with the model's own normalized outputs
    let reference = scene.reference.unwrap();
    for s in 0..6 {
        for i in 0..scene.n {
            scene.future.set(&[s, i, 0], ar.positions.at(&[s, i, 0]) - reference.cx);
            scene.future.set(&[s, i, 1], ar.positions.at(&[s, i, 1]) - reference.cy);
            scene.presence.set(&[scene.t_obs + s, i], true);
        }
    }
    let tf = model.generate_trajectory(&scene, DecodeMode::TeacherForced).unwrap();
    for (a, b) in ar.positions.data().iter().zip(tf.positions.data()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn forecast_shape_is_t_pred_by_n_by_two() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg, 91).unwrap();
    for seed in [1, 2, 3] {
        let scene = norm_synth(SynthKind::ConstantVelocity, seed);
        let f = model.generate_trajectory(&scene, DecodeMode::Autoregressive).unwrap();
        assert_eq!(f.positions.shape(), &[6, scene.n, 2]);
        assert_eq!(f.validity.shape(), &[6, scene.n]);
    }
}

#[test]
fn teacher_forcing_without_ground_truth_is_an_error() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg, 95).unwrap();
    let mut scene = norm_synth(SynthKind::Stationary, 97);
    scene.future = Tensor::zeros(vec![0, scene.n, 2]);
    scene.t_total = scene.t_obs;
    let mut presence = crate::numerics::BoolTensor::filled(vec![scene.t_obs, scene.n], true);
    for t in 0..scene.t_obs {
        for i in 0..scene.n {
            presence.set(&[t, i], scene.presence.at(&[t, i]));
        }
    }
    scene.presence = presence;
    assert!(model.generate_trajectory(&scene, DecodeMode::TeacherForced).is_err());
    // autoregressive prediction still works without a future
    assert!(model.generate_trajectory(&scene, DecodeMode::Autoregressive).is_ok());
}

#[test]
fn generation_is_deterministic_in_eval_mode() {
    let cfg = tiny_config();
    let model = S2TNet::init(cfg, 99).unwrap();
    let scene = norm_synth(SynthKind::Crossing, 101);
    let a = model.generate_trajectory(&scene, DecodeMode::Autoregressive).unwrap();
    let b = model.generate_trajectory(&scene, DecodeMode::Autoregressive).unwrap();
    assert_eq!(a.positions.data(), b.positions.data());
}

#[test]
fn coords_only_model_runs_end_to_end() {
    let cfg = ModelConfig {
        encoding: crate::data::FeatureEncoding {
            mode: FeatureMode::CoordsOnly,
            heading: crate::data::HeadingMode::CosSin,
        },
        ..tiny_config()
    };
    let model = S2TNet::init(cfg, 103).unwrap();
    let scene = norm_synth(SynthKind::ConstantVelocity, 105);
    assert!(model.generate_trajectory(&scene, DecodeMode::Autoregressive).is_ok());
}
