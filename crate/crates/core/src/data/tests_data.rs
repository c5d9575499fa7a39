use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One agent with id 1 walking +x at 1 m/frame over `frames` frames.
fn walking_records(frames: usize) -> Vec<FrameRecords> {
    (0..frames)
        .map(|t| FrameRecords {
            frame_id: t as i64 + 1,
            agents: vec![AgentState {
                agent_id: 1,
                x: t as f64,
                y: 0.0,
                length: 4.5,
                width: 2.0,
                heading: 0.0,
                category: Category::SmallVehicle,
            }],
        })
        .collect()
}

fn agent(id: i64, x: f64, y: f64) -> AgentState {
    AgentState {
        agent_id: id,
        x,
        y,
        length: 1.0,
        width: 1.0,
        heading: 0.0,
        category: Category::Pedestrian,
    }
}

// ── windowing ───────────────────────────────────────────────────────────

#[test]
fn twelve_frames_three_agents_make_one_full_scene() {
    let frames: Vec<FrameRecords> = (0..12)
        .map(|t| FrameRecords {
            frame_id: t + 1,
            agents: (0..3).map(|i| agent(i + 1, i as f64, t as f64)).collect(),
        })
        .collect();
    let (split, stats) = build_scenes(&frames, &WindowParams::default()).unwrap();
    assert_eq!(split.scenes.len(), 1);
    assert_eq!(stats.scenes, 1);
    let scene = &split.scenes[0];
    assert_eq!(scene.n, 3);
    assert_eq!(scene.presence.count_true(), 36);
}

#[test]
fn window_count_matches_oracle_for_stride_one() {
    // for a gap-free recording of F frames the count is max(0, F - 11)
    for frames in [0usize, 5, 11, 12, 13, 20, 40] {
        let records = walking_records(frames);
        let (split, _) = build_scenes(&records, &WindowParams::default()).unwrap();
        assert_eq!(split.scenes.len(), frames.saturating_sub(11), "F={frames}");
    }
}

#[test]
fn twenty_frames_stride_one_yield_nine_scenes() {
    let (split, _) = build_scenes(&walking_records(20), &WindowParams::default()).unwrap();
    assert_eq!(split.scenes.len(), 9);
}

#[test]
fn empty_records_yield_zero_scenes() {
    let (split, stats) = build_scenes(&[], &WindowParams::default()).unwrap();
    assert!(split.scenes.is_empty());
    assert_eq!(stats.discarded_windows, 0);
}

#[test]
fn short_recording_is_discarded_and_counted() {
    let (split, stats) = build_scenes(&walking_records(8), &WindowParams::default()).unwrap();
    assert!(split.scenes.is_empty());
    assert_eq!(stats.discarded_windows, 1);
}

#[test]
fn frame_gap_discards_window() {
    let mut records = walking_records(13);
    records.remove(6); // gap inside every candidate window
    let (split, stats) = build_scenes(&records, &WindowParams::default()).unwrap();
    assert!(split.scenes.is_empty());
    assert!(stats.discarded_windows > 0);
}

#[test]
fn agent_set_equals_agents_at_final_observed_frame() {
    // agent 2 joins at frame 6 (last observed), agent 3 exists only in the
    // future half and must be excluded
    let frames: Vec<FrameRecords> = (0..12)
        .map(|t| {
            let mut agents = vec![agent(1, t as f64, 0.0)];
            if t >= 5 {
                agents.push(agent(2, 0.0, t as f64));
            }
            if t >= 6 {
                agents.push(agent(3, 5.0, 5.0));
            }
            FrameRecords { frame_id: t + 1, agents }
        })
        .collect();
    let (split, _) = build_scenes(&frames, &WindowParams::default()).unwrap();
    assert_eq!(split.scenes.len(), 1);
    let scene = &split.scenes[0];
    let ids: Vec<i64> = scene.agents.iter().map(|a| a.agent_id).collect();
    assert_eq!(ids, vec![1, 2]);
    // agent 2's early history is masked out and zero-filled
    let slot = 1;
    for t in 0..5 {
        assert!(!scene.presence.at(&[t, slot]));
        assert_eq!(scene.observed_pos(t, slot), (0.0, 0.0));
    }
    assert!(scene.presence.at(&[5, slot]));
}

#[test]
fn stride_controls_window_overlap() {
    let records = walking_records(36);
    let (train, _) = build_scenes(
        &records,
        &WindowParams { stride: 1, ..WindowParams::default() },
    )
    .unwrap();
    let (eval, _) = build_scenes(
        &records,
        &WindowParams { stride: 12, ..WindowParams::default() },
    )
    .unwrap();
    assert_eq!(train.scenes.len(), 25);
    assert_eq!(eval.scenes.len(), 3);
}

// ── normalization ───────────────────────────────────────────────────────

fn single_agent_scene(x: f64, y: f64) -> Scene {
    let frames: Vec<FrameRecords> = (0..12)
        .map(|t| FrameRecords { frame_id: t + 1, agents: vec![agent(1, x, y)] })
        .collect();
    build_scenes(&frames, &WindowParams::default()).unwrap().0.scenes.remove(0)
}

#[test]
fn normalize_centers_single_agent_at_origin() {
    let scene = single_agent_scene(100.0, 200.0);
    let (norm, r) = normalize_scene(&scene);
    assert_eq!((r.cx, r.cy), (100.0, 200.0));
    for t in 0..6 {
        assert_eq!(norm.observed_pos(t, 0), (0.0, 0.0));
    }
    for s in 0..6 {
        assert_eq!(norm.future_pos(s, 0), (0.0, 0.0));
    }
}

#[test]
fn normalize_subtracts_final_frame_centroid() {
    let frames: Vec<FrameRecords> = (0..12)
        .map(|t| FrameRecords {
            frame_id: t + 1,
            agents: vec![agent(1, 0.0, 0.0), agent(2, 2.0, 2.0)],
        })
        .collect();
    let scene = build_scenes(&frames, &WindowParams::default()).unwrap().0.scenes.remove(0);
    let (norm, r) = normalize_scene(&scene);
    assert_eq!((r.cx, r.cy), (1.0, 1.0));
    assert_eq!(norm.observed_pos(0, 0), (-1.0, -1.0));
    assert_eq!(norm.observed_pos(0, 1), (1.0, 1.0));
}

#[test]
fn normalize_roundtrip_is_bit_exact() {
    let mut r = rng(5);
    for _ in 0..200 {
        // adversarial magnitudes: mix tiny offsets with UTM-scale values
        let base_x = r.gen_range(-1e6..1e6);
        let base_y = r.gen_range(-1e6..1e6);
        let frames: Vec<FrameRecords> = (0..12)
            .map(|t| FrameRecords {
                frame_id: t + 1,
                agents: (0..3)
                    .map(|i| {
                        agent(
                            i + 1,
                            base_x + r.gen_range(-50.0..50.0) + if i == 0 { 1e-9 } else { 0.0 },
                            base_y + r.gen_range(-50.0..50.0),
                        )
                    })
                    .collect(),
            })
            .collect();
        let scene = build_scenes(&frames, &WindowParams::default()).unwrap().0.scenes.remove(0);
        let (norm, reference) = normalize_scene(&scene);
        let back = denormalize_scene(&norm, &reference);
        assert_eq!(back.history.data(), scene.history.data());
        assert_eq!(back.future.data(), scene.future.data());
    }
}

#[test]
fn normalize_skips_masked_slots() {
    let frames: Vec<FrameRecords> = (0..12)
        .map(|t| {
            let mut agents = vec![agent(1, 10.0, 10.0)];
            if t >= 3 {
                agents.push(agent(2, 20.0, 20.0));
            }
            FrameRecords { frame_id: t + 1, agents }
        })
        .collect();
    let scene = build_scenes(&frames, &WindowParams::default()).unwrap().0.scenes.remove(0);
    let (norm, _) = normalize_scene(&scene);
    // agent 2 absent in frames 0..3: zero-filled slots stay exactly zero
    for t in 0..3 {
        assert_eq!(norm.observed_pos(t, 1), (0.0, 0.0));
    }
}

// ── feature encoding ────────────────────────────────────────────────────

#[test]
fn heading_pi_encodes_as_minus_one_zero() {
    let mut scene = single_agent_scene(0.0, 0.0);
    for t in 0..6 {
        scene.history.set(&[t, 0, FEAT_HEADING], std::f64::consts::PI);
    }
    let feats = encode_features(&scene, &FeatureEncoding::default());
    assert_eq!(feats.at(&[0, 0, 4]), -1.0);
    assert!(feats.at(&[0, 0, 5]).abs() < 1e-15);
}

#[test]
fn pedestrian_one_hot_is_third_category_slot() {
    let scene = single_agent_scene(1.0, 2.0);
    let feats = encode_features(&scene, &FeatureEncoding::default());
    let onehot: Vec<f64> = (6..11).map(|c| feats.at(&[0, 0, c])).collect();
    assert_eq!(onehot, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn coords_only_ablation_has_two_features() {
    let enc = FeatureEncoding { mode: FeatureMode::CoordsOnly, heading: HeadingMode::CosSin };
    assert_eq!(enc.dim(), 2);
    let scene = single_agent_scene(3.0, 4.0);
    let feats = encode_features(&scene, &enc);
    assert_eq!(feats.shape(), &[6, 1, 2]);
    assert_eq!(feats.at(&[0, 0, 0]), 3.0);
    assert_eq!(feats.at(&[0, 0, 1]), 4.0);
}

#[test]
fn raw_heading_mode_has_ten_features() {
    let enc = FeatureEncoding { mode: FeatureMode::Full, heading: HeadingMode::Raw };
    assert_eq!(enc.dim(), 10);
}

#[test]
fn encoded_features_are_finite_and_masked_slots_zero() {
    let frames: Vec<FrameRecords> = (0..12)
        .map(|t| {
            let mut agents = vec![agent(1, t as f64, 1.0)];
            if t >= 4 {
                agents.push(agent(2, -(t as f64), 2.0));
            }
            FrameRecords { frame_id: t + 1, agents }
        })
        .collect();
    let scene = build_scenes(&frames, &WindowParams::default()).unwrap().0.scenes.remove(0);
    let feats = encode_features(&scene, &FeatureEncoding::default());
    assert!(feats.data().iter().all(|v| v.is_finite()));
    for t in 0..4 {
        for c in 0..11 {
            assert_eq!(feats.at(&[t, 1, c]), 0.0);
        }
    }
}

// ── rotation ────────────────────────────────────────────────────────────

#[test]
fn zero_rotation_is_identity() {
    let scene = single_agent_scene(3.0, 4.0);
    let (norm, _) = normalize_scene(&scene);
    let mut rotated = norm.clone();
    rotate_scene(&mut rotated, 0.0);
    assert_eq!(rotated.history.data(), norm.history.data());
    assert_eq!(rotated.future.data(), norm.future.data());
}

#[test]
fn quarter_turn_maps_unit_x_to_unit_y() {
    let mut scene = single_agent_scene(0.0, 0.0);
    scene.history.set(&[0, 0, FEAT_X], 1.0);
    scene.history.set(&[0, 0, FEAT_Y], 0.0);
    rotate_scene(&mut scene, std::f64::consts::FRAC_PI_2);
    let (x, y) = scene.observed_pos(0, 0);
    assert!(x.abs() < 1e-9 && (y - 1.0).abs() < 1e-9);
}

#[test]
fn random_rotation_preserves_pairwise_distances_and_speeds() {
    let mut r = rng(17);
    for _ in 0..50 {
        let mut scene = synth_scene(SynthKind::ConstantVelocity, &mut r);
        while scene.n < 2 {
            scene = synth_scene(SynthKind::ConstantVelocity, &mut r);
        }
        let dist = |s: &Scene, t: usize| {
            let (ax, ay) = s.observed_pos(t, 0);
            let (bx, by) = s.observed_pos(t, 1);
            ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
        };
        let speed = |s: &Scene, t: usize| {
            let (ax, ay) = s.observed_pos(t, 0);
            let (bx, by) = s.observed_pos(t + 1, 0);
            ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
        };
        let before_d: Vec<f64> = (0..6).map(|t| dist(&scene, t)).collect();
        let before_s: Vec<f64> = (0..5).map(|t| speed(&scene, t)).collect();
        random_rotation(&mut scene, &mut r);
        for t in 0..6 {
            assert!((dist(&scene, t) - before_d[t]).abs() < 1e-9);
        }
        for t in 0..5 {
            assert!((speed(&scene, t) - before_s[t]).abs() < 1e-9);
        }
    }
}

// ── synthetic scenes ────────────────────────────────────────────────────

#[test]
fn constant_velocity_scene_follows_exact_kinematics() {
    let mut r = rng(23);
    for _ in 0..20 {
        let scene = synth_scene(SynthKind::ConstantVelocity, &mut r);
        for i in 0..scene.n {
            let (x0, y0) = scene.observed_pos(0, i);
            let (x1, y1) = scene.observed_pos(1, i);
            let (vx, vy) = (x1 - x0, y1 - y0);
            for t in 0..6 {
                let (x, y) = scene.observed_pos(t, i);
                assert_eq!(x, x0 + t as f64 * vx);
                assert_eq!(y, y0 + t as f64 * vy);
            }
            for s in 0..6 {
                let (x, y) = scene.future_pos(s, i);
                assert_eq!(x, x0 + (6 + s) as f64 * vx);
                assert_eq!(y, y0 + (6 + s) as f64 * vy);
            }
        }
    }
}

#[test]
fn stationary_scene_never_moves() {
    let mut r = rng(29);
    let scene = synth_scene(SynthKind::Stationary, &mut r);
    for i in 0..scene.n {
        let origin = scene.observed_pos(0, i);
        for t in 0..6 {
            assert_eq!(scene.observed_pos(t, i), origin);
        }
        for s in 0..6 {
            assert_eq!(scene.future_pos(s, i), origin);
        }
    }
}

#[test]
fn crossing_paths_meet_at_window_midpoint() {
    let mut r = rng(31);
    let scene = synth_scene(SynthKind::Crossing, &mut r);
    assert_eq!(scene.n, 2);
    for i in 0..2 {
        let (x5, y5) = scene.observed_pos(5, i);
        let (x6, y6) = scene.future_pos(0, i);
        // midpoint between frames 5 and 6 is the crossing point
        assert_eq!((x5 + x6) / 2.0, 0.0);
        assert_eq!((y5 + y6) / 2.0, 0.0);
    }
}

#[test]
fn synth_scene_is_deterministic_per_seed() {
    for kind in SynthKind::ALL {
        let a = synth_scene(kind, &mut rng(99));
        let b = synth_scene(kind, &mut rng(99));
        assert_eq!(a.history.data(), b.history.data());
        assert_eq!(a.future.data(), b.future.data());
    }
}

#[test]
fn synth_dataset_reingests_to_same_scene_count() {
    let mut r = rng(37);
    let frames = synth_dataset(SynthKind::Crossing, 4, &mut r);
    let text = write_records(&frames);
    let parsed = parse_trajectory_str(&text, "synth").unwrap();
    let (split, _) = build_scenes(&parsed.frames, &WindowParams::default()).unwrap();
    assert_eq!(split.scenes.len(), 4);
    for scene in &split.scenes {
        assert!(scene.n >= 2);
    }
}

#[test]
fn turn_scenes_are_not_constant_velocity() {
    let mut r = rng(41);
    let scene = synth_scene(SynthKind::Turn, &mut r);
    let (x0, y0) = scene.observed_pos(0, 0);
    let (x1, y1) = scene.observed_pos(1, 0);
    let (x2, y2) = scene.observed_pos(2, 0);
    let curvature = ((x2 - x1) - (x1 - x0)).abs() + ((y2 - y1) - (y1 - y0)).abs();
    assert!(curvature > 1e-3, "turn should bend, got {curvature}");
}
