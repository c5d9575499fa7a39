use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scene::{AgentMeta, Scene, FEAT_CAT, FEAT_HEADING, FEAT_LEN, FEAT_WIDTH, FEAT_X, FEAT_Y, SCENE_FEATURES};
use super::{wrap_angle, Category, FrameRecords};
use crate::numerics::{BoolTensor, Tensor};

/// Synthetic scene archetypes with exact analytic ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    ConstantVelocity,
    Turn,
    Crossing,
    Stationary,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [
        SynthKind::ConstantVelocity,
        SynthKind::Turn,
        SynthKind::Crossing,
        SynthKind::Stationary,
    ];

    pub fn parse(s: &str) -> Option<SynthKind> {
        match s {
            "constant_velocity" => Some(SynthKind::ConstantVelocity),
            "turn" => Some(SynthKind::Turn),
            "crossing" => Some(SynthKind::Crossing),
            "stationary" => Some(SynthKind::Stationary),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::ConstantVelocity => "constant_velocity",
            SynthKind::Turn => "turn",
            SynthKind::Crossing => "crossing",
            SynthKind::Stationary => "stationary",
        }
    }
}

const T_OBS: usize = 6;
const T_TOTAL: usize = 12;

/// Values on a multiple-of-0.25 grid keep straight-line kinematics exact in
/// f64 arithmetic, so constant-velocity scenes have bit-exact analytic
/// extrapolations.
fn grid(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    rng.gen_range(lo..=hi) as f64 * 0.25
}

/// Deterministic-given-seed synthetic scene in global coordinates.
pub fn synth_scene(kind: SynthKind, rng: &mut ChaCha8Rng) -> Scene {
    match kind {
        SynthKind::ConstantVelocity => constant_velocity(rng),
        SynthKind::Turn => turn(rng),
        SynthKind::Crossing => crossing(rng),
        SynthKind::Stationary => stationary(rng),
    }
}

/// A batch of scenes in the ingestion record format. Scene windows are
/// separated by frame-id gaps so re-ingestion yields exactly one scene per
/// generated block.
pub fn synth_dataset(kind: SynthKind, count: usize, rng: &mut ChaCha8Rng) -> Vec<FrameRecords> {
    let mut frames = Vec::new();
    for idx in 0..count {
        let mut scene = synth_scene(kind, rng);
        scene.first_frame = (idx as i64) * 100 + 1;
        for (slot, meta) in scene.agents.iter_mut().enumerate() {
            meta.agent_id = (idx as i64) * 100 + slot as i64 + 1;
        }
        frames.extend(super::scene_to_records(&scene));
    }
    frames
}

struct AgentTrack {
    category: Category,
    length: f64,
    width: f64,
    /// Position and heading per frame, 12 entries.
    states: Vec<(f64, f64, f64)>,
}

fn assemble(tracks: Vec<AgentTrack>) -> Scene {
    let n = tracks.len();
    let mut history = Tensor::zeros(vec![T_OBS, n, SCENE_FEATURES]);
    let mut future = Tensor::zeros(vec![T_TOTAL - T_OBS, n, 2]);
    let presence = BoolTensor::filled(vec![T_TOTAL, n], true);
    let mut agents = Vec::with_capacity(n);
    for (i, track) in tracks.iter().enumerate() {
        for (t, &(x, y, heading)) in track.states.iter().enumerate() {
            if t < T_OBS {
                history.set(&[t, i, FEAT_X], x);
                history.set(&[t, i, FEAT_Y], y);
                history.set(&[t, i, FEAT_LEN], track.length);
                history.set(&[t, i, FEAT_WIDTH], track.width);
                history.set(&[t, i, FEAT_HEADING], heading);
                history.set(&[t, i, FEAT_CAT], track.category.code() as f64);
            } else {
                future.set(&[t - T_OBS, i, 0], x);
                future.set(&[t - T_OBS, i, 1], y);
            }
        }
        agents.push(AgentMeta {
            agent_id: i as i64 + 1,
            category: track.category,
            length: track.length,
            width: track.width,
            last_heading: track.states[T_OBS - 1].2,
        });
    }
    Scene {
        t_obs: T_OBS,
        t_total: T_TOTAL,
        n,
        history,
        future,
        presence,
        frame_interval: 0.5,
        agents,
        first_frame: 1,
        reference: None,
    }
}

fn shape_for(category: Category) -> (f64, f64) {
    match category {
        Category::SmallVehicle => (4.5, 2.0),
        Category::BigVehicle => (8.0, 2.5),
        Category::Pedestrian => (0.5, 0.5),
        Category::Cyclist => (1.75, 0.5),
        Category::Other => (1.0, 1.0),
    }
}

fn pick_category(rng: &mut ChaCha8Rng) -> Category {
    Category::ALL[rng.gen_range(0..Category::ALL.len())]
}

fn constant_velocity(rng: &mut ChaCha8Rng) -> Scene {
    let n = rng.gen_range(1..=3);
    let mut tracks = Vec::new();
    for _ in 0..n {
        let category = pick_category(rng);
        let (length, width) = shape_for(category);
        let (x0, y0) = (grid(rng, -32, 32), grid(rng, -32, 32));
        let (mut vx, vy) = (grid(rng, -8, 8), grid(rng, -8, 8));
        if vx == 0.0 && vy == 0.0 {
            vx = 1.0;
        }
        let heading = vy.atan2(vx);
        let states = (0..T_TOTAL)
            .map(|t| (x0 + t as f64 * vx, y0 + t as f64 * vy, heading))
            .collect();
        tracks.push(AgentTrack { category, length, width, states });
    }
    assemble(tracks)
}

fn stationary(rng: &mut ChaCha8Rng) -> Scene {
    let n = rng.gen_range(1..=3);
    let mut tracks = Vec::new();
    for _ in 0..n {
        let category = pick_category(rng);
        let (length, width) = shape_for(category);
        let (x0, y0) = (grid(rng, -32, 32), grid(rng, -32, 32));
        let states = (0..T_TOTAL).map(|_| (x0, y0, 0.0)).collect();
        tracks.push(AgentTrack { category, length, width, states });
    }
    assemble(tracks)
}

fn turn(rng: &mut ChaCha8Rng) -> Scene {
    let n = rng.gen_range(1..=2);
    let mut tracks = Vec::new();
    for _ in 0..n {
        let category = pick_category(rng);
        let (length, width) = shape_for(category);
        let (cx, cy) = (grid(rng, -16, 16), grid(rng, -16, 16));
        let radius = 3.0 + rng.gen_range(0.0..7.0);
        let omega = rng.gen_range(0.15..0.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let theta0 = rng.gen_range(0.0..std::f64::consts::TAU);
        let states = (0..T_TOTAL)
            .map(|t| {
                let theta = theta0 + t as f64 * omega;
                let heading = wrap_angle(theta + omega.signum() * std::f64::consts::FRAC_PI_2);
                (cx + radius * theta.cos(), cy + radius * theta.sin(), heading)
            })
            .collect();
        tracks.push(AgentTrack { category, length, width, states });
    }
    assemble(tracks)
}

/// Two straight paths meeting at the origin at the window midpoint
/// (between frames 5 and 6).
fn crossing(rng: &mut ChaCha8Rng) -> Scene {
    let mid = (T_TOTAL - 1) as f64 / 2.0; // 5.5
    let va = grid(rng, 2, 8).max(0.5);
    let vb = grid(rng, 2, 8).max(0.5);
    let track_a = AgentTrack {
        category: Category::SmallVehicle,
        length: 4.5,
        width: 2.0,
        states: (0..T_TOTAL).map(|t| ((t as f64 - mid) * va, 0.0, 0.0)).collect(),
    };
    let track_b = AgentTrack {
        category: Category::Pedestrian,
        length: 0.5,
        width: 0.5,
        states: (0..T_TOTAL)
            .map(|t| (0.0, (t as f64 - mid) * vb, std::f64::consts::FRAC_PI_2))
            .collect(),
    };
    assemble(vec![track_a, track_b])
}
