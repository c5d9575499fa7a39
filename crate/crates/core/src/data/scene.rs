use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use super::{AgentState, Category, FrameRecords};
use crate::numerics::{BoolTensor, Tensor};
use crate::{Error, Result};

/// Feature slots of the raw per-agent history vector.
pub const FEAT_X: usize = 0;
pub const FEAT_Y: usize = 1;
pub const FEAT_LEN: usize = 2;
pub const FEAT_WIDTH: usize = 3;
pub const FEAT_HEADING: usize = 4;
pub const FEAT_CAT: usize = 5;
pub const SCENE_FEATURES: usize = 6;

/// Per-scene translation applied during normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub cx: f64,
    pub cy: f64,
}

/// A fixed-length window of per-agent observations plus future ground truth.
///
/// Coordinates are global unless `reference` is set, in which case they are
/// relative to that reference point.
#[derive(Clone, Debug)]
pub struct Scene {
    pub t_obs: usize,
    pub t_total: usize,
    pub n: usize,
    /// [t_obs, n, 6]: x, y, length, width, heading, category code.
    pub history: Tensor,
    /// [t_total - t_obs, n, 2]: future x, y (zero where absent).
    pub future: Tensor,
    /// [t_total, n]: true where the agent was actually observed.
    pub presence: BoolTensor,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
    pub agents: Vec<AgentMeta>,
    pub first_frame: i64,
    pub reference: Option<Reference>,
}

#[derive(Clone, Debug)]
pub struct AgentMeta {
    pub agent_id: i64,
    pub category: Category,
    pub length: f64,
    pub width: f64,
    /// Heading at the last observed frame, for prediction export.
    pub last_heading: f64,
}

impl Scene {
    pub fn t_fut(&self) -> usize {
        self.t_total - self.t_obs
    }

    /// Position of agent `i` at observed frame `t`.
    pub fn observed_pos(&self, t: usize, i: usize) -> (f64, f64) {
        (self.history.at(&[t, i, FEAT_X]), self.history.at(&[t, i, FEAT_Y]))
    }

    /// Position of agent `i` at future step `s` (0-based after t_obs).
    pub fn future_pos(&self, s: usize, i: usize) -> (f64, f64) {
        (self.future.at(&[s, i, 0]), self.future.at(&[s, i, 1]))
    }

    pub fn last_observed_pos(&self, i: usize) -> (f64, f64) {
        self.observed_pos(self.t_obs - 1, i)
    }
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub scenes: Vec<Scene>,
}

#[derive(Clone, Copy, Debug)]
pub struct WindowParams {
    pub t_obs: usize,
    pub t_fut: usize,
    pub stride: usize,
    pub frame_interval: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams { t_obs: 6, t_fut: 12, stride: 1, frame_interval: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BuildStats {
    pub scenes: usize,
    /// Candidate windows dropped because frames were missing or not
    /// consecutive.
    pub discarded_windows: usize,
}

/// Slides fixed-length windows over frame-sorted records. Agents present at
/// the final observed frame form the agent axis; their missing frames are
/// zero-filled with the presence mask cleared.
pub fn build_scenes(
    frames: &[FrameRecords],
    params: &WindowParams,
) -> Result<(DatasetSplit, BuildStats)> {
    if params.t_obs == 0 || params.t_fut <= params.t_obs {
        return Err(Error::Data(format!(
            "window needs t_fut > t_obs >= 1, got t_obs={} t_fut={}",
            params.t_obs, params.t_fut
        )));
    }
    if params.stride == 0 {
        return Err(Error::Data("stride must be at least 1".into()));
    }
    let t_total = params.t_fut;
    let mut stats = BuildStats::default();
    let mut scenes = Vec::new();

    if frames.len() < t_total {
        if !frames.is_empty() {
            stats.discarded_windows = 1;
        }
        return Ok((DatasetSplit { scenes }, stats));
    }

    let mut start = 0;
    while start + t_total <= frames.len() {
        let window = &frames[start..start + t_total];
        let consecutive = window[t_total - 1].frame_id - window[0].frame_id == (t_total - 1) as i64;
        if !consecutive {
            stats.discarded_windows += 1;
            start += params.stride;
            continue;
        }
        if let Some(scene) = scene_from_window(window, params) {
            scenes.push(scene);
        }
        start += params.stride;
    }
    stats.scenes = scenes.len();
    Ok((DatasetSplit { scenes }, stats))
}

fn scene_from_window(window: &[FrameRecords], params: &WindowParams) -> Option<Scene> {
    let t_obs = params.t_obs;
    let t_total = params.t_fut;
    let last_obs = &window[t_obs - 1];
    if last_obs.agents.is_empty() {
        return None;
    }
    let mut ids: Vec<i64> = last_obs.agents.iter().map(|a| a.agent_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    let slot = |id: i64| ids.binary_search(&id).ok();

    let mut history = Tensor::zeros(vec![t_obs, n, SCENE_FEATURES]);
    let mut future = Tensor::zeros(vec![t_total - t_obs, n, 2]);
    let mut presence = BoolTensor::filled(vec![t_total, n], false);
    let mut agents: Vec<Option<AgentMeta>> = vec![None; n];

    for (t, frame) in window.iter().enumerate() {
        for a in &frame.agents {
            let Some(i) = slot(a.agent_id) else { continue };
            presence.set(&[t, i], true);
            if t < t_obs {
                history.set(&[t, i, FEAT_X], a.x);
                history.set(&[t, i, FEAT_Y], a.y);
                history.set(&[t, i, FEAT_LEN], a.length);
                history.set(&[t, i, FEAT_WIDTH], a.width);
                history.set(&[t, i, FEAT_HEADING], a.heading);
                history.set(&[t, i, FEAT_CAT], a.category.code() as f64);
                if t == t_obs - 1 {
                    agents[i] = Some(AgentMeta {
                        agent_id: a.agent_id,
                        category: a.category,
                        length: a.length,
                        width: a.width,
                        last_heading: a.heading,
                    });
                }
            } else {
                future.set(&[t - t_obs, i, 0], a.x);
                future.set(&[t - t_obs, i, 1], a.y);
            }
        }
    }

    let agents: Vec<AgentMeta> = agents.into_iter().map(|m| m.expect("agent at last frame")).collect();
    Some(Scene {
        t_obs,
        t_total,
        n,
        history,
        future,
        presence,
        frame_interval: params.frame_interval,
        agents,
        first_frame: window[0].frame_id,
        reference: None,
    })
}

/// Translates all coordinates so the centroid of last-observed-frame
/// positions sits at the origin. Falls back to the identity reference when
/// floating-point translation would not invert bit-exactly, so that
/// normalize -> denormalize always round-trips.
pub fn normalize_scene(scene: &Scene) -> (Scene, Reference) {
    let t_last = scene.t_obs - 1;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..scene.n {
        let (x, y) = scene.observed_pos(t_last, i);
        cx += x;
        cy += y;
    }
    cx /= scene.n as f64;
    cy /= scene.n as f64;

    for reference in [Reference { cx, cy }, Reference { cx: 0.0, cy: 0.0 }] {
        if let Some(normalized) = try_translate(scene, reference) {
            return (normalized, reference);
        }
    }
    unreachable!("identity reference always round-trips");
}

fn try_translate(scene: &Scene, r: Reference) -> Option<Scene> {
    let mut out = scene.clone();
    let exact = |v: f64, c: f64| -> Option<f64> {
        let shifted = v - c;
        if shifted + c == v {
            Some(shifted)
        } else {
            None
        }
    };
    for t in 0..scene.t_obs {
        for i in 0..scene.n {
            if !scene.presence.at(&[t, i]) {
                continue;
            }
            let x = exact(scene.history.at(&[t, i, FEAT_X]), r.cx)?;
            let y = exact(scene.history.at(&[t, i, FEAT_Y]), r.cy)?;
            out.history.set(&[t, i, FEAT_X], x);
            out.history.set(&[t, i, FEAT_Y], y);
        }
    }
    for s in 0..scene.t_fut() {
        for i in 0..scene.n {
            if !scene.presence.at(&[scene.t_obs + s, i]) {
                continue;
            }
            let x = exact(scene.future.at(&[s, i, 0]), r.cx)?;
            let y = exact(scene.future.at(&[s, i, 1]), r.cy)?;
            out.future.set(&[s, i, 0], x);
            out.future.set(&[s, i, 1], y);
        }
    }
    out.reference = Some(r);
    Some(out)
}

/// Inverse of [`normalize_scene`] for a whole scene.
pub fn denormalize_scene(scene: &Scene, r: &Reference) -> Scene {
    let mut out = scene.clone();
    for t in 0..scene.t_obs {
        for i in 0..scene.n {
            if !scene.presence.at(&[t, i]) {
                continue;
            }
            out.history.set(&[t, i, FEAT_X], scene.history.at(&[t, i, FEAT_X]) + r.cx);
            out.history.set(&[t, i, FEAT_Y], scene.history.at(&[t, i, FEAT_Y]) + r.cy);
        }
    }
    for s in 0..scene.t_fut() {
        for i in 0..scene.n {
            if !scene.presence.at(&[scene.t_obs + s, i]) {
                continue;
            }
            out.future.set(&[s, i, 0], scene.future.at(&[s, i, 0]) + r.cx);
            out.future.set(&[s, i, 1], scene.future.at(&[s, i, 1]) + r.cy);
        }
    }
    out.reference = None;
    out
}

/// Maps a normalized point back to global coordinates.
pub fn denormalize_point(p: (f64, f64), r: &Reference) -> (f64, f64) {
    (p.0 + r.cx, p.1 + r.cy)
}

/// Which raw features enter the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    /// Coordinates, shape, heading, and category one-hot.
    Full,
    /// Coordinates only.
    CoordsOnly,
}

/// How the heading angle is represented in model inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadingMode {
    /// (cos, sin) pair, continuous across the ±pi seam.
    CosSin,
    /// Raw radians.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureEncoding {
    pub mode: FeatureMode,
    pub heading: HeadingMode,
}

impl Default for FeatureEncoding {
    fn default() -> Self {
        FeatureEncoding { mode: FeatureMode::Full, heading: HeadingMode::CosSin }
    }
}

impl FeatureEncoding {
    pub fn dim(&self) -> usize {
        match (self.mode, self.heading) {
            (FeatureMode::CoordsOnly, _) => 2,
            (FeatureMode::Full, HeadingMode::CosSin) => 11,
            (FeatureMode::Full, HeadingMode::Raw) => 10,
        }
    }
}

/// Builds the model input array [t_obs, n, dim]. Masked slots stay all-zero.
pub fn encode_features(scene: &Scene, enc: &FeatureEncoding) -> Tensor {
    let dim = enc.dim();
    let mut out = Tensor::zeros(vec![scene.t_obs, scene.n, dim]);
    for t in 0..scene.t_obs {
        for i in 0..scene.n {
            if !scene.presence.at(&[t, i]) {
                continue;
            }
            let (x, y) = scene.observed_pos(t, i);
            out.set(&[t, i, 0], x);
            out.set(&[t, i, 1], y);
            if enc.mode == FeatureMode::CoordsOnly {
                continue;
            }
            out.set(&[t, i, 2], scene.history.at(&[t, i, FEAT_LEN]));
            out.set(&[t, i, 3], scene.history.at(&[t, i, FEAT_WIDTH]));
            let heading = scene.history.at(&[t, i, FEAT_HEADING]);
            let cat_base = match enc.heading {
                HeadingMode::CosSin => {
                    out.set(&[t, i, 4], heading.cos());
                    out.set(&[t, i, 5], heading.sin());
                    6
                }
                HeadingMode::Raw => {
                    out.set(&[t, i, 4], heading);
                    5
                }
            };
            let code = scene.history.at(&[t, i, FEAT_CAT]) as i64;
            if let Some(cat) = Category::from_code(code) {
                out.set(&[t, i, cat_base + cat.index()], 1.0);
            }
        }
    }
    out
}

/// Rotates all present positions about the scene reference origin by `phi`
/// radians and shifts headings accordingly.
pub fn rotate_scene(scene: &mut Scene, phi: f64) {
    let (c, s) = (phi.cos(), phi.sin());
    let rot = |x: f64, y: f64| (x * c - y * s, x * s + y * c);
    for t in 0..scene.t_obs {
        for i in 0..scene.n {
            if !scene.presence.at(&[t, i]) {
                continue;
            }
            let (x, y) = scene.observed_pos(t, i);
            let (rx, ry) = rot(x, y);
            scene.history.set(&[t, i, FEAT_X], rx);
            scene.history.set(&[t, i, FEAT_Y], ry);
            let h = scene.history.at(&[t, i, FEAT_HEADING]);
            scene.history.set(&[t, i, FEAT_HEADING], super::wrap_angle(h + phi));
        }
    }
    for s_idx in 0..scene.t_fut() {
        for i in 0..scene.n {
            if !scene.presence.at(&[scene.t_obs + s_idx, i]) {
                continue;
            }
            let (x, y) = scene.future_pos(s_idx, i);
            let (rx, ry) = rot(x, y);
            scene.future.set(&[s_idx, i, 0], rx);
            scene.future.set(&[s_idx, i, 1], ry);
        }
    }
    for meta in &mut scene.agents {
        meta.last_heading = super::wrap_angle(meta.last_heading + phi);
    }
}

/// Training augmentation: a uniform rotation in [0, 2pi).
pub fn random_rotation(scene: &mut Scene, rng: &mut ChaCha8Rng) {
    let phi = rng.gen_range(0.0..TAU);
    rotate_scene(scene, phi);
}

/// Converts a scene back into frame records (observed plus future frames),
/// carrying shape and heading from the agent's last observation.
pub fn scene_to_records(scene: &Scene) -> Vec<FrameRecords> {
    let mut frames = Vec::with_capacity(scene.t_total);
    for t in 0..scene.t_total {
        let mut agents = Vec::new();
        for i in 0..scene.n {
            if !scene.presence.at(&[t, i]) {
                continue;
            }
            let meta = &scene.agents[i];
            let ((x, y), heading) = if t < scene.t_obs {
                (scene.observed_pos(t, i), scene.history.at(&[t, i, FEAT_HEADING]))
            } else {
                (scene.future_pos(t - scene.t_obs, i), meta.last_heading)
            };
            agents.push(AgentState {
                agent_id: meta.agent_id,
                x,
                y,
                length: meta.length,
                width: meta.width,
                heading,
                category: meta.category,
            });
        }
        frames.push(FrameRecords { frame_id: scene.first_frame + t as i64, agents });
    }
    frames
}
