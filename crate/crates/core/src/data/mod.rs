//! Trajectory ingestion and scene construction.
//!
//! Raw logs are whitespace-separated text, one observation per line:
//! `frame_id object_id object_type x y z length width height heading`.
//! Frames are windowed into fixed-length scenes (6 observed + 6 future
//! frames by default), normalized to a per-scene reference point, and
//! encoded into model input features.

mod parse;
mod scene;
mod synth;

pub use parse::{parse_trajectory_file, parse_trajectory_str, write_records, FrameRecords, ParseOutcome};
pub use scene::{
    build_scenes, denormalize_point, denormalize_scene, encode_features, normalize_scene,
    random_rotation, rotate_scene, scene_to_records, AgentMeta, BuildStats, DatasetSplit,
    FeatureEncoding, FeatureMode, HeadingMode, Reference, Scene, WindowParams, FEAT_CAT,
    FEAT_HEADING, FEAT_LEN, FEAT_WIDTH, FEAT_X, FEAT_Y, SCENE_FEATURES,
};
pub use synth::{synth_dataset, synth_scene, SynthKind};

#[cfg(test)]
mod tests_data;

use std::f64::consts::{PI, TAU};

/// Traffic-agent category codes used by the trajectory format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    SmallVehicle = 1,
    BigVehicle = 2,
    Pedestrian = 3,
    Cyclist = 4,
    Other = 5,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::SmallVehicle,
        Category::BigVehicle,
        Category::Pedestrian,
        Category::Cyclist,
        Category::Other,
    ];

    pub fn from_code(code: i64) -> Option<Category> {
        match code {
            1 => Some(Category::SmallVehicle),
            2 => Some(Category::BigVehicle),
            3 => Some(Category::Pedestrian),
            4 => Some(Category::Cyclist),
            5 => Some(Category::Other),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        self as i64
    }

    /// Zero-based one-hot slot.
    pub fn index(self) -> usize {
        self as usize - 1
    }
}

/// One observed agent state within a frame.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub agent_id: i64,
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
    pub category: Category,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}
