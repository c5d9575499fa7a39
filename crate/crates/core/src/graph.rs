//! Spatio-temporal graph materialized as attention masks.
//!
//! Spatial edges connect agents within one frame (optionally limited to a
//! distance radius), temporal edges connect the same agent across frames.
//! Absent agents have every incident edge masked off.

use crate::data::Scene;
use crate::numerics::BoolTensor;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct STGraph {
    pub node_count: usize,
    pub frame_count: usize,
    /// [T, N, N]: spatial_mask[t][i][j] admits attention from query i to
    /// key j at frame t.
    pub spatial_mask: BoolTensor,
    /// [N, T, T]: temporal_mask[i][t][t1] admits attention from agent i's
    /// frame t to its own frame t1.
    pub temporal_mask: BoolTensor,
    /// [T, N]: true where the agent is actually observed.
    pub padding_mask: BoolTensor,
}

/// Builds the graph over the observation window of a scene. Without a
/// spatial limit every present pair (including self-edges) is admissible;
/// with a limit, only pairs within `limit` meters at that frame are kept.
/// Self-edges of present agents are always admissible.
pub fn build_graph(scene: &Scene, spatial_limit: Option<f64>) -> Result<STGraph> {
    if let Some(limit) = spatial_limit {
        if limit < 0.0 || !limit.is_finite() {
            return Err(Error::Data(format!("spatial limit must be non-negative, got {limit}")));
        }
    }
    let t_obs = scene.t_obs;
    let n = scene.n;
    let mut padding = BoolTensor::filled(vec![t_obs, n], false);
    for t in 0..t_obs {
        for i in 0..n {
            padding.set(&[t, i], scene.presence.at(&[t, i]));
        }
    }

    let mut spatial = BoolTensor::filled(vec![t_obs, n, n], false);
    for t in 0..t_obs {
        for i in 0..n {
            if !padding.at(&[t, i]) {
                continue;
            }
            for j in 0..n {
                if !padding.at(&[t, j]) {
                    continue;
                }
                let admit = match spatial_limit {
                    None => true,
                    Some(limit) => {
                        if i == j {
                            true
                        } else {
                            let (xi, yi) = scene.observed_pos(t, i);
                            let (xj, yj) = scene.observed_pos(t, j);
                            (xi - xj).hypot(yi - yj) <= limit
                        }
                    }
                };
                spatial.set(&[t, i, j], admit);
            }
        }
    }

    let mut temporal = BoolTensor::filled(vec![n, t_obs, t_obs], false);
    for i in 0..n {
        for t in 0..t_obs {
            if !padding.at(&[t, i]) {
                continue;
            }
            for t1 in 0..t_obs {
                temporal.set(&[i, t, t1], padding.at(&[t1, i]));
            }
        }
    }

    Ok(STGraph {
        node_count: n,
        frame_count: t_obs,
        spatial_mask: spatial,
        temporal_mask: temporal,
        padding_mask: padding,
    })
}
