//! Displacement-error metrics, the constant-velocity baseline, and scoring
//! of forecasters over a dataset.

use std::fmt::Write as _;

use crate::data::{DatasetSplit, Category, Reference, Scene};
use crate::model::{forecast_from_normalized, DecodeMode, Forecast, S2TNet};
use crate::numerics::{BoolTensor, Tensor};
use crate::{Error, Result};

pub const WEIGHT_VEHICLE: f64 = 0.20;
pub const WEIGHT_PEDESTRIAN: f64 = 0.58;
pub const WEIGHT_CYCLIST: f64 = 0.22;

/// Mean Euclidean distance over all valid agent-frames.
pub fn ade(pred: &Tensor, gt: &Tensor, mask: &BoolTensor) -> Result<f64> {
    check_metric_shapes(pred, gt, mask)?;
    let (s, n) = (mask.shape()[0], mask.shape()[1]);
    let mut sum = 0.0;
    let mut count = 0usize;
    for si in 0..s {
        for i in 0..n {
            if !mask.at(&[si, i]) {
                continue;
            }
            sum += point_dist(pred, gt, si, i);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Evaluation("no valid points for ADE".into()));
    }
    Ok(sum / count as f64)
}

/// Mean Euclidean distance at the final predicted frame only, over agents
/// valid there.
pub fn fde(pred: &Tensor, gt: &Tensor, mask: &BoolTensor) -> Result<f64> {
    check_metric_shapes(pred, gt, mask)?;
    let (s, n) = (mask.shape()[0], mask.shape()[1]);
    if s == 0 {
        return Err(Error::Evaluation("no frames for FDE".into()));
    }
    let last = s - 1;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if !mask.at(&[last, i]) {
            continue;
        }
        sum += point_dist(pred, gt, last, i);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Evaluation("no agents valid at the final frame for FDE".into()));
    }
    Ok(sum / count as f64)
}

fn check_metric_shapes(pred: &Tensor, gt: &Tensor, mask: &BoolTensor) -> Result<()> {
    if pred.shape() != gt.shape()
        || pred.shape().len() != 3
        || pred.shape()[2] != 2
        || mask.shape() != &pred.shape()[..2]
    {
        return Err(Error::Evaluation(format!(
            "metric shapes disagree: pred {:?}, gt {:?}, mask {:?}",
            pred.shape(),
            gt.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

fn point_dist(pred: &Tensor, gt: &Tensor, s: usize, i: usize) -> f64 {
    let dx = pred.at(&[s, i, 0]) - gt.at(&[s, i, 0]);
    let dy = pred.at(&[s, i, 1]) - gt.at(&[s, i, 1]);
    dx.hypot(dy)
}

/// Category-weighted sums over (vehicle, pedestrian, cyclist) values.
/// Missing categories are skipped and flag the result as partial.
pub fn weighted_metrics(
    vehicle: Option<f64>,
    pedestrian: Option<f64>,
    cyclist: Option<f64>,
) -> (f64, bool) {
    let mut sum = 0.0;
    let mut partial = false;
    for (value, weight) in [
        (vehicle, WEIGHT_VEHICLE),
        (pedestrian, WEIGHT_PEDESTRIAN),
        (cyclist, WEIGHT_CYCLIST),
    ] {
        match value {
            Some(v) => sum += weight * v,
            None => partial = true,
        }
    }
    (sum, partial)
}

/// Metric pooling classes: small and big vehicles score together, category
/// "others" is reported but excluded from the weighted sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Other,
}

impl MetricClass {
    pub fn of(category: Category) -> MetricClass {
        match category {
            Category::SmallVehicle | Category::BigVehicle => MetricClass::Vehicle,
            Category::Pedestrian => MetricClass::Pedestrian,
            Category::Cyclist => MetricClass::Cyclist,
            Category::Other => MetricClass::Other,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CategoryMetrics {
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    pub ade_points: usize,
    pub fde_agents: usize,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub vehicle: CategoryMetrics,
    pub pedestrian: CategoryMetrics,
    pub cyclist: CategoryMetrics,
    pub others: CategoryMetrics,
    pub wsade: f64,
    pub wsfde: f64,
    /// True when some weighted category had no valid points.
    pub partial: bool,
}

impl MetricsReport {
    fn from_pools(mut pools: [MetricPool; 4]) -> MetricsReport {
        let vehicle = pools[0].finish();
        let pedestrian = pools[1].finish();
        let cyclist = pools[2].finish();
        let others = pools[3].finish();
        let (wsade, p1) = weighted_metrics(vehicle.ade, pedestrian.ade, cyclist.ade);
        let (wsfde, p2) = weighted_metrics(vehicle.fde, pedestrian.fde, cyclist.fde);
        MetricsReport {
            vehicle,
            pedestrian,
            cyclist,
            others,
            wsade,
            wsfde,
            partial: p1 || p2,
        }
    }

    /// Aligned plain-text table, columns in leaderboard order.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".into(),
        };
        let mut out = String::new();
        let header = ["WSADE", "ADEv", "ADEp", "ADEb", "WSFDE", "FDEv", "FDEp", "FDEb"];
        let values = [
            format!("{:.4}", self.wsade),
            fmt(self.vehicle.ade),
            fmt(self.pedestrian.ade),
            fmt(self.cyclist.ade),
            format!("{:.4}", self.wsfde),
            fmt(self.vehicle.fde),
            fmt(self.pedestrian.fde),
            fmt(self.cyclist.fde),
        ];
        for (h, v) in header.iter().zip(&values) {
            let w = h.len().max(v.len());
            let _ = write!(out, "{h:>w$}  ");
        }
        out.push('\n');
        for (h, v) in header.iter().zip(&values) {
            let w = h.len().max(v.len());
            let _ = write!(out, "{v:>w$}  ");
        }
        out.push('\n');
        if self.partial {
            out.push_str("(partial: some weighted categories had no valid points)\n");
        }
        out
    }

    /// Single-row CSV with a header line, leaderboard column order.
    pub fn csv(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x}"),
            None => String::new(),
        };
        format!(
            "wsade,ade_v,ade_p,ade_b,wsfde,fde_v,fde_p,fde_b,partial\n{},{},{},{},{},{},{},{},{}\n",
            self.wsade,
            fmt(self.vehicle.ade),
            fmt(self.pedestrian.ade),
            fmt(self.cyclist.ade),
            self.wsfde,
            fmt(self.vehicle.fde),
            fmt(self.pedestrian.fde),
            fmt(self.cyclist.fde),
            self.partial
        )
    }
}

#[derive(Clone, Debug, Default)]
struct MetricPool {
    dist_sum: f64,
    dist_count: usize,
    final_sum: f64,
    final_count: usize,
}

impl MetricPool {
    fn finish(&mut self) -> CategoryMetrics {
        CategoryMetrics {
            ade: (self.dist_count > 0).then(|| self.dist_sum / self.dist_count as f64),
            fde: (self.final_count > 0).then(|| self.final_sum / self.final_count as f64),
            ade_points: self.dist_count,
            fde_agents: self.final_count,
        }
    }
}

/// Anything that can predict a scene's future.
pub trait Forecaster {
    fn forecast(&self, scene: &Scene) -> Result<Forecast>;
    fn name(&self) -> &'static str;
}

impl Forecaster for S2TNet {
    fn forecast(&self, scene: &Scene) -> Result<Forecast> {
        self.generate_trajectory(scene, DecodeMode::Autoregressive)
    }

    fn name(&self) -> &'static str {
        "s2tnet"
    }
}

/// Constant-velocity baseline: the mean per-frame displacement over observed
/// consecutive valid frame pairs, extrapolated from the last observed
/// position. Single-frame agents fall back to zero velocity.
pub struct CvBaseline {
    pub t_pred: usize,
}

impl Default for CvBaseline {
    fn default() -> Self {
        CvBaseline { t_pred: 6 }
    }
}

impl Forecaster for CvBaseline {
    fn forecast(&self, scene: &Scene) -> Result<Forecast> {
        let mut predicted = Tensor::zeros(vec![self.t_pred, scene.n, 2]);
        for i in 0..scene.n {
            let mut vx_sum = 0.0;
            let mut vy_sum = 0.0;
            let mut pairs = 0usize;
            for t in 1..scene.t_obs {
                if scene.presence.at(&[t, i]) && scene.presence.at(&[t - 1, i]) {
                    let (x0, y0) = scene.observed_pos(t - 1, i);
                    let (x1, y1) = scene.observed_pos(t, i);
                    vx_sum += x1 - x0;
                    vy_sum += y1 - y0;
                    pairs += 1;
                }
            }
            let (vx, vy) = if pairs > 0 {
                (vx_sum / pairs as f64, vy_sum / pairs as f64)
            } else {
                (0.0, 0.0)
            };
            let (lx, ly) = scene.last_observed_pos(i);
            for s in 0..self.t_pred {
                let k = (s + 1) as f64;
                predicted.set(&[s, i, 0], lx + k * vx);
                predicted.set(&[s, i, 1], ly + k * vy);
            }
        }
        Ok(forecast_from_normalized(scene, predicted, self.t_pred))
    }

    fn name(&self) -> &'static str {
        "cv"
    }
}

/// Per-scene pooled metrics row for the evaluation CSV.
#[derive(Clone, Debug)]
pub struct SceneMetrics {
    pub scene_index: usize,
    pub first_frame: i64,
    pub agents: usize,
    pub valid_points: usize,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
}

pub fn scene_metrics_csv(rows: &[SceneMetrics]) -> String {
    let mut out = String::from("scene,first_frame,agents,valid_points,ade,fde\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scene_index,
            r.first_frame,
            r.agents,
            r.valid_points,
            fmt(r.ade),
            fmt(r.fde)
        );
    }
    out
}

/// Ground-truth future in global coordinates.
fn global_future(scene: &Scene) -> Tensor {
    let r = scene.reference.unwrap_or(Reference { cx: 0.0, cy: 0.0 });
    let mut gt = scene.future.clone();
    for s in 0..scene.t_fut() {
        for i in 0..scene.n {
            if scene.presence.at(&[scene.t_obs + s, i]) {
                gt.set(&[s, i, 0], scene.future.at(&[s, i, 0]) + r.cx);
                gt.set(&[s, i, 1], scene.future.at(&[s, i, 1]) + r.cy);
            }
        }
    }
    gt
}

/// Runs the forecaster over every scene, pooling per-point errors by metric
/// class.
pub fn evaluate(
    forecaster: &dyn Forecaster,
    dataset: &DatasetSplit,
) -> Result<(MetricsReport, Vec<SceneMetrics>)> {
    let mut pools: [MetricPool; 4] = Default::default();
    let mut rows = Vec::with_capacity(dataset.scenes.len());
    for (idx, scene) in dataset.scenes.iter().enumerate() {
        let forecast = forecaster.forecast(scene)?;
        let t_pred = forecast.positions.shape()[0];
        if scene.t_fut() < t_pred {
            return Err(Error::Evaluation(format!(
                "scene {idx} has {} future frames, forecast covers {t_pred}",
                scene.t_fut()
            )));
        }
        let gt = global_future(scene);
        let last = t_pred - 1;
        let mut scene_pool = MetricPool::default();
        for i in 0..scene.n {
            let class = MetricClass::of(scene.agents[i].category);
            let pool = &mut pools[class_slot(class)];
            for s in 0..t_pred {
                if !forecast.validity.at(&[s, i]) {
                    continue;
                }
                let d = point_dist(&forecast.positions, &gt, s, i);
                pool.dist_sum += d;
                pool.dist_count += 1;
                scene_pool.dist_sum += d;
                scene_pool.dist_count += 1;
                if s == last {
                    pool.final_sum += d;
                    pool.final_count += 1;
                    scene_pool.final_sum += d;
                    scene_pool.final_count += 1;
                }
            }
        }
        let m = scene_pool.finish();
        rows.push(SceneMetrics {
            scene_index: idx,
            first_frame: scene.first_frame,
            agents: scene.n,
            valid_points: m.ade_points,
            ade: m.ade,
            fde: m.fde,
        });
    }
    Ok((MetricsReport::from_pools(pools), rows))
}

fn class_slot(class: MetricClass) -> usize {
    match class {
        MetricClass::Vehicle => 0,
        MetricClass::Pedestrian => 1,
        MetricClass::Cyclist => 2,
        MetricClass::Other => 3,
    }
}
