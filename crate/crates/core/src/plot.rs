//! SVG trajectory plots: observed history solid, ground truth dashed,
//! predictions dotted, one polyline group per agent with category-coded
//! strokes.

use std::fmt::Write as _;

use crate::data::{Category, Reference, Scene};
use crate::model::Forecast;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 40.0;

fn stroke(category: Category) -> &'static str {
    match category {
        Category::SmallVehicle => "#1f77b4",
        Category::BigVehicle => "#9467bd",
        Category::Pedestrian => "#d62728",
        Category::Cyclist => "#2ca02c",
        Category::Other => "#7f7f7f",
    }
}

struct Viewport {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Viewport {
    fn fit(points: &[(f64, f64)]) -> Viewport {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for &(x, y) in points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        if !min_x.is_finite() {
            return Viewport { min_x: 0.0, min_y: 0.0, scale: 1.0 };
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1e-6);
        let scale = (WIDTH - 2.0 * MARGIN) / span;
        Viewport { min_x, min_y, scale }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            MARGIN + (x - self.min_x) * self.scale,
            HEIGHT - MARGIN - (y - self.min_y) * self.scale,
        )
    }
}

fn polyline(out: &mut String, vp: &Viewport, pts: &[(f64, f64)], color: &str, dash: &str) {
    if pts.len() < 2 {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| {
            let (px, py) = vp.map(x, y);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    let dash_attr = if dash.is_empty() {
        String::new()
    } else {
        format!(" stroke-dasharray=\"{dash}\"")
    };
    let _ = writeln!(
        out,
        "    <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash_attr}/>",
        coords.join(" ")
    );
}

/// Renders one scene (global coordinates) with its optional forecast.
/// `show_future` suppresses the ground-truth layer for deployment-mode
/// scenes without labels.
pub fn scene_svg(scene: &Scene, forecast: Option<&Forecast>, show_future: bool) -> String {
    let reference = scene.reference.unwrap_or(Reference { cx: 0.0, cy: 0.0 });
    let global = |p: (f64, f64)| (p.0 + reference.cx, p.1 + reference.cy);

    let mut all_points = Vec::new();
    for i in 0..scene.n {
        for t in 0..scene.t_obs {
            if scene.presence.at(&[t, i]) {
                all_points.push(global(scene.observed_pos(t, i)));
            }
        }
        if show_future {
            for s in 0..scene.t_fut() {
                if scene.presence.at(&[scene.t_obs + s, i]) {
                    all_points.push(global(scene.future_pos(s, i)));
                }
            }
        }
        if let Some(f) = forecast {
            for s in 0..f.positions.shape()[0] {
                all_points.push((f.positions.at(&[s, i, 0]), f.positions.at(&[s, i, 1])));
            }
        }
    }
    let vp = Viewport::fit(&all_points);

    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");

    for i in 0..scene.n {
        let meta = &scene.agents[i];
        let color = stroke(meta.category);
        let _ = writeln!(out, "  <g id=\"agent-{}\">", meta.agent_id);

        let observed: Vec<(f64, f64)> = (0..scene.t_obs)
            .filter(|&t| scene.presence.at(&[t, i]))
            .map(|t| global(scene.observed_pos(t, i)))
            .collect();
        polyline(&mut out, &vp, &observed, color, "");

        if show_future {
            let mut gt: Vec<(f64, f64)> = Vec::new();
            if let Some(&last) = observed.last() {
                gt.push(last);
            }
            for s in 0..scene.t_fut() {
                if scene.presence.at(&[scene.t_obs + s, i]) {
                    gt.push(global(scene.future_pos(s, i)));
                }
            }
            polyline(&mut out, &vp, &gt, color, "8,6");
        }

        if let Some(f) = forecast {
            let mut pred: Vec<(f64, f64)> = Vec::new();
            if let Some(&last) = observed.last() {
                pred.push(last);
            }
            for s in 0..f.positions.shape()[0] {
                pred.push((f.positions.at(&[s, i, 0]), f.positions.at(&[s, i, 1])));
            }
            polyline(&mut out, &vp, &pred, color, "2,4");
        }

        if let Some(&(x, y)) = observed.last() {
            let (px, py) = vp.map(x, y);
            let _ = writeln!(out, "    <circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\"/>");
        }
        let _ = writeln!(out, "  </g>");
    }
    let _ = writeln!(out, "</svg>");
    out
}
