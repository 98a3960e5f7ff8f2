//! Navigation and waypoint-prediction evaluation metrics.

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::heatmap::{polar_to_metric, PolarHeatmap, WaypointSet};
use crate::polar::OccupancyMask;
use crate::world::{geodesic_distance, AgentPose, FloorPlan};
use serde::{Deserialize, Serialize};

/// Step-by-step record of one navigation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode_id: String,
    /// Start pose followed by the pose after every action.
    pub poses: Vec<AgentPose>,
    /// Canonical action tokens, one per step.
    pub actions: Vec<String>,
    pub collisions: Vec<bool>,
    pub requests: Vec<String>,
    pub responses: Vec<String>,
    pub aborted: bool,
}

impl EpisodeTrace {
    pub fn validate(&self) -> Result<()> {
        if self.poses.len() != self.actions.len() + 1 {
            return Err(Error::Validation(format!(
                "trace has {} poses for {} actions",
                self.poses.len(),
                self.actions.len()
            )));
        }
        if self.collisions.len() != self.actions.len() {
            return Err(Error::Validation("collision flags do not match actions".into()));
        }
        Ok(())
    }

    /// True when the agent ended the episode with an explicit stop.
    pub fn stopped(&self) -> bool {
        self.actions.last().map(|a| a == "stop").unwrap_or(false)
    }

    pub fn final_pose(&self) -> &AgentPose {
        self.poses.last().expect("trace has at least the start pose")
    }
}

/// Navigation metrics for one episode (sr/osr are 0-or-1 flags as fractions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavMetrics {
    pub tl: f64,
    pub ne: f64,
    pub osr: f64,
    pub sr: f64,
    pub spl: f64,
    pub collisions: f64,
}

/// Waypoint-predictor metrics for one pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointMetrics {
    pub delta: f64,
    pub pct_open: f64,
    pub d_c: Option<f64>,
    pub d_h: Option<f64>,
    pub s_way: f64,
}

/// Sum of consecutive pose-to-pose Euclidean distances.
pub fn trajectory_length(trace: &EpisodeTrace) -> f64 {
    trace
        .poses
        .windows(2)
        .map(|w| w[0].position().distance(&w[1].position()))
        .sum()
}

/// Geodesic distance from the final pose to the goal.
pub fn navigation_error(trace: &EpisodeTrace, goal: Point2, plan: &FloorPlan) -> Result<f64> {
    geodesic_distance(plan, trace.final_pose().position(), goal)
}

/// Success: the agent issued a stop and halted within the threshold.
/// Aborted traces always count as failures.
pub fn success(trace: &EpisodeTrace, goal: Point2, plan: &FloorPlan, threshold: f64) -> Result<bool> {
    if trace.aborted || !trace.stopped() {
        return Ok(false);
    }
    Ok(navigation_error(trace, goal, plan)? <= threshold)
}

/// Oracle success: any pose along the trace came within the threshold.
pub fn oracle_success(
    trace: &EpisodeTrace,
    goal: Point2,
    plan: &FloorPlan,
    threshold: f64,
) -> Result<bool> {
    let grid = crate::world::NavGrid::new(plan);
    let field = grid.distance_field(goal)?;
    for pose in &trace.poses {
        if grid.distance_from_field(&field, goal, pose.position())? <= threshold {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Success weighted by path length: `S * shortest / max(shortest, tl)`.
pub fn spl(success: bool, shortest: f64, tl: f64) -> Result<f64> {
    if !(shortest > 0.0) {
        return Err(Error::Validation(format!(
            "shortest path must be > 0, got {shortest}"
        )));
    }
    Ok(if success { shortest / shortest.max(tl) } else { 0.0 })
}

/// Collided steps over total steps across a set of traces.
pub fn collision_rate(traces: &[EpisodeTrace]) -> f64 {
    let steps: usize = traces.iter().map(|t| t.collisions.len()).sum();
    if steps == 0 {
        return 0.0;
    }
    let hits: usize = traces
        .iter()
        .map(|t| t.collisions.iter().filter(|c| **c).count())
        .sum();
    hits as f64 / steps as f64
}

fn nearest(p: Point2, set: &[Point2]) -> f64 {
    set.iter().map(|q| p.distance(q)).fold(f64::INFINITY, f64::min)
}

/// Symmetric Chamfer distance: half the sum of the two mean nearest-neighbor
/// distances.
pub fn chamfer(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Validation("chamfer needs non-empty point sets".into()));
    }
    let ab: f64 = a.iter().map(|p| nearest(*p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| nearest(*p, a)).sum::<f64>() / b.len() as f64;
    Ok((ab + ba) / 2.0)
}

/// Hausdorff distance: the larger of the two directed nearest-neighbor maxima.
pub fn hausdorff(a: &[Point2], b: &[Point2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Validation("hausdorff needs non-empty point sets".into()));
    }
    let ab = a.iter().map(|p| nearest(*p, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|p| nearest(*p, a)).fold(0.0, f64::max);
    Ok(ab.max(ba))
}

/// Agent-frame Cartesian point of a metric polar waypoint.
pub fn polar_point(theta_deg: f64, dist_m: f64) -> Point2 {
    crate::geom::bearing_dir(theta_deg).scale(dist_m)
}

/// Waypoint-predictor metrics for one pose: count discrepancy, fraction of
/// predictions in open cells, Chamfer/Hausdorff against the ground truth in
/// metric coordinates, and the mean target-heatmap score at the predicted
/// cells (a stand-in alignment score, reported but not gated on).
pub fn waypoint_metrics(
    predicted: &WaypointSet,
    gt: &[(f64, f64)],
    mask: &OccupancyMask,
    p_star: &PolarHeatmap,
) -> WaypointMetrics {
    let delta = (predicted.len() as f64 - gt.len() as f64).abs();
    if predicted.is_empty() {
        return WaypointMetrics { delta, pct_open: 0.0, d_c: None, d_h: None, s_way: 0.0 };
    }
    let open = predicted
        .waypoints
        .iter()
        .filter(|w| mask.get(w.angle_bin, w.dist_bin))
        .count();
    let pct_open = 100.0 * open as f64 / predicted.len() as f64;
    let s_way = predicted
        .waypoints
        .iter()
        .map(|w| p_star.get(w.angle_bin, w.dist_bin))
        .sum::<f64>()
        / predicted.len() as f64;
    let pred_pts: Vec<Point2> = predicted
        .waypoints
        .iter()
        .map(|w| {
            let (theta, dist) = polar_to_metric(w);
            polar_point(theta, dist)
        })
        .collect();
    let gt_pts: Vec<Point2> = gt.iter().map(|(t, d)| polar_point(*t, *d)).collect();
    let (d_c, d_h) = if gt_pts.is_empty() {
        (None, None)
    } else {
        (
            Some(chamfer(&pred_pts, &gt_pts).expect("both sets non-empty")),
            Some(hausdorff(&pred_pts, &gt_pts).expect("both sets non-empty")),
        )
    };
    WaypointMetrics { delta, pct_open, d_c, d_h, s_way }
}
