//! Heatmap regression loss, occupancy loss, their weighted combination,
//! and the analytic per-cell gradient of the total.
//!
//! Both losses reduce by the mean over all 1440 cells, which keeps the
//! occupancy weight scale-free. All math is in double precision.

use crate::error::{Error, Result};
use crate::heatmap::PolarHeatmap;
use crate::polar::{OccupancyMask, ANGLE_BINS, DIST_BINS};

/// Clamp applied to predicted scores before the log terms of the occupancy loss.
pub const BCE_EPS: f64 = 1e-7;
/// Default occupancy-loss weight.
pub const DEFAULT_LAMBDA_OCC: f64 = 0.5;

const N_CELLS: usize = ANGLE_BINS * DIST_BINS;

/// The components of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_vis: f64,
    pub l_occ: f64,
    pub l_total: f64,
    pub lambda_occ: f64,
}

/// Mean squared error between a predicted and a target heatmap.
pub fn l_vis(p: &PolarHeatmap, p_star: &PolarHeatmap) -> f64 {
    let mut sum = 0.0;
    for (a, b) in p.as_slice().iter().zip(p_star.as_slice()) {
        let d = a - b;
        sum += d * d;
    }
    sum / N_CELLS as f64
}

/// Mean binary cross-entropy between a predicted heatmap (clamped into
/// `[BCE_EPS, 1 - BCE_EPS]`) and the binary occupancy mask.
pub fn l_occ(p: &PolarHeatmap, m: &OccupancyMask) -> f64 {
    let mut sum = 0.0;
    for (s, open) in p.as_slice().iter().zip(m.as_slice()) {
        let s = s.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= if *open { s.ln() } else { (1.0 - s).ln() };
    }
    sum / N_CELLS as f64
}

/// Weighted total `l_vis + lambda_occ * l_occ`.
pub fn l_total(
    p: &PolarHeatmap,
    p_star: &PolarHeatmap,
    m: &OccupancyMask,
    lambda_occ: f64,
) -> Result<LossBreakdown> {
    if lambda_occ < 0.0 {
        return Err(Error::Validation(format!(
            "lambda_occ must be >= 0, got {lambda_occ}"
        )));
    }
    let l_vis = l_vis(p, p_star);
    let l_occ = l_occ(p, m);
    Ok(LossBreakdown {
        l_vis,
        l_occ,
        l_total: l_vis + lambda_occ * l_occ,
        lambda_occ,
    })
}

/// Per-cell gradient of the total loss with respect to the predicted scores.
///
/// The regression term contributes `2 (P - P*) / N` everywhere; the
/// occupancy term contributes `lambda (P - M) / (N P (1 - P))` inside the
/// clamp range and zero at cells pinned by the clamp.
pub fn grad_l_total(
    p: &PolarHeatmap,
    p_star: &PolarHeatmap,
    m: &OccupancyMask,
    lambda_occ: f64,
) -> Vec<f64> {
    let n = N_CELLS as f64;
    let mut grad = vec![0.0; N_CELLS];
    for i in 0..N_CELLS {
        let s = p.as_slice()[i];
        let t = p_star.as_slice()[i];
        let mut g = 2.0 * (s - t) / n;
        if s >= BCE_EPS && s <= 1.0 - BCE_EPS {
            let target = if m.as_slice()[i] { 1.0 } else { 0.0 };
            g += lambda_occ * (s - target) / (n * s * (1.0 - s));
        }
        grad[i] = g;
    }
    grad
}
