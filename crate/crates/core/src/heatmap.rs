//! The 120x12 polar heatmap, ground-truth heatmap construction, and
//! non-maximum-suppression waypoint extraction.

use crate::error::{Error, Result};
use crate::polar::{dist_bin_value, ANGLE_BINS, BIN_DEG, DIST_BINS, DIST_STEP};
use std::io::{Read, Write};

/// Default waypoint budget for NMS.
pub const K_MAX: usize = 5;
/// Default NMS angular suppression radius in bins (about 9 degrees).
pub const NMS_RADIUS_BINS: usize = 3;

/// Gaussian blob parameters for ground-truth heatmaps.
const SIGMA_ANGLE_BINS: f64 = 2.0;
const SIGMA_DIST_BINS: f64 = 1.0;
const TRUNCATE_SIGMAS: f64 = 3.0;

/// A 120x12 grid of scores in [0, 1]; rows are angle bins, columns distance bins.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarHeatmap {
    scores: Vec<f64>,
}

impl PolarHeatmap {
    pub fn zeros() -> Self {
        Self { scores: vec![0.0; ANGLE_BINS * DIST_BINS] }
    }

    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.len() != ANGLE_BINS * DIST_BINS {
            return Err(Error::Validation(format!(
                "heatmap needs {} cells, got {}",
                ANGLE_BINS * DIST_BINS,
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Validation("heatmap scores must be finite".into()));
        }
        Ok(Self { scores })
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.scores[k * DIST_BINS + j]
    }

    pub fn set(&mut self, k: usize, j: usize, v: f64) {
        self.scores[k * DIST_BINS + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    /// Serialize as the portable flat format: a 16-byte header
    /// `{magic "PHM1", rows u32, cols u32, reserved u32}` followed by
    /// 1440 little-endian f32 values, row-major (angle outer, distance inner).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"PHM1")?;
        w.write_all(&(ANGLE_BINS as u32).to_le_bytes())?;
        w.write_all(&(DIST_BINS as u32).to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for s in &self.scores {
            w.write_all(&(*s as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != b"PHM1" {
            return Err(Error::Validation("bad heatmap magic".into()));
        }
        let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if rows != ANGLE_BINS || cols != DIST_BINS {
            return Err(Error::Validation(format!(
                "unexpected heatmap shape {rows}x{cols}"
            )));
        }
        let mut buf = vec![0u8; rows * cols * 4];
        r.read_exact(&mut buf)?;
        let scores = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::from_scores(scores)
    }
}

/// One extracted waypoint cell with its score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub angle_bin: usize,
    pub dist_bin: usize,
    pub score: f64,
}

/// NMS output, ordered by descending score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WaypointSet {
    pub waypoints: Vec<Waypoint>,
}

impl WaypointSet {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Cyclic distance between two angle bins.
fn cyclic_bin_distance(a: usize, b: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(ANGLE_BINS - d)
}

/// Greedy non-maximum suppression over the heatmap.
///
/// Repeatedly selects the highest-scoring positive cell (ties break toward
/// the lower angle bin, then lower distance bin), suppresses every cell
/// within `radius_bins` angle bins cyclically across all distance bins, and
/// stops after `k_max` selections or when no positive cell remains.
pub fn nms(heatmap: &PolarHeatmap, k_max: usize, radius_bins: usize) -> WaypointSet {
    assert!(k_max >= 1 && radius_bins >= 1);
    let mut alive = vec![true; ANGLE_BINS * DIST_BINS];
    let mut out = Vec::new();
    for _ in 0..k_max {
        let mut best: Option<(usize, usize, f64)> = None;
        for k in 0..ANGLE_BINS {
            for j in 0..DIST_BINS {
                if !alive[k * DIST_BINS + j] {
                    continue;
                }
                let s = heatmap.get(k, j);
                if s <= 0.0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, _, bs)) => s > bs,
                };
                if better {
                    best = Some((k, j, s));
                }
            }
        }
        let Some((k, j, s)) = best else { break };
        out.push(Waypoint { angle_bin: k, dist_bin: j, score: s });
        for kk in 0..ANGLE_BINS {
            if cyclic_bin_distance(kk, k) <= radius_bins {
                for jj in 0..DIST_BINS {
                    alive[kk * DIST_BINS + jj] = false;
                }
            }
        }
    }
    WaypointSet { waypoints: out }
}

/// Metric coordinates (bin-center angle in degrees, distance in meters)
/// of a waypoint cell.
pub fn polar_to_metric(w: &Waypoint) -> (f64, f64) {
    (
        BIN_DEG * w.angle_bin as f64 + BIN_DEG / 2.0,
        dist_bin_value(w.dist_bin),
    )
}

/// Inverse of [`polar_to_metric`]: floor-bin metric coordinates into cell
/// indices. `theta_deg` must be in [0, 360) and `dist_m` in (0, 3.00].
pub fn metric_to_cell(theta_deg: f64, dist_m: f64) -> Result<(usize, usize)> {
    if !(0.0..360.0).contains(&theta_deg) {
        return Err(Error::Range(format!("theta {theta_deg} outside [0, 360)")));
    }
    if !(dist_m > 0.0 && dist_m <= dist_bin_value(DIST_BINS - 1)) {
        return Err(Error::Range(format!("distance {dist_m} outside (0, 3.00]")));
    }
    let k = ((theta_deg / BIN_DEG).floor() as usize).min(ANGLE_BINS - 1);
    let j = ((dist_m / DIST_STEP).ceil() as usize - 1).min(DIST_BINS - 1);
    Ok((k, j))
}

/// Build a soft ground-truth heatmap from metric waypoints: a truncated 2D
/// Gaussian (sigma 2 angle bins by 1 distance bin, cut at 3 sigma, peak 1.0,
/// cyclic in angle) centered on each waypoint cell; overlaps combine by max.
pub fn target_heatmap(waypoints: &[(f64, f64)]) -> Result<PolarHeatmap> {
    let mut map = PolarHeatmap::zeros();
    let reach_k = (TRUNCATE_SIGMAS * SIGMA_ANGLE_BINS) as isize;
    let reach_j = (TRUNCATE_SIGMAS * SIGMA_DIST_BINS) as isize;
    for &(theta, dist) in waypoints {
        let (k0, j0) = metric_to_cell(theta, dist)?;
        for dk in -reach_k..=reach_k {
            let k = (k0 as isize + dk).rem_euclid(ANGLE_BINS as isize) as usize;
            for dj in -reach_j..=reach_j {
                let j = j0 as isize + dj;
                if !(0..DIST_BINS as isize).contains(&j) {
                    continue;
                }
                let j = j as usize;
                let g = (-((dk * dk) as f64 / (2.0 * SIGMA_ANGLE_BINS * SIGMA_ANGLE_BINS)
                    + (dj * dj) as f64 / (2.0 * SIGMA_DIST_BINS * SIGMA_DIST_BINS)))
                    .exp();
                if g > map.get(k, j) {
                    map.set(k, j, g);
                }
            }
        }
    }
    Ok(map)
}
