//! Depth-panorama geometry: per-direction shortest obstacle distances and
//! the polar occupancy mask derived from them.
//!
//! A panorama is 12 depth views at 30-degree heading intervals, each with a
//! 90-degree horizontal field of view. Four views (headings 0/90/180/270
//! relative to the agent) tile the full circle exactly; each is reduced to
//! 30 columns of 3-degree sectors, every column contributes the horizontal
//! distance of its minimum-depth pixel, and the 120 resulting distances are
//! thresholded against the 12 distance bins to form the occupancy mask.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Number of 3-degree angle bins around the agent.
pub const ANGLE_BINS: usize = 120;
/// Number of 0.25 m distance bins (0.25 m .. 3.00 m).
pub const DIST_BINS: usize = 12;
/// Angular width of one bin in degrees.
pub const BIN_DEG: f64 = 3.0;
/// Radial width of one distance bin in meters.
pub const DIST_STEP: f64 = 0.25;
/// Depth render clamp, one bin beyond the farthest waypoint bin.
pub const MAX_RANGE: f64 = 3.25;
/// Columns per reduced depth view (one per 3-degree sector of the 90-degree HFOV).
pub const REDUCED_COLS: usize = 30;

/// Distance-bin value `d_j` in meters for bin index `j`.
pub fn dist_bin_value(j: usize) -> f64 {
    DIST_STEP * (j as f64 + 1.0)
}

/// A 3-vector in the camera/world frame: x right, y up, z forward at heading 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Pinhole depth camera intrinsics plus mounting info.
///
/// The planar simulator renders with `vfov_deg = 0` so that every pixel ray
/// is horizontal; `camera_height` and a nonzero vertical FOV are carried for
/// camera models that need them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthCamera {
    pub hfov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub camera_height: f64,
    pub vfov_deg: f64,
}

impl Default for DepthCamera {
    fn default() -> Self {
        Self {
            hfov_deg: 90.0,
            width: 60,
            height: 4,
            camera_height: 0.7,
            vfov_deg: 0.0,
        }
    }
}

impl DepthCamera {
    pub fn validate(&self) -> Result<()> {
        if self.hfov_deg != 90.0 {
            return Err(Error::Config(format!(
                "hfov_deg must be 90, got {}",
                self.hfov_deg
            )));
        }
        if self.width < 30 || self.width % 30 != 0 {
            return Err(Error::Config(format!(
                "width must be >= 30 and divisible by 30, got {}",
                self.width
            )));
        }
        if self.height < 1 {
            return Err(Error::Config("height must be >= 1".into()));
        }
        Ok(())
    }

    /// Azimuth of a pixel column relative to the camera axis, in degrees.
    /// Column 0 sits exactly at -hfov/2; column w/2 on the optical axis.
    pub fn col_azimuth_deg(&self, col: usize, cols: usize) -> f64 {
        (col as f64 - cols as f64 / 2.0) / cols as f64 * self.hfov_deg
    }

    /// Elevation of a pixel row, in degrees. Row 0 is the top of the image.
    pub fn row_elevation_deg(&self, row: usize) -> f64 {
        -((row as f64 - self.height as f64 / 2.0) / self.height as f64) * self.vfov_deg
    }
}

/// One depth view: `width x height` meters along each pixel ray.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    /// Row-major pixels, `pixels[row * width + col]`.
    pub pixels: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub heading_deg: f64,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, heading_deg: f64, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Validation(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation(
                "depth pixels must be finite and non-negative".into(),
            ));
        }
        Ok(Self { pixels, width, height, heading_deg })
    }

    pub fn constant(width: usize, height: usize, heading_deg: f64, depth: f64) -> Self {
        Self {
            pixels: vec![depth; width * height],
            width,
            height,
            heading_deg,
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Twelve depth views at headings 0, 30, ..., 330 relative to the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPanorama {
    pub views: Vec<DepthImage>,
}

impl DepthPanorama {
    pub fn new(views: Vec<DepthImage>) -> Result<Self> {
        if views.len() != 12 {
            return Err(Error::Validation(format!(
                "panorama needs exactly 12 views, got {}",
                views.len()
            )));
        }
        for (i, v) in views.iter().enumerate() {
            let expect = 30.0 * i as f64;
            if (v.heading_deg - expect).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "view {i} heading {} != {}",
                    v.heading_deg, expect
                )));
            }
        }
        Ok(Self { views })
    }
}

/// 120 shortest horizontal obstacle distances, one per 3-degree bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestDistanceProfile {
    pub distances: Vec<f64>,
}

impl ShortestDistanceProfile {
    pub fn new(distances: Vec<f64>) -> Result<Self> {
        if distances.len() != ANGLE_BINS {
            return Err(Error::Validation(format!(
                "profile needs {} bins, got {}",
                ANGLE_BINS,
                distances.len()
            )));
        }
        if distances.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Validation("profile distances must be > 0".into()));
        }
        Ok(Self { distances })
    }
}

/// 120x12 binary navigability grid; rows are angle bins, columns distance bins.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMask {
    cells: Vec<bool>,
}

impl OccupancyMask {
    /// Cell (k, j): 1 iff distance bin j is within the free range of angle bin k.
    pub fn get(&self, k: usize, j: usize) -> bool {
        self.cells[k * DIST_BINS + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.cells
    }

    /// Fraction of open cells.
    pub fn open_fraction(&self) -> f64 {
        let open = self.cells.iter().filter(|c| **c).count();
        open as f64 / self.cells.len() as f64
    }
}

/// World-frame unit direction of a pixel ray for a camera at `heading_deg`.
pub fn ray_direction(
    camera: &DepthCamera,
    heading_deg: f64,
    col: usize,
    row: usize,
) -> Result<Vec3> {
    if col >= camera.width || row >= camera.height {
        return Err(Error::Index(format!(
            "pixel ({col},{row}) outside {}x{}",
            camera.width, camera.height
        )));
    }
    let az = (heading_deg + camera.col_azimuth_deg(col, camera.width)).to_radians();
    let el = camera.row_elevation_deg(row).to_radians();
    Ok(Vec3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos()))
}

/// Collapse a depth view to 30 columns by taking the per-row minimum over
/// each group of `width / 30` adjacent pixel columns.
pub fn reduce_depth_view(view: &DepthImage) -> Result<Vec<f64>> {
    if view.width % REDUCED_COLS != 0 {
        return Err(Error::Config(format!(
            "view width {} not divisible by {REDUCED_COLS}",
            view.width
        )));
    }
    let group = view.width / REDUCED_COLS;
    let mut reduced = vec![f64::INFINITY; REDUCED_COLS * view.height];
    for row in 0..view.height {
        for col in 0..view.width {
            let n = col / group;
            let cell = &mut reduced[row * REDUCED_COLS + n];
            *cell = cell.min(view.pixel(col, row));
        }
    }
    Ok(reduced)
}

/// Minimum-depth 3D point of reduced column `n` (agent position as origin).
///
/// Ties pick the lowest row index. The returned vector is the stored depth
/// times the pixel's unit ray direction, so its norm equals the depth.
pub fn column_min_point(
    reduced: &[f64],
    camera: &DepthCamera,
    heading_deg: f64,
    n: usize,
) -> Result<Vec3> {
    if n >= REDUCED_COLS {
        return Err(Error::Index(format!("reduced column {n} out of range")));
    }
    let height = reduced.len() / REDUCED_COLS;
    let mut best_row = 0usize;
    let mut best = f64::INFINITY;
    for row in 0..height {
        let d = reduced[row * REDUCED_COLS + n];
        if d < best {
            best = d;
            best_row = row;
        }
    }
    let az = (heading_deg + camera.col_azimuth_deg(n, REDUCED_COLS)).to_radians();
    let el = camera.row_elevation_deg(best_row).to_radians();
    let dir = Vec3::new(az.sin() * el.cos(), el.sin(), az.cos() * el.cos());
    Ok(dir.scale(best))
}

/// Horizontal-plane distance of a 3D point from the origin.
pub fn horizontal_distance(c: Vec3) -> f64 {
    (c.x * c.x + c.z * c.z).sqrt()
}

/// Indices of the four panorama views that tile the full circle.
pub const PROFILE_VIEWS: [usize; 4] = [0, 3, 6, 9];

/// Shortest horizontal obstacle distance per 3-degree bin, from the four
/// views at relative headings 0/90/180/270. Bin k covers [3k, 3k+3) degrees
/// clockwise from the agent heading.
pub fn shortest_distance_profile(
    pano: &DepthPanorama,
    camera: &DepthCamera,
) -> Result<ShortestDistanceProfile> {
    camera.validate()?;
    if pano.views.len() != 12 {
        return Err(Error::Validation("panorama must have 12 views".into()));
    }
    let mut distances = vec![0.0f64; ANGLE_BINS];
    for &v in PROFILE_VIEWS.iter() {
        let view = &pano.views[v];
        let heading = view.heading_deg;
        let reduced = reduce_depth_view(view)?;
        for n in 0..REDUCED_COLS {
            let point = column_min_point(&reduced, camera, heading, n)?;
            let d = horizontal_distance(point);
            // Column n covers [heading - 45 + 3n, heading - 45 + 3(n+1)).
            let start_deg = heading - 45.0 + BIN_DEG * n as f64;
            let k = bin_of_angle(start_deg);
            distances[k] = d;
        }
    }
    ShortestDistanceProfile::new(distances)
}

/// Angle bin index for a relative bearing in degrees (any range).
pub fn bin_of_angle(deg: f64) -> usize {
    let d = crate::geom::normalize_deg(deg);
    let k = (d / BIN_DEG).floor() as usize;
    k.min(ANGLE_BINS - 1)
}

/// Threshold the profile into the 120x12 occupancy mask: cell (k, j) is
/// open iff `d_j <= D_k`.
pub fn occupancy_mask(profile: &ShortestDistanceProfile) -> OccupancyMask {
    let mut cells = vec![false; ANGLE_BINS * DIST_BINS];
    for k in 0..ANGLE_BINS {
        let d_k = profile.distances[k];
        for j in 0..DIST_BINS {
            cells[k * DIST_BINS + j] = dist_bin_value(j) <= d_k;
        }
    }
    OccupancyMask { cells }
}
