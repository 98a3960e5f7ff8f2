//! Synthetic continuous 2D environment: floor plans, depth raycasting,
//! collision-checked motion, geodesic distances, and ground-truth scene
//! labels standing in for a learned recognizer.

use crate::error::{Error, Result};
use crate::geom::{bearing_dir, bearing_of, normalize_deg, Point2, Rect, Segment};
use crate::polar::{DepthCamera, DepthImage, DepthPanorama, MAX_RANGE};
use serde::{Deserialize, Serialize};
use std::collections::BinaryHeap;

/// Disc radius of the agent in meters (Turtlebot-class footprint).
pub const AGENT_RADIUS: f64 = 0.18;
/// Occupancy-grid resolution for geodesic distances, in meters.
pub const GEODESIC_RES: f64 = 0.05;

/// A labeled landmark in the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    pub position: Point2,
    pub radius: f64,
}

/// Walls, landmarks, and the world rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan {
    pub walls: Vec<Segment>,
    pub objects: Vec<SceneObject>,
    pub bounds: Rect,
}

impl FloorPlan {
    pub fn new(walls: Vec<Segment>, objects: Vec<SceneObject>, bounds: Rect) -> Result<Self> {
        let plan = Self { walls, objects, bounds };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.min_x >= self.bounds.max_x || self.bounds.min_z >= self.bounds.max_z {
            return Err(Error::Validation("bounds rectangle is empty".into()));
        }
        for (i, w) in self.walls.iter().enumerate() {
            if !self.bounds.contains(w.a) || !self.bounds.contains(w.b) {
                return Err(Error::Validation(format!("walls[{i}] outside bounds")));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.label.is_empty() {
                return Err(Error::Validation(format!("objects[{i}].label is empty")));
            }
            if !(o.radius > 0.0) {
                return Err(Error::Validation(format!("objects[{i}].radius must be > 0")));
            }
            if !self.bounds.contains(o.position) {
                return Err(Error::Validation(format!("objects[{i}] outside bounds")));
            }
        }
        Ok(())
    }

    /// Distance from a point to the nearest wall (ignores the bounds edges).
    pub fn wall_clearance(&self, p: Point2) -> f64 {
        self.walls
            .iter()
            .map(|w| w.distance_to_point(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// True if the point is inside the bounds and not on a wall.
    pub fn in_free_space(&self, p: Point2) -> bool {
        self.bounds.contains(p) && self.wall_clearance(p) > 1e-9
    }
}

/// The agent's continuous pose in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub z: f64,
    pub heading_deg: f64,
}

impl AgentPose {
    pub fn new(x: f64, z: f64, heading_deg: f64) -> Self {
        Self { x, z, heading_deg: normalize_deg(heading_deg) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.z)
    }
}

/// One navigation episode: start pose, goal point, and the instruction text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub start: AgentPose,
    pub goal: Point2,
    pub instruction: String,
}

/// Result of one motion command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub new_pose: AgentPose,
    pub collided: bool,
    pub distance_traveled: f64,
}

/// Distance from `origin` along `direction_deg` to the nearest wall
/// intersection, clamped to `max_range`.
pub fn raycast(plan: &FloorPlan, origin: Point2, direction_deg: f64, max_range: f64) -> Result<f64> {
    if !plan.in_free_space(origin) {
        return Err(Error::Pose(format!(
            "raycast origin ({}, {}) is not in free space",
            origin.x, origin.z
        )));
    }
    let dir = bearing_dir(direction_deg);
    let mut best = max_range;
    for wall in &plan.walls {
        if let Some(t) = wall.ray_hit(origin, dir) {
            if t < best {
                best = t;
            }
        }
    }
    Ok(best)
}

/// Render the 12-view depth panorama at a pose. View i faces
/// `pose.heading + 30 * i`; every pixel stores the horizontal raycast
/// distance of its column, constant down the column (walls are full height).
pub fn render_depth_panorama(
    plan: &FloorPlan,
    pose: &AgentPose,
    camera: &DepthCamera,
) -> Result<DepthPanorama> {
    camera.validate()?;
    let mut views = Vec::with_capacity(12);
    for i in 0..12 {
        let rel_heading = 30.0 * i as f64;
        let mut pixels = vec![0.0; camera.width * camera.height];
        for col in 0..camera.width {
            let az = pose.heading_deg + rel_heading + camera.col_azimuth_deg(col, camera.width);
            let d = raycast(plan, pose.position(), az, MAX_RANGE)?;
            for row in 0..camera.height {
                pixels[row * camera.width + col] = d;
            }
        }
        views.push(DepthImage::new(camera.width, camera.height, rel_heading, pixels)?);
    }
    DepthPanorama::new(views)
}

/// A labeled object visible from a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleObject {
    pub label: String,
    /// Bearing relative to the agent heading, degrees in [0, 360).
    pub bearing_deg: f64,
    pub distance: f64,
}

/// Objects whose bearing falls inside view `view_index`'s 90-degree sector
/// and whose center is not occluded by a wall, sorted near to far.
pub fn visible_objects(plan: &FloorPlan, pose: &AgentPose, view_index: usize) -> Vec<VisibleObject> {
    let sector_start = 30.0 * view_index as f64 - 45.0;
    let mut seen = Vec::new();
    for obj in &plan.objects {
        let Some(world_bearing) = bearing_of(pose.position(), obj.position) else {
            continue;
        };
        let rel = normalize_deg(world_bearing - pose.heading_deg);
        let offset = normalize_deg(rel - sector_start);
        if offset >= 90.0 {
            continue;
        }
        let dist = pose.position().distance(&obj.position);
        let clear = raycast(plan, pose.position(), world_bearing, dist + 1.0).unwrap_or(0.0);
        if clear > dist - 1e-9 {
            seen.push(VisibleObject { label: obj.label.clone(), bearing_deg: rel, distance: dist });
        }
    }
    seen.sort_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap());
    seen
}

/// Move in a straight line toward `target`, stopping at clearance if the
/// swept agent disc would touch a wall or the world boundary. The heading
/// becomes the motion bearing.
pub fn step_to(pose: &AgentPose, target: Point2, plan: &FloorPlan) -> StepOutcome {
    let origin = pose.position();
    let Some(bearing) = bearing_of(origin, target) else {
        return StepOutcome { new_pose: *pose, collided: false, distance_traveled: 0.0 };
    };
    let len = origin.distance(&target);
    let dir = bearing_dir(bearing);
    let mut stop = len;
    let mut collided = false;
    for seg in plan.walls.iter().chain(plan.bounds.edges().iter()) {
        if let Some(t) = seg.swept_disc_hit(origin, dir, stop, AGENT_RADIUS) {
            if t < stop {
                stop = t;
                collided = true;
            }
        }
    }
    let new_pos = origin.add(dir.scale(stop));
    StepOutcome {
        new_pose: AgentPose::new(new_pos.x, new_pos.z, bearing),
        collided,
        distance_traveled: stop,
    }
}

/// Rasterized occupancy grid over the plan bounds, used for geodesic
/// distances. Build once per plan and reuse; construction samples every
/// wall at sub-cell resolution.
#[derive(Debug, Clone)]
pub struct NavGrid {
    nx: usize,
    nz: usize,
    origin: Point2,
    blocked: Vec<bool>,
}

impl NavGrid {
    pub fn new(plan: &FloorPlan) -> Self {
        let nx = (((plan.bounds.max_x - plan.bounds.min_x) / GEODESIC_RES).ceil() as usize).max(1);
        let nz = (((plan.bounds.max_z - plan.bounds.min_z) / GEODESIC_RES).ceil() as usize).max(1);
        let origin = Point2::new(plan.bounds.min_x, plan.bounds.min_z);
        let mut blocked = vec![false; nx * nz];
        for wall in &plan.walls {
            let len = wall.a.distance(&wall.b);
            let steps = ((len / (GEODESIC_RES / 4.0)).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let p = wall.a.add(wall.b.sub(wall.a).scale(t));
                let ix = (((p.x - origin.x) / GEODESIC_RES).floor() as isize).clamp(0, nx as isize - 1);
                let iz = (((p.z - origin.z) / GEODESIC_RES).floor() as isize).clamp(0, nz as isize - 1);
                blocked[iz as usize * nx + ix as usize] = true;
            }
        }
        Self { nx, nz, origin, blocked }
    }

    fn cell_of(&self, p: Point2) -> usize {
        let ix = (((p.x - self.origin.x) / GEODESIC_RES).floor() as isize)
            .clamp(0, self.nx as isize - 1) as usize;
        let iz = (((p.z - self.origin.z) / GEODESIC_RES).floor() as isize)
            .clamp(0, self.nz as isize - 1) as usize;
        iz * self.nx + ix
    }

    /// Nearest unblocked cell to `p` within a small snap radius.
    fn free_cell_near(&self, p: Point2) -> Option<usize> {
        let start = self.cell_of(p);
        if !self.blocked[start] {
            return Some(start);
        }
        let (cx, cz) = (start % self.nx, start / self.nx);
        for ring in 1..=4isize {
            let mut best: Option<(f64, usize)> = None;
            for dz in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs().max(dz.abs()) != ring {
                        continue;
                    }
                    let x = cx as isize + dx;
                    let z = cz as isize + dz;
                    if x < 0 || z < 0 || x >= self.nx as isize || z >= self.nz as isize {
                        continue;
                    }
                    let idx = z as usize * self.nx + x as usize;
                    if self.blocked[idx] {
                        continue;
                    }
                    let center = self.cell_center(idx);
                    let d = center.distance(&p);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, idx));
                    }
                }
            }
            if let Some((_, idx)) = best {
                return Some(idx);
            }
        }
        None
    }

    fn cell_center(&self, idx: usize) -> Point2 {
        let ix = idx % self.nx;
        let iz = idx / self.nx;
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * GEODESIC_RES,
            self.origin.z + (iz as f64 + 0.5) * GEODESIC_RES,
        )
    }

    /// Dijkstra cost field (meters) from the cell containing `from` to every
    /// cell; unreachable cells hold +inf. Diagonal moves cost sqrt(2) cells
    /// and may not cut corners past blocked orthogonal neighbors.
    pub fn distance_field(&self, from: Point2) -> Result<Vec<f64>> {
        let Some(start) = self.free_cell_near(from) else {
            return Err(Error::Pose(format!(
                "point ({}, {}) is inside a wall",
                from.x, from.z
            )));
        };
        #[derive(PartialEq)]
        struct Entry {
            cost: f64,
            idx: usize,
        }
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                other
                    .cost
                    .partial_cmp(&self.cost)
                    .unwrap()
                    .then_with(|| other.idx.cmp(&self.idx))
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut dist = vec![f64::INFINITY; self.nx * self.nz];
        dist[start] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry { cost: 0.0, idx: start });
        const DIAG: f64 = std::f64::consts::SQRT_2;
        while let Some(Entry { cost, idx }) = heap.pop() {
            if cost > dist[idx] {
                continue;
            }
            let (cx, cz) = ((idx % self.nx) as isize, (idx / self.nx) as isize);
            for dz in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dz == 0 {
                        continue;
                    }
                    let x = cx + dx;
                    let z = cz + dz;
                    if x < 0 || z < 0 || x >= self.nx as isize || z >= self.nz as isize {
                        continue;
                    }
                    let nidx = z as usize * self.nx + x as usize;
                    if self.blocked[nidx] {
                        continue;
                    }
                    if dx != 0 && dz != 0 {
                        let side_a = cz as usize * self.nx + x as usize;
                        let side_b = z as usize * self.nx + cx as usize;
                        if self.blocked[side_a] || self.blocked[side_b] {
                            continue;
                        }
                    }
                    let step = if dx != 0 && dz != 0 { DIAG } else { 1.0 } * GEODESIC_RES;
                    let next = cost + step;
                    if next < dist[nidx] {
                        dist[nidx] = next;
                        heap.push(Entry { cost: next, idx: nidx });
                    }
                }
            }
        }
        Ok(dist)
    }

    /// Geodesic distance between two points; +inf when disconnected.
    pub fn distance(&self, a: Point2, b: Point2) -> Result<f64> {
        let field = self.distance_field(a)?;
        self.distance_from_field(&field, a, b)
    }

    /// Distance lookup against a precomputed field rooted at `field_origin`.
    pub fn distance_from_field(&self, field: &[f64], field_origin: Point2, b: Point2) -> Result<f64> {
        let Some(cell) = self.free_cell_near(b) else {
            return Err(Error::Pose(format!(
                "point ({}, {}) is inside a wall",
                b.x, b.z
            )));
        };
        let grid_cost = field[cell];
        if grid_cost.is_infinite() {
            return Ok(f64::INFINITY);
        }
        // The grid path can undercut the straight line for nearby points
        // because endpoints snap to cell centers; the Euclidean distance is
        // always a valid lower bound.
        Ok(grid_cost.max(field_origin.distance(&b)))
    }
}

/// Shortest obstacle-avoiding path length between two free points over a
/// 0.05 m occupancy grid; returns +inf when the points are disconnected.
pub fn geodesic_distance(plan: &FloorPlan, a: Point2, b: Point2) -> Result<f64> {
    if plan.walls.iter().any(|w| w.distance_to_point(a) < 1e-9) {
        return Err(Error::Pose(format!("point ({}, {}) lies on a wall", a.x, a.z)));
    }
    if plan.walls.iter().any(|w| w.distance_to_point(b) < 1e-9) {
        return Err(Error::Pose(format!("point ({}, {}) lies on a wall", b.x, b.z)));
    }
    NavGrid::new(plan).distance(a, b)
}
