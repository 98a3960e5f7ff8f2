//! Planar geometry primitives shared by the world simulator and the
//! polar perception pipeline.
//!
//! The world lives in the horizontal (x, z) plane with y pointing up.
//! Headings and bearings are degrees in [0, 360), measured from the +z
//! axis toward +x, so heading 0 faces +z and heading 90 faces +x.

use serde::{Deserialize, Serialize};

/// A point (or displacement) in the horizontal plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub z: f64,
}

impl Point2 {
    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }

    pub fn add(&self, other: Point2) -> Point2 {
        Point2::new(self.x + other.x, self.z + other.z)
    }

    pub fn sub(&self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.z - other.z)
    }

    pub fn scale(&self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.z * s)
    }

    pub fn dot(&self, other: Point2) -> f64 {
        self.x * other.x + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(*self).sqrt()
    }
}

/// Unit vector for a bearing in degrees (0 -> +z, 90 -> +x).
pub fn bearing_dir(bearing_deg: f64) -> Point2 {
    let r = bearing_deg.to_radians();
    Point2::new(r.sin(), r.cos())
}

/// Bearing in degrees [0, 360) of the displacement `to - from`.
/// Returns `None` for a zero displacement.
pub fn bearing_of(from: Point2, to: Point2) -> Option<f64> {
    let d = to.sub(from);
    if d.x == 0.0 && d.z == 0.0 {
        return None;
    }
    Some(normalize_deg(d.x.atan2(d.z).to_degrees()))
}

/// Normalize an angle in degrees into [0, 360).
pub fn normalize_deg(deg: f64) -> f64 {
    let mut d = deg % 360.0;
    if d < 0.0 {
        d += 360.0;
    }
    // -1e-16 % 360 rounds to 360.0 after the correction above
    if d >= 360.0 {
        d -= 360.0;
    }
    d
}

/// A wall segment in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub const fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    /// Distance from the ray `origin + t*dir` (t >= 0, `dir` unit) to the
    /// first intersection with this segment, if any.
    pub fn ray_hit(&self, origin: Point2, dir: Point2) -> Option<f64> {
        // Solve origin + t*dir = a + u*(b-a), t >= 0, u in [0,1].
        let e = self.b.sub(self.a);
        let denom = dir.x * (-e.z) - dir.z * (-e.x);
        if denom.abs() < 1e-15 {
            return None; // parallel
        }
        let rhs = self.a.sub(origin);
        let t = (rhs.x * (-e.z) - rhs.z * (-e.x)) / denom;
        let u = (dir.x * rhs.z - dir.z * rhs.x) / denom;
        if t >= 0.0 && (0.0..=1.0).contains(&u) {
            Some(t)
        } else {
            None
        }
    }

    /// Shortest distance from a point to this segment.
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let e = self.b.sub(self.a);
        let len2 = e.dot(e);
        if len2 == 0.0 {
            return self.a.distance(&p);
        }
        let t = (p.sub(self.a).dot(e) / len2).clamp(0.0, 1.0);
        self.a.add(e.scale(t)).distance(&p)
    }

    /// Earliest `t` in [0, len] along the motion `origin + t*dir` (unit `dir`)
    /// at which a disc of radius `radius` touches this segment, if any.
    pub fn swept_disc_hit(&self, origin: Point2, dir: Point2, len: f64, radius: f64) -> Option<f64> {
        // The distance from the moving center to the segment is piecewise
        // smooth; bisect on the first crossing below `radius` found by a
        // coarse scan, which is robust for the scene scales used here.
        let d0 = self.distance_to_point(origin);
        if d0 <= radius {
            return Some(0.0);
        }
        let steps = (len / 0.005).ceil().max(1.0) as usize;
        let mut prev_t = 0.0;
        for i in 1..=steps {
            let t = len * (i as f64) / (steps as f64);
            let d = self.distance_to_point(origin.add(dir.scale(t)));
            if d <= radius {
                // bisect between prev_t (outside) and t (inside)
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.distance_to_point(origin.add(dir.scale(mid))) <= radius {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(lo);
            }
            prev_t = t;
        }
        None
    }
}

/// Axis-aligned rectangle in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_z: f64,
    pub max_x: f64,
    pub max_z: f64,
}

impl Rect {
    pub const fn new(min_x: f64, min_z: f64, max_x: f64, max_z: f64) -> Self {
        Self { min_x, min_z, max_x, max_z }
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.z >= self.min_z && p.z <= self.max_z
    }

    /// The four edges as segments, counterclockwise.
    pub fn edges(&self) -> [Segment; 4] {
        let c0 = Point2::new(self.min_x, self.min_z);
        let c1 = Point2::new(self.max_x, self.min_z);
        let c2 = Point2::new(self.max_x, self.max_z);
        let c3 = Point2::new(self.min_x, self.max_z);
        [
            Segment::new(c0, c1),
            Segment::new(c1, c2),
            Segment::new(c2, c3),
            Segment::new(c3, c0),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bearing_dir_cardinals() {
        let f = bearing_dir(0.0);
        assert_relative_eq!(f.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.z, 1.0, epsilon = 1e-12);
        let r = bearing_dir(90.0);
        assert_relative_eq!(r.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_wraps_both_directions() {
        assert_relative_eq!(normalize_deg(-30.0), 330.0);
        assert_relative_eq!(normalize_deg(390.0), 30.0);
        assert_eq!(normalize_deg(360.0), 0.0);
    }

    #[test]
    fn ray_hits_perpendicular_wall() {
        let wall = Segment::new(Point2::new(-1.0, 2.0), Point2::new(1.0, 2.0));
        let t = wall.ray_hit(Point2::new(0.0, 0.0), bearing_dir(0.0)).unwrap();
        assert_relative_eq!(t, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_misses_behind() {
        let wall = Segment::new(Point2::new(-1.0, -2.0), Point2::new(1.0, -2.0));
        assert!(wall.ray_hit(Point2::new(0.0, 0.0), bearing_dir(0.0)).is_none());
    }

    #[test]
    fn point_segment_distance_endpoints_and_interior() {
        let s = Segment::new(Point2::new(0.0, 0.0), Point2::new(2.0, 0.0));
        assert_relative_eq!(s.distance_to_point(Point2::new(1.0, 3.0)), 3.0);
        assert_relative_eq!(s.distance_to_point(Point2::new(-3.0, 4.0)), 5.0);
    }

    #[test]
    fn swept_disc_stops_at_clearance() {
        let wall = Segment::new(Point2::new(-1.0, 0.5), Point2::new(1.0, 0.5));
        let t = wall
            .swept_disc_hit(Point2::new(0.0, 0.0), bearing_dir(0.0), 2.0, 0.18)
            .unwrap();
        assert_relative_eq!(t, 0.32, epsilon = 1e-6);
    }
}
