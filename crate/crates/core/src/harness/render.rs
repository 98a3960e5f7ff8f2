//! Dependency-free render emission: top-down trajectory SVG and per-step
//! polar-heatmap PPM (P6) images.

use crate::geom::Point2;
use crate::heatmap::PolarHeatmap;
use crate::polar::{ANGLE_BINS, DIST_BINS};
use crate::world::{AgentPose, FloorPlan};

const SVG_SCALE: f64 = 60.0;
const PPM_CELL: usize = 6;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Top-down SVG: walls, the trajectory polyline, per-pose markers
/// (collisions highlighted), the start, and the goal.
pub fn trajectory_svg(
    plan: &FloorPlan,
    poses: &[AgentPose],
    collisions: &[bool],
    goal: Point2,
) -> String {
    let b = plan.bounds;
    let w = (b.max_x - b.min_x) * SVG_SCALE;
    let h = (b.max_z - b.min_z) * SVG_SCALE;
    // world z points up; svg y points down
    let sx = |x: f64| (x - b.min_x) * SVG_SCALE;
    let sz = |z: f64| (b.max_z - z) * SVG_SCALE;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(w), fmt(h), fmt(w), fmt(h)
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        fmt(w), fmt(h)
    ));
    for wall in &plan.walls {
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#222222\" stroke-width=\"3\"/>\n",
            fmt(sx(wall.a.x)), fmt(sz(wall.a.z)), fmt(sx(wall.b.x)), fmt(sz(wall.b.z))
        ));
    }
    for obj in &plan.objects {
        s.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"none\" stroke=\"#999999\" stroke-width=\"1\"/>\n",
            fmt(sx(obj.position.x)), fmt(sz(obj.position.z)), fmt(obj.radius * SVG_SCALE)
        ));
    }
    if poses.len() > 1 {
        let pts: Vec<String> = poses
            .iter()
            .map(|p| format!("{},{}", fmt(sx(p.x)), fmt(sz(p.z))))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f6fd6\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
    }
    for (i, pose) in poses.iter().enumerate() {
        let collided = i > 0 && collisions.get(i - 1).copied().unwrap_or(false);
        let (radius, fill) = if collided { ("5", "#d62728") } else { ("3", "#1f6fd6") };
        s.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{radius}\" fill=\"{fill}\"/>\n",
            fmt(sx(pose.x)), fmt(sz(pose.z))
        ));
    }
    if let Some(start) = poses.first() {
        s.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"7\" fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"2\"/>\n",
            fmt(sx(start.x)), fmt(sz(start.z))
        ));
    }
    s.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"8\" fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"3\"/>\n",
        fmt(sx(goal.x)), fmt(sz(goal.z))
    ));
    s.push_str("</svg>\n");
    s
}

/// Polar-heatmap raster as binary PPM (P6): angle bins left to right,
/// distance bins top (near) to bottom (far), grayscale by score with the
/// given cells marked in red.
pub fn heatmap_ppm(map: &PolarHeatmap, marked: &[(usize, usize)]) -> Vec<u8> {
    let w = ANGLE_BINS * PPM_CELL;
    let h = DIST_BINS * PPM_CELL;
    let mut out = Vec::with_capacity(32 + w * h * 3);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for py in 0..h {
        let j = py / PPM_CELL;
        for px in 0..w {
            let k = px / PPM_CELL;
            if marked.contains(&(k, j)) {
                out.extend_from_slice(&[214, 39, 40]);
            } else {
                let v = (map.get(k, j).clamp(0.0, 1.0) * 255.0).round() as u8;
                out.extend_from_slice(&[v, v, v]);
            }
        }
    }
    out
}
