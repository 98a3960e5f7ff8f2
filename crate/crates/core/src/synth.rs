//! Seeded synthetic scene generators: randomized floor plans for
//! perception checks, ring scenes with wall gaps for predictor training,
//! and trap-corridor scenes for the backtracking ablation.

use crate::geom::{bearing_dir, Point2, Rect, Segment};
use crate::world::{AgentPose, Episode, FloorPlan, SceneObject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OBJECT_LABELS: [&str; 6] = ["table", "chair", "plant", "shelf", "sofa", "lamp"];

/// A randomized plan with perimeter walls, a few gapped interior walls,
/// labeled objects, and a free agent pose.
pub fn random_plan(seed: u64) -> (FloorPlan, AgentPose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 3.5;
    let bounds = Rect::new(-4.0, -4.0, 4.0, 4.0);
    let mut walls = perimeter(half);

    let n_interior = rng.gen_range(2..=3usize);
    for _ in 0..n_interior {
        let c = rng.gen_range(-2.0..2.0);
        let vertical = rng.gen_bool(0.5);
        let gap_center = rng.gen_range(-2.0..2.0);
        let gap_half = rng.gen_range(0.3..0.6);
        let (lo, hi) = (-half, half);
        let spans = [(lo, gap_center - gap_half), (gap_center + gap_half, hi)];
        for (a, b) in spans {
            if b - a < 0.1 {
                continue;
            }
            walls.push(if vertical {
                Segment::new(Point2::new(c, a), Point2::new(c, b))
            } else {
                Segment::new(Point2::new(a, c), Point2::new(b, c))
            });
        }
    }

    let mut objects = Vec::new();
    for _ in 0..rng.gen_range(0..=3usize) {
        let label = OBJECT_LABELS[rng.gen_range(0..OBJECT_LABELS.len())];
        objects.push(SceneObject {
            label: label.to_string(),
            position: Point2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
            radius: rng.gen_range(0.15..0.5),
        });
    }

    let plan = FloorPlan::new(walls, objects, bounds).expect("generated plan is valid");
    let pose = free_pose(&plan, &mut rng, 2.8, 0.45);
    (plan, pose)
}

/// A broken ring of walls around the agent at the origin: the gaps are the
/// scene's navigable openings. Arc radii stay under 2 m so opening
/// detection separates gap directions from wall directions.
pub fn ring_scene(seed: u64) -> (FloorPlan, AgentPose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Rect::new(-4.0, -4.0, 4.0, 4.0);
    let n_gaps = rng.gen_range(1..=4usize);

    // Gap centers spaced at least 40 degrees apart.
    let mut centers: Vec<f64> = Vec::new();
    while centers.len() < n_gaps {
        let c = rng.gen_range(0.0..360.0);
        if centers.iter().all(|e| cyclic_deg_dist(c, *e) >= 40.0) {
            centers.push(c);
        }
    }
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let widths: Vec<f64> = (0..n_gaps).map(|_| rng.gen_range(21.0..45.0)).collect();

    let mut walls = Vec::new();
    for i in 0..n_gaps {
        let start = centers[i] + widths[i] / 2.0;
        let next = centers[(i + 1) % n_gaps] - widths[(i + 1) % n_gaps] / 2.0
            + if i + 1 == n_gaps { 360.0 } else { 0.0 };
        if next - start < 1.0 {
            continue;
        }
        let radius = rng.gen_range(0.9..1.8);
        walls.extend(arc_polyline(start, next, radius));
    }

    let plan = FloorPlan::new(walls, vec![], bounds).expect("generated ring is valid");
    (plan, AgentPose::new(0.0, 0.0, 0.0))
}

/// Trap-corridor scene: a narrow corridor funnels toward a slit in the
/// dividing wall that the agent disc cannot pass, while a detour door
/// near the south end is the real route to the goal on the far side.
pub fn trap_scene(seed: u64) -> (FloorPlan, Episode) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 8.0 + rng.gen_range(0.0..1.5);
    let height = 8.0 + rng.gen_range(0.0..1.5);
    let divider_x = 4.0 + rng.gen_range(-0.3..0.3);
    let corridor_z = height / 2.0 + rng.gen_range(-0.8..0.8);
    let slit_half = 0.15;
    let corridor_half = 0.4;
    let corridor_len = 1.5;
    let door_lo = 0.8 + rng.gen_range(0.0..0.3);
    let door_hi = door_lo + 1.1;

    let mut walls = vec![
        // perimeter
        Segment::new(Point2::new(0.0, 0.0), Point2::new(width, 0.0)),
        Segment::new(Point2::new(width, 0.0), Point2::new(width, height)),
        Segment::new(Point2::new(width, height), Point2::new(0.0, height)),
        Segment::new(Point2::new(0.0, height), Point2::new(0.0, 0.0)),
        // dividing wall, interrupted by the door and the slit
        Segment::new(Point2::new(divider_x, 0.0), Point2::new(divider_x, door_lo)),
        Segment::new(
            Point2::new(divider_x, door_hi),
            Point2::new(divider_x, corridor_z - slit_half),
        ),
        Segment::new(
            Point2::new(divider_x, corridor_z + slit_half),
            Point2::new(divider_x, height),
        ),
    ];
    // corridor funnel toward the slit
    walls.push(Segment::new(
        Point2::new(divider_x - corridor_len, corridor_z - corridor_half),
        Point2::new(divider_x, corridor_z - corridor_half),
    ));
    walls.push(Segment::new(
        Point2::new(divider_x - corridor_len, corridor_z + corridor_half),
        Point2::new(divider_x, corridor_z + corridor_half),
    ));

    let objects = vec![SceneObject {
        label: "doorway".to_string(),
        position: Point2::new(divider_x + 0.4, (door_lo + door_hi) / 2.0),
        radius: 0.3,
    }];

    let bounds = Rect::new(0.0, 0.0, width, height);
    let plan = FloorPlan::new(walls, objects, bounds).expect("trap scene is valid");
    let start = AgentPose::new(divider_x - 2.5, corridor_z, 90.0);
    let goal = Point2::new((divider_x + 3.4).min(width - 0.5), corridor_z);
    let episode = Episode {
        id: format!("trap-{seed}"),
        start,
        goal,
        instruction:
            "Pass to the far side of the dividing wall through the doorway and stop near the corridor axis."
                .to_string(),
    };
    (plan, episode)
}

/// The trap-corridor ablation suite.
pub fn trap_suite(n: usize, base_seed: u64) -> Vec<(FloorPlan, Episode)> {
    (0..n).map(|i| trap_scene(base_seed + i as u64)).collect()
}

fn perimeter(half: f64) -> Vec<Segment> {
    let c = [
        Point2::new(-half, -half),
        Point2::new(half, -half),
        Point2::new(half, half),
        Point2::new(-half, half),
    ];
    (0..4).map(|i| Segment::new(c[i], c[(i + 1) % 4])).collect()
}

fn cyclic_deg_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Polyline approximating an arc (bearing range in degrees, radius in meters)
/// around the origin, in 6-degree steps.
fn arc_polyline(start_deg: f64, end_deg: f64, radius: f64) -> Vec<Segment> {
    let steps = (((end_deg - start_deg) / 6.0).ceil() as usize).max(1);
    let mut segments = Vec::with_capacity(steps);
    let point = |deg: f64| bearing_dir(deg).scale(radius);
    for s in 0..steps {
        let a = start_deg + (end_deg - start_deg) * s as f64 / steps as f64;
        let b = start_deg + (end_deg - start_deg) * (s + 1) as f64 / steps as f64;
        segments.push(Segment::new(point(a), point(b)));
    }
    segments
}

/// Rejection-sample a pose inside the central square with the given wall clearance.
fn free_pose(plan: &FloorPlan, rng: &mut ChaCha8Rng, half: f64, clearance: f64) -> AgentPose {
    loop {
        let p = Point2::new(rng.gen_range(-half..half), rng.gen_range(-half..half));
        if plan.wall_clearance(p) >= clearance {
            return AgentPose::new(p.x, p.z, rng.gen_range(0.0..360.0));
        }
    }
}
