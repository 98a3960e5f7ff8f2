//! Scene file loading: JSON schema, validation, and per-episode
//! connectivity checks.

use crate::error::{Error, Result};
use crate::geom::{Point2, Rect, Segment};
use crate::world::{geodesic_distance, AgentPose, Episode, FloorPlan, SceneObject, AGENT_RADIUS};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// A loaded scene: the plan plus its episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub plan: FloorPlan,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    /// [min_x, min_z, max_x, max_z]
    bounds: [f64; 4],
    /// Each wall is [x1, z1, x2, z2].
    walls: Vec<[f64; 4]>,
    #[serde(default)]
    objects: Vec<ObjectFile>,
    #[serde(default)]
    episodes: Vec<EpisodeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectFile {
    label: String,
    x: f64,
    z: f64,
    r: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeFile {
    id: String,
    start: StartFile,
    goal: GoalFile,
    instruction: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StartFile {
    x: f64,
    z: f64,
    heading: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GoalFile {
    x: f64,
    z: f64,
}

/// Load and validate a scene file. Schema violations name the offending
/// field; disconnected episodes name the episode id.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;

    let bounds = Rect::new(file.bounds[0], file.bounds[1], file.bounds[2], file.bounds[3]);
    let walls: Vec<Segment> = file
        .walls
        .iter()
        .map(|w| Segment::new(Point2::new(w[0], w[1]), Point2::new(w[2], w[3])))
        .collect();
    let objects: Vec<SceneObject> = file
        .objects
        .into_iter()
        .map(|o| SceneObject { label: o.label, position: Point2::new(o.x, o.z), radius: o.r })
        .collect();
    let plan = FloorPlan::new(walls, objects, bounds).map_err(|e| Error::Load(e.to_string()))?;

    let mut seen = HashSet::new();
    let mut episodes = Vec::new();
    for e in file.episodes {
        if !seen.insert(e.id.clone()) {
            return Err(Error::Load(format!("duplicate episode id '{}'", e.id)));
        }
        let start = AgentPose::new(e.start.x, e.start.z, e.start.heading);
        let goal = Point2::new(e.goal.x, e.goal.z);
        if !plan.in_free_space(start.position())
            || plan.wall_clearance(start.position()) < AGENT_RADIUS
        {
            return Err(Error::Load(format!(
                "episode '{}': start pose is not in free space",
                e.id
            )));
        }
        if !plan.in_free_space(goal) {
            return Err(Error::Load(format!("episode '{}': goal is not in free space", e.id)));
        }
        let dist = geodesic_distance(&plan, start.position(), goal)
            .map_err(|err| Error::Load(format!("episode '{}': {err}", e.id)))?;
        if !dist.is_finite() {
            return Err(Error::Load(format!(
                "episode '{}': start and goal are disconnected",
                e.id
            )));
        }
        if dist <= 0.1 {
            return Err(Error::Load(format!(
                "episode '{}': start and goal coincide",
                e.id
            )));
        }
        episodes.push(Episode { id: e.id, start, goal, instruction: e.instruction });
    }

    Ok(Scene { plan, episodes })
}
