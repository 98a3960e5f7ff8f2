//! JSONL trace persistence: one JSON object per navigation step.

use crate::error::{Error, Result};
use crate::navigator::{ActionOption, DecisionResponse, StepRecord};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Pose as persisted in trace records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
}

/// One persisted navigation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub pose: PoseRecord,
    pub action: String,
    pub collided: bool,
    pub options: Vec<ActionOption>,
    pub request_digest: String,
    pub response: DecisionResponse,
    pub fallback: bool,
}

impl From<&StepRecord> for TraceRecord {
    fn from(s: &StepRecord) -> Self {
        Self {
            step: s.step,
            pose: PoseRecord { x: s.pose.x, z: s.pose.z, heading: s.pose.heading_deg },
            action: s.action.clone(),
            collided: s.collided,
            options: s.options.clone(),
            request_digest: s.request_digest.clone(),
            response: s.response.clone(),
            fallback: s.fallback,
        }
    }
}

impl TraceRecord {
    /// Back-conversion for replaying persisted traces.
    pub fn to_step_record(&self) -> StepRecord {
        StepRecord {
            step: self.step,
            pose: crate::world::AgentPose::new(self.pose.x, self.pose.z, self.pose.heading),
            action: self.action.clone(),
            action_kind: String::new(),
            collided: self.collided,
            options: self.options.clone(),
            request_digest: self.request_digest.clone(),
            response: self.response.clone(),
            fallback: self.fallback,
        }
    }
}

pub fn write_trace_jsonl(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for step in steps {
        let record = TraceRecord::from(step);
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a trace file; malformed lines are reported with their line number.
pub fn read_trace_jsonl(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Load(format!("{} line {}: {e}", path.display(), i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navigator::ActionKind;

    fn sample_records() -> Vec<StepRecord> {
        use crate::geom::Point2;
        let opt = ActionOption {
            id: 'A',
            kind: ActionKind::MoveToWaypoint {
                angle_bin: 3,
                dist_bin: 7,
                target: Point2::new(1.25, -0.5),
                tags: vec!["table".into()],
            },
            description: "Move to the waypoint".into(),
        };
        vec![StepRecord {
            step: 0,
            pose: crate::world::AgentPose::new(1.25, -0.5, 10.5),
            action: "A".into(),
            action_kind: "move_to".into(),
            collided: false,
            options: vec![opt],
            request_digest: "00ff".into(),
            response: DecisionResponse {
                thought: "t".into(),
                new_plan: "p".into(),
                action_id: "A".into(),
            },
            fallback: false,
        }]
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.trace.jsonl");
        let steps = sample_records();
        write_trace_jsonl(&path, &steps).unwrap();
        let records = read_trace_jsonl(&path).unwrap();
        assert_eq!(records.len(), 1);
        let back = TraceRecord::from(&steps[0]);
        assert_eq!(records[0], back);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"step\": 0}\nnot json\n").unwrap();
        let err = read_trace_jsonl(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn response_serializes_with_wire_field_names() {
        let r = DecisionResponse {
            thought: "a".into(),
            new_plan: "b".into(),
            action_id: "C".into(),
        };
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"thought":"a","plan":"b","action":"C"}"#);
    }
}
