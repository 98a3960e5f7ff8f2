//! History-aware navigation agent: expanded action space, deterministic
//! prompt assembly, decision parsing, pose/stack bookkeeping with a LIFO
//! backtrack, and the episode loop over pluggable decision backends.

use crate::error::{Error, Result};
use crate::geom::{bearing_dir, normalize_deg, Point2};
use crate::heatmap::{nms, polar_to_metric, WaypointSet, K_MAX, NMS_RADIUS_BINS};
use crate::metrics::EpisodeTrace;
use crate::polar::DepthCamera;
use crate::predictor::PredictorSource;
use crate::world::{step_to, visible_objects, AgentPose, Episode, FloorPlan, NavGrid};
use serde::{Deserialize, Serialize};

/// Recent history entries rendered verbatim; older ones collapse to a count.
const HISTORY_WINDOW: usize = 12;
/// Candidate landings within this range of a recorded dead end are skipped
/// by the scripted policy.
const DEAD_END_RADIUS: f64 = 0.5;

/// What an action does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    MoveToWaypoint {
        angle_bin: usize,
        dist_bin: usize,
        /// Absolute world target of the hop.
        target: Point2,
        /// Ground-truth labels visible toward the waypoint.
        tags: Vec<String>,
    },
    TurnSlightLeft,
    TurnSharpLeft,
    TurnSlightRight,
    TurnSharpRight,
    MoveBack,
    Stop,
}

impl ActionKind {
    /// Canonical token used in traces and metrics.
    pub fn token(&self) -> &'static str {
        match self {
            ActionKind::MoveToWaypoint { .. } => "move_to",
            ActionKind::TurnSlightLeft => "turn_slight_left",
            ActionKind::TurnSharpLeft => "turn_sharp_left",
            ActionKind::TurnSlightRight => "turn_slight_right",
            ActionKind::TurnSharpRight => "turn_sharp_right",
            ActionKind::MoveBack => "move_back",
            ActionKind::Stop => "stop",
        }
    }
}

/// One selectable action with its option letter and prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOption {
    pub id: char,
    pub kind: ActionKind,
    pub description: String,
}

/// One step of the agent's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub action_taken: String,
    pub scene_tags: Vec<String>,
    pub pose_after: AgentPose,
}

/// Free-form multi-step plan carried between steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub text: String,
}

/// Mutable navigation state for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub pose: AgentPose,
    pub history: Vec<HistoryEntry>,
    pub plan: Plan,
    pub backtrack_stack: Vec<AgentPose>,
    pub step_count: usize,
    pub done: bool,
}

impl NavState {
    pub fn new(start: AgentPose) -> Self {
        Self {
            pose: start,
            history: Vec::new(),
            plan: Plan::default(),
            backtrack_stack: Vec::new(),
            step_count: 0,
            done: false,
        }
    }
}

/// Wire form of one offered option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireOption {
    pub id: String,
    pub text: String,
}

/// Optional per-option image attachment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub option_id: String,
    pub mime: String,
    pub base64: String,
}

/// One decision request. The serialized form is the decision wire protocol;
/// the skipped fields carry the extra prompt sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub instruction: String,
    pub plan: String,
    pub history: Vec<String>,
    pub options: Vec<WireOption>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<Vec<WireImage>>,
    #[serde(skip)]
    pub task_description: String,
    #[serde(skip)]
    pub format_directive: String,
}

impl DecisionRequest {
    /// Deterministic full prompt: task, instruction, previous planning,
    /// history, options, output format.
    pub fn full_prompt(&self) -> String {
        let mut s = String::new();
        s.push_str("== Task ==\n");
        s.push_str(&self.task_description);
        s.push_str("\n\n== Instruction ==\n");
        s.push_str(&self.instruction);
        s.push_str("\n\n== Previous Planning ==\n");
        s.push_str(if self.plan.is_empty() { "none" } else { &self.plan });
        s.push_str("\n\n== History ==\n");
        if self.history.is_empty() {
            s.push_str("none");
        } else {
            s.push_str(&self.history.join("\n"));
        }
        s.push_str("\n\n== Current Action Options ==\n");
        for opt in &self.options {
            s.push_str(&format!("{}. {}\n", opt.id, opt.text));
        }
        s.push_str("\n== Output Format ==\n");
        s.push_str(&self.format_directive);
        s
    }

    /// Append the parse-failure reminder for the single re-prompt.
    pub fn add_format_reminder(&mut self) {
        let reminder = "Reminder: reply with the three labeled fields Thought, New Plan, and Action; Action must be exactly one of the offered option letters.";
        self.instruction.push_str("\n\n");
        self.instruction.push_str(reminder);
        self.format_directive.push('\n');
        self.format_directive.push_str(reminder);
    }
}

/// A parsed decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub thought: String,
    #[serde(rename = "plan")]
    pub new_plan: String,
    #[serde(rename = "action")]
    pub action_id: String,
}

/// Build the step's action space: waypoint moves first (annotated with the
/// labels visible toward each waypoint's view), then the four turns, then
/// the backtrack move when the stack allows it, then stop.
pub fn build_action_space(
    waypoints: &WaypointSet,
    pose: &AgentPose,
    plan_world: &FloorPlan,
    state: &NavState,
    backtrack_enabled: bool,
) -> Vec<ActionOption> {
    let mut options = Vec::new();
    let mut next_id = b'A';
    let mut push = |kind: ActionKind, description: String, options: &mut Vec<ActionOption>| {
        options.push(ActionOption { id: next_id as char, kind, description });
        next_id += 1;
    };

    for w in waypoints.waypoints.iter().take(K_MAX) {
        let (theta, dist) = polar_to_metric(w);
        let view = bearing_view_index(theta);
        let tags: Vec<String> = visible_objects(plan_world, pose, view)
            .into_iter()
            .map(|o| o.label)
            .collect();
        let bearing = normalize_deg(pose.heading_deg + theta);
        let target = pose.position().add(bearing_dir(bearing).scale(dist));
        let mut description = format!(
            "Move to the waypoint at {theta:.1} degrees (relative), {dist:.2} m away"
        );
        if !tags.is_empty() {
            description.push_str(&format!("; visible there: {}", tags.join(", ")));
        }
        push(
            ActionKind::MoveToWaypoint { angle_bin: w.angle_bin, dist_bin: w.dist_bin, target, tags },
            description,
            &mut options,
        );
    }
    push(
        ActionKind::TurnSlightLeft,
        "Turn slightly left, about 30 degrees".to_string(),
        &mut options,
    );
    push(
        ActionKind::TurnSharpLeft,
        "Turn sharply left, about 90 degrees".to_string(),
        &mut options,
    );
    push(
        ActionKind::TurnSlightRight,
        "Turn slightly right, about 30 degrees".to_string(),
        &mut options,
    );
    push(
        ActionKind::TurnSharpRight,
        "Turn sharply right, about 90 degrees".to_string(),
        &mut options,
    );
    if backtrack_enabled && !state.backtrack_stack.is_empty() {
        push(
            ActionKind::MoveBack,
            "Move back to the previous position, reversing the last move".to_string(),
            &mut options,
        );
    }
    push(ActionKind::Stop, "Stop here and end the episode".to_string(), &mut options);
    options
}

/// View index whose sector center is nearest to a relative bearing.
pub fn bearing_view_index(theta_deg: f64) -> usize {
    ((theta_deg / 30.0).round() as usize) % 12
}

/// Render the deterministic decision request for the current state.
pub fn assemble_prompt(
    instruction: &str,
    state: &NavState,
    options: &[ActionOption],
) -> DecisionRequest {
    assert!(!options.is_empty(), "action space must be non-empty");
    let mut history = Vec::new();
    if state.history.len() > HISTORY_WINDOW {
        history.push(format!(
            "({} earlier steps omitted)",
            state.history.len() - HISTORY_WINDOW
        ));
    }
    let start = state.history.len().saturating_sub(HISTORY_WINDOW);
    for entry in &state.history[start..] {
        let mut line = format!("Step {}: {}", entry.step, entry.action_taken);
        if !entry.scene_tags.is_empty() {
            line.push_str(&format!(" | scene: {}", entry.scene_tags.join(", ")));
        }
        history.push(line);
    }
    DecisionRequest {
        instruction: instruction.to_string(),
        plan: state.plan.text.clone(),
        history,
        options: options
            .iter()
            .map(|o| WireOption { id: o.id.to_string(), text: o.description.clone() })
            .collect(),
        images: None,
        task_description: "You control a wheeled robot in an indoor space. Follow the instruction to reach the goal. At each step you get candidate waypoints and turning options; pick exactly one action. Stop once you believe the goal is within reach.".to_string(),
        format_directive: "Reply with exactly three labeled fields:\nThought: <your reasoning>\nNew Plan: <your updated multi-step plan>\nAction: <one option letter>".to_string(),
    }
}

/// Parse a free-text decision. Field labels match case-insensitively and
/// tolerate surrounding prose; the action letter must be one of the offered
/// ids.
pub fn parse_decision(raw: &str, offered_ids: &[char]) -> Result<DecisionResponse> {
    if raw.trim().is_empty() {
        return Err(Error::Parse("empty decision text".into()));
    }
    let thought = capture_field(raw, &["thought"]);
    let plan = capture_field(raw, &["new plan", "plan"]);
    let action_re = regex::Regex::new(r"(?i)action\**\s*[:\-]\s*\**\s*([A-Za-z])\b").unwrap();
    let letter = action_re
        .captures_iter(raw)
        .last()
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().to_ascii_uppercase().chars().next().unwrap());
    let Some(letter) = letter else {
        return Err(Error::Parse("no action field found".into()));
    };
    if !offered_ids.contains(&letter) {
        return Err(Error::Parse(format!("action '{letter}' is not an offered option")));
    }
    Ok(DecisionResponse {
        thought: thought.unwrap_or_default(),
        new_plan: plan.unwrap_or_default(),
        action_id: letter.to_string(),
    })
}

/// Capture the text after `label:` up to the next known label or the end.
fn capture_field(raw: &str, labels: &[&str]) -> Option<String> {
    for label in labels {
        let pattern = format!(
            r"(?is)\b{}\s*[:\-]\s*(.*?)\s*(?:[*\s]*\b(?:thought|new\s+plan|plan|action)\s*[:\-]|\z)",
            regex::escape(label)
        );
        let re = regex::Regex::new(&pattern).unwrap();
        if let Some(c) = re.captures(raw) {
            let text = c.get(1).map(|m| m.as_str().trim().to_string()).unwrap_or_default();
            if !text.is_empty() {
                return Some(strip_markdown(&text));
            }
        }
    }
    None
}

fn strip_markdown(s: &str) -> String {
    s.trim_matches(|c: char| c == '*' || c.is_whitespace()).to_string()
}

/// Result of applying one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionOutcome {
    pub collided: bool,
    pub distance_traveled: f64,
}

/// Apply an offered action to the state: waypoint moves push the origin
/// pose onto the backtrack stack, turns adjust the heading in place, the
/// backtrack move pops the stack and reverses along the recorded position,
/// and stop raises the done flag.
pub fn apply_action(
    state: &mut NavState,
    option: &ActionOption,
    plan_world: &FloorPlan,
) -> Result<ActionOutcome> {
    let step = state.step_count;
    let mut outcome = ActionOutcome { collided: false, distance_traveled: 0.0 };
    let (action_text, tags) = match &option.kind {
        ActionKind::MoveToWaypoint { target, tags, .. } => {
            let out = step_to(&state.pose, *target, plan_world);
            state.backtrack_stack.push(state.pose);
            state.pose = out.new_pose;
            outcome = ActionOutcome {
                collided: out.collided,
                distance_traveled: out.distance_traveled,
            };
            let text = format!(
                "moved {:.2} m toward the chosen waypoint{}",
                out.distance_traveled,
                if out.collided { " (stopped by an obstacle)" } else { "" }
            );
            (text, tags.clone())
        }
        ActionKind::TurnSlightLeft => {
            state.pose.heading_deg = normalize_deg(state.pose.heading_deg - 30.0);
            ("turned slightly left".to_string(), Vec::new())
        }
        ActionKind::TurnSharpLeft => {
            state.pose.heading_deg = normalize_deg(state.pose.heading_deg - 90.0);
            ("turned sharply left".to_string(), Vec::new())
        }
        ActionKind::TurnSlightRight => {
            state.pose.heading_deg = normalize_deg(state.pose.heading_deg + 30.0);
            ("turned slightly right".to_string(), Vec::new())
        }
        ActionKind::TurnSharpRight => {
            state.pose.heading_deg = normalize_deg(state.pose.heading_deg + 90.0);
            ("turned sharply right".to_string(), Vec::new())
        }
        ActionKind::MoveBack => {
            let Some(prev) = state.backtrack_stack.pop() else {
                return Err(Error::State("backtrack stack is empty".into()));
            };
            let out = step_to(&state.pose, prev.position(), plan_world);
            let mut pose = out.new_pose;
            if out.distance_traveled == 0.0 {
                pose.heading_deg = normalize_deg(state.pose.heading_deg + 180.0);
            }
            state.pose = pose;
            outcome = ActionOutcome {
                collided: out.collided,
                distance_traveled: out.distance_traveled,
            };
            ("moved back to the previous position".to_string(), Vec::new())
        }
        ActionKind::Stop => {
            state.done = true;
            ("stopped".to_string(), Vec::new())
        }
    };
    state.history.push(HistoryEntry {
        step,
        action_taken: action_text,
        scene_tags: tags,
        pose_after: state.pose,
    });
    state.step_count += 1;
    Ok(outcome)
}

/// World-side context handed to scripted backends. The external backend
/// only ever sees the serialized [`DecisionRequest`].
pub struct DecisionContext<'a> {
    pub plan: &'a FloorPlan,
    pub grid: &'a NavGrid,
    /// Geodesic distance field rooted at the goal.
    pub goal_field: &'a [f64],
    pub goal: Point2,
    pub pose: AgentPose,
    pub options: &'a [ActionOption],
    pub stop_threshold: f64,
}

/// A policy answering one assembled prompt per step.
pub trait DecisionBackend {
    fn decide(&mut self, request: &DecisionRequest, ctx: &DecisionContext) -> Result<DecisionResponse>;
    fn name(&self) -> &'static str;
}

pub fn decide(
    backend: &mut dyn DecisionBackend,
    request: &DecisionRequest,
    ctx: &DecisionContext,
) -> Result<DecisionResponse> {
    backend.decide(request, ctx)
}

/// Deterministic scripted policy: take the offered waypoint that minimizes
/// the geodesic distance to the goal, stop once within the threshold, and
/// when nothing improves choose the backtrack move and remember the spot as
/// a dead end so its surroundings are not retried.
pub struct GreedyBackend {
    dead_ends: Vec<Point2>,
}

impl GreedyBackend {
    pub fn new() -> Self {
        Self { dead_ends: Vec::new() }
    }
}

impl Default for GreedyBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl DecisionBackend for GreedyBackend {
    fn decide(&mut self, _request: &DecisionRequest, ctx: &DecisionContext) -> Result<DecisionResponse> {
        let d_cur = ctx
            .grid
            .distance_from_field(ctx.goal_field, ctx.goal, ctx.pose.position())?;
        let stop_id = ctx
            .options
            .iter()
            .find(|o| o.kind == ActionKind::Stop)
            .map(|o| o.id)
            .expect("stop is always offered");
        let respond = |action: char, thought: String| DecisionResponse {
            thought,
            new_plan: "Move along waypoints that shrink the remaining distance; back out of dead ends.".to_string(),
            action_id: action.to_string(),
        };
        if d_cur <= ctx.stop_threshold {
            return Ok(respond(stop_id, format!("The goal is within {:.2} m; stopping.", d_cur)));
        }

        let mut candidates: Vec<(char, f64)> = Vec::new();
        for opt in ctx.options {
            if let ActionKind::MoveToWaypoint { target, .. } = &opt.kind {
                let landing = step_to(&ctx.pose, *target, ctx.plan).new_pose;
                if self
                    .dead_ends
                    .iter()
                    .any(|d| d.distance(&landing.position()) <= DEAD_END_RADIUS)
                {
                    continue;
                }
                let d = ctx
                    .grid
                    .distance_from_field(ctx.goal_field, ctx.goal, landing.position())?;
                candidates.push((opt.id, d));
            }
        }
        let improving = candidates
            .iter()
            .filter(|(_, d)| *d < d_cur - 1e-9)
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((id, d)) = improving {
            return Ok(respond(
                *id,
                format!("Option {id} shrinks the remaining distance to {d:.2} m."),
            ));
        }
        if let Some(back) = ctx.options.iter().find(|o| o.kind == ActionKind::MoveBack) {
            self.dead_ends.push(ctx.pose.position());
            return Ok(respond(
                back.id,
                "No option gets closer to the goal; backing out of this dead end.".to_string(),
            ));
        }
        if let Some((id, d)) = candidates
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        {
            return Ok(respond(
                *id,
                format!("Nothing improves; taking the least bad option {id} at {d:.2} m."),
            ));
        }
        Ok(respond(stop_id, "No viable waypoint remains; stopping.".to_string()))
    }

    fn name(&self) -> &'static str {
        "greedy"
    }
}

/// Settings for the external decision backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    /// "decision" posts the wire request; "chat" posts a chat-completions
    /// payload and parses the assistant text.
    pub mode: EndpointMode,
    pub model: String,
    pub temperature: f64,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env: String,
    pub timeout_secs: u64,
    pub retries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointMode {
    Decision,
    Chat,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            mode: EndpointMode::Decision,
            model: "generic-chat".to_string(),
            temperature: 0.0,
            auth_token_env: "WAYNAV_API_TOKEN".to_string(),
            timeout_secs: 60,
            retries: 2,
        }
    }
}

/// Blocking HTTP client for the decision wire protocol or a chat endpoint.
pub struct ExternalBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl ExternalBackend {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(config.timeout_secs.max(1)))
            .build();
        Self { config, agent }
    }

    fn post(&self, body: &serde_json::Value) -> Result<String> {
        let mut last_err = String::new();
        for _ in 0..=self.config.retries {
            let mut req = self.agent.post(&self.config.url);
            if let Ok(token) = std::env::var(&self.config.auth_token_env) {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_string()
                        .map_err(|e| Error::Backend(format!("failed reading response: {e}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Backend(format!(
            "endpoint unreachable after {} attempts: {last_err}",
            self.config.retries + 1
        )))
    }
}

impl DecisionBackend for ExternalBackend {
    fn decide(&mut self, request: &DecisionRequest, ctx: &DecisionContext) -> Result<DecisionResponse> {
        let offered: Vec<char> = ctx.options.iter().map(|o| o.id).collect();
        match self.config.mode {
            EndpointMode::Decision => {
                let body = serde_json::to_value(request)?;
                let text = self.post(&body)?;
                let response: DecisionResponse = serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("malformed decision response: {e}")))?;
                let action = response.action_id.trim().to_ascii_uppercase();
                let letter = action.chars().next().unwrap_or(' ');
                if action.len() != 1 || !offered.contains(&letter) {
                    return Err(Error::Parse(format!(
                        "action '{}' is not an offered option",
                        response.action_id
                    )));
                }
                Ok(DecisionResponse { action_id: letter.to_string(), ..response })
            }
            EndpointMode::Chat => {
                let body = serde_json::json!({
                    "model": self.config.model,
                    "temperature": self.config.temperature,
                    "messages": [
                        {"role": "system", "content": request.task_description},
                        {"role": "user", "content": request.full_prompt()},
                    ],
                });
                let text = self.post(&body)?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("malformed chat response: {e}")))?;
                let content = value
                    .pointer("/choices/0/message/content")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| Error::Parse("chat response has no assistant text".into()))?;
                parse_decision(content, &offered)
            }
        }
    }

    fn name(&self) -> &'static str {
        "external"
    }
}

/// Everything recorded about one executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Pose after the action.
    pub pose: AgentPose,
    /// Chosen option letter.
    pub action: String,
    /// Canonical action token.
    pub action_kind: String,
    pub collided: bool,
    pub options: Vec<ActionOption>,
    pub request_digest: String,
    pub response: DecisionResponse,
    /// True when the response came from the parse-failure fallback.
    pub fallback: bool,
}

/// A finished episode: the metrics trace plus the per-step records.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub trace: EpisodeTrace,
    pub steps: Vec<StepRecord>,
}

/// FNV-1a hash of the request prompt, hex encoded.
pub fn request_digest(request: &DecisionRequest) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in request.full_prompt().as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// Episode-level settings for [`run_episode`].
pub struct RunSettings {
    pub max_steps: usize,
    pub stop_threshold: f64,
    pub backtrack_enabled: bool,
    /// Base RNG stream for per-step predictor noise.
    pub noise_stream: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { max_steps: 20, stop_threshold: 3.0, backtrack_enabled: true, noise_stream: 0 }
    }
}

/// Run one episode: render, predict waypoints, offer actions, decide,
/// apply, and record everything, until the agent stops or the step budget
/// runs out. Backend transport failures mark the trace aborted; a parse
/// failure triggers exactly one re-prompt with a format reminder and then
/// falls back to stop.
pub fn run_episode(
    plan_world: &FloorPlan,
    episode: &Episode,
    backend: &mut dyn DecisionBackend,
    predictor_source: &PredictorSource,
    camera: &DepthCamera,
    settings: &RunSettings,
) -> Result<EpisodeRun> {
    let grid = NavGrid::new(plan_world);
    let goal_field = grid.distance_field(episode.goal)?;
    let mut state = NavState::new(episode.start);
    let mut trace = EpisodeTrace {
        episode_id: episode.id.clone(),
        poses: vec![state.pose],
        actions: Vec::new(),
        collisions: Vec::new(),
        requests: Vec::new(),
        responses: Vec::new(),
        aborted: false,
    };
    let mut steps = Vec::new();

    for step in 0..settings.max_steps {
        if state.done {
            break;
        }
        let heatmap = predictor_source.heatmap_at(
            plan_world,
            &state.pose,
            camera,
            settings.noise_stream.wrapping_add(step as u64),
        )?;
        let waypoints = nms(&heatmap, K_MAX, NMS_RADIUS_BINS);
        let options =
            build_action_space(&waypoints, &state.pose, plan_world, &state, settings.backtrack_enabled);
        let request = assemble_prompt(&episode.instruction, &state, &options);
        let ctx = DecisionContext {
            plan: plan_world,
            grid: &grid,
            goal_field: &goal_field,
            goal: episode.goal,
            pose: state.pose,
            options: &options,
            stop_threshold: settings.stop_threshold,
        };
        let (response, fallback) = match decide_with_fallback(backend, &request, &ctx) {
            Ok(r) => r,
            Err(e) => {
                trace.requests.push(request.full_prompt());
                trace.responses.push(format!("[aborted: {e}]"));
                trace.aborted = true;
                break;
            }
        };
        let letter = response.action_id.chars().next().expect("validated action id");
        let option = options
            .iter()
            .find(|o| o.id == letter)
            .expect("validated against offered ids")
            .clone();
        if !response.new_plan.is_empty() {
            state.plan = Plan { text: response.new_plan.clone() };
        }
        let outcome = apply_action(&mut state, &option, plan_world)?;
        trace.poses.push(state.pose);
        trace.actions.push(option.kind.token().to_string());
        trace.collisions.push(outcome.collided);
        trace.requests.push(request.full_prompt());
        trace.responses.push(serde_json::to_string(&response)?);
        steps.push(StepRecord {
            step,
            pose: state.pose,
            action: option.id.to_string(),
            action_kind: option.kind.token().to_string(),
            collided: outcome.collided,
            options: options.clone(),
            request_digest: request_digest(&request),
            response,
            fallback,
        });
    }

    Ok(EpisodeRun { trace, steps })
}

/// One decision with the bounded parse-failure fallback: a single re-prompt
/// with a format reminder, then a forced stop.
fn decide_with_fallback(
    backend: &mut dyn DecisionBackend,
    request: &DecisionRequest,
    ctx: &DecisionContext,
) -> Result<(DecisionResponse, bool)> {
    match backend.decide(request, ctx) {
        Ok(r) => Ok((r, false)),
        Err(Error::Parse(first)) => {
            let mut retry = request.clone();
            retry.add_format_reminder();
            match backend.decide(&retry, ctx) {
                Ok(r) => Ok((r, true)),
                Err(Error::Parse(second)) => {
                    let stop = ctx
                        .options
                        .iter()
                        .find(|o| o.kind == ActionKind::Stop)
                        .expect("stop is always offered");
                    Ok((
                        DecisionResponse {
                            thought: format!(
                                "fallback: two unparseable responses ({first}; {second}); stopping"
                            ),
                            new_plan: String::new(),
                            action_id: stop.id.to_string(),
                        },
                        true,
                    ))
                }
                Err(e) => Err(e),
            }
        }
        Err(e) => Err(e),
    }
}

/// Re-apply the recorded actions of a run and return the replayed poses.
pub fn replay(
    plan_world: &FloorPlan,
    start: AgentPose,
    steps: &[StepRecord],
) -> Result<Vec<AgentPose>> {
    let mut state = NavState::new(start);
    let mut poses = vec![state.pose];
    for record in steps {
        let letter = record.action.chars().next().ok_or_else(|| {
            Error::Validation(format!("step {} has no action letter", record.step))
        })?;
        let option = record
            .options
            .iter()
            .find(|o| o.id == letter)
            .ok_or_else(|| Error::Validation(format!("step {} action not offered", record.step)))?;
        apply_action(&mut state, option, plan_world)?;
        poses.push(state.pose);
    }
    Ok(poses)
}
