//! Command implementations behind the CLI subcommands.

use crate::error::{Error, Result};
use crate::harness::config::{BackendKind, RunConfig};
use crate::harness::render::{heatmap_ppm, trajectory_svg};
use crate::harness::scene::{load_scene, Scene};
use crate::harness::trace::{read_trace_jsonl, write_trace_jsonl};
use crate::heatmap::{nms, target_heatmap, K_MAX, NMS_RADIUS_BINS};
use crate::metrics::{
    collision_rate, navigation_error, oracle_success, success, spl, trajectory_length,
    waypoint_metrics, WaypointMetrics,
};
use crate::navigator::{
    run_episode, ActionKind, DecisionBackend, EpisodeRun, ExternalBackend, GreedyBackend,
    RunSettings,
};
use crate::polar::{occupancy_mask, shortest_distance_profile, DepthCamera};
use crate::predictor::{detect_openings, PredictorSource, ToyPredictorParams};
use crate::synth::ring_scene;
use crate::world::{geodesic_distance, AgentPose, Episode, FloorPlan};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Per-episode metrics record as persisted to `metrics.jsonl`.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeMetricsRecord {
    pub episode_id: String,
    pub tl: f64,
    /// None when the final pose cannot reach the goal.
    pub ne: Option<f64>,
    pub osr: f64,
    pub sr: f64,
    pub spl: f64,
    pub collisions: f64,
}

/// Aggregate of a simulate run.
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub records: Vec<EpisodeMetricsRecord>,
    pub aggregate_csv: PathBuf,
    pub aborted: usize,
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

fn load_predictor(spec: &str, seed: u64) -> Result<PredictorSource> {
    if spec == "oracle" {
        return Ok(PredictorSource::Oracle);
    }
    let file = std::fs::File::open(spec)
        .map_err(|e| Error::Load(format!("params file {spec}: {e}")))?;
    let params = ToyPredictorParams::read_from(std::io::BufReader::new(file))?;
    Ok(PredictorSource::Toy { params, feature_seed: seed })
}

fn make_backend(config: &RunConfig) -> Box<dyn DecisionBackend> {
    match config.backend {
        BackendKind::Greedy => Box::new(GreedyBackend::new()),
        BackendKind::External => Box::new(ExternalBackend::new(config.endpoint.clone())),
    }
}

fn selected_episodes<'a>(scene: &'a Scene, filter: &str) -> Result<Vec<&'a Episode>> {
    let episodes: Vec<&Episode> = if filter.trim().is_empty() {
        scene.episodes.iter().collect()
    } else {
        let wanted: Vec<&str> = filter.split(',').map(str::trim).collect();
        scene
            .episodes
            .iter()
            .filter(|e| wanted.contains(&e.id.as_str()))
            .collect()
    };
    if episodes.is_empty() {
        return Err(Error::Load("no episodes match the filter".into()));
    }
    Ok(episodes)
}

/// Run every selected episode and persist traces and metrics. With
/// `metrics_only` the per-step trace files are skipped (the eval-nav
/// alias). Returns an error after persisting when any episode aborted.
pub fn cmd_simulate(config: &RunConfig, metrics_only: bool) -> Result<SimulateSummary> {
    let scene_path = config
        .scene
        .as_ref()
        .ok_or_else(|| Error::Config("simulate requires --scene".into()))?;
    let scene = load_scene(scene_path)?;
    let episodes = selected_episodes(&scene, &config.episodes)?;
    let predictor = load_predictor(&config.predictor, config.seed)?;
    std::fs::create_dir_all(&config.out)?;

    let camera = DepthCamera::default();
    let n = episodes.len();
    let workers = config.workers.min(n).max(1);
    let mut runs: Vec<Option<Result<EpisodeRun>>> = (0..n).map(|_| None).collect();
    {
        let slots: Vec<_> = runs.iter_mut().enumerate().collect();
        std::thread::scope(|scope| {
            for (worker, chunk) in split_round_robin(slots, workers).into_iter().enumerate() {
                let episodes = &episodes;
                let predictor = &predictor;
                let camera = &camera;
                let plan = &scene.plan;
                scope.spawn(move || {
                    let _ = worker;
                    for (idx, slot) in chunk {
                        let mut backend = make_backend(config);
                        let settings = RunSettings {
                            max_steps: config.max_steps,
                            stop_threshold: config.threshold,
                            backtrack_enabled: config.backtrack,
                            noise_stream: config
                                .seed
                                .wrapping_add((idx as u64) << 16),
                        };
                        *slot = Some(run_episode(
                            plan,
                            episodes[idx],
                            backend.as_mut(),
                            predictor,
                            camera,
                            &settings,
                        ));
                    }
                });
            }
        });
    }

    let mut records = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    let mut aborted = 0usize;
    for (idx, run) in runs.into_iter().enumerate() {
        let run = run.expect("worker filled every slot")?;
        let episode = episodes[idx];
        if run.trace.aborted {
            aborted += 1;
        }
        if !metrics_only {
            let path = config.out.join(format!("{}.trace.jsonl", episode.id));
            write_trace_jsonl(&path, &run.steps)?;
        }
        let tl = trajectory_length(&run.trace);
        let ne = navigation_error(&run.trace, episode.goal, &scene.plan)?;
        let ok = success(&run.trace, episode.goal, &scene.plan, config.threshold)?;
        let oracle = oracle_success(&run.trace, episode.goal, &scene.plan, config.threshold)?;
        let shortest = geodesic_distance(&scene.plan, episode.start.position(), episode.goal)?;
        let spl_v = spl(ok, shortest, tl)?;
        let collided = run.trace.collisions.iter().filter(|c| **c).count();
        let steps = run.trace.collisions.len();
        records.push(EpisodeMetricsRecord {
            episode_id: episode.id.clone(),
            tl,
            ne: ne.is_finite().then_some(ne),
            osr: if oracle { 1.0 } else { 0.0 },
            sr: if ok { 1.0 } else { 0.0 },
            spl: spl_v,
            collisions: if steps == 0 { 0.0 } else { collided as f64 / steps as f64 },
        });
        traces.push(run.trace);
    }

    // one JSON record per episode
    let jsonl_path = config.out.join("metrics.jsonl");
    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    std::fs::write(&jsonl_path, jsonl)?;

    // aggregate CSV
    let csv_path = config.out.join("metrics.csv");
    let mean = |f: &dyn Fn(&EpisodeMetricsRecord) -> f64| -> f64 {
        records.iter().map(|r| f(r)).sum::<f64>() / records.len() as f64
    };
    let ne_mean = records
        .iter()
        .map(|r| r.ne.unwrap_or(f64::INFINITY))
        .sum::<f64>()
        / records.len() as f64;
    let csv = format!(
        "tl,ne,osr,sr,spl,collisions\n{},{},{},{},{},{}\n",
        fmt_f64(mean(&|r| r.tl)),
        fmt_f64(ne_mean),
        fmt_f64(mean(&|r| r.osr)),
        fmt_f64(mean(&|r| r.sr)),
        fmt_f64(mean(&|r| r.spl)),
        fmt_f64(collision_rate(&traces)),
    );
    std::fs::write(&csv_path, csv)?;

    if aborted > 0 {
        return Err(Error::Backend(format!(
            "{aborted} of {n} episodes aborted; traces and metrics were persisted to {}",
            config.out.display()
        )));
    }
    Ok(SimulateSummary { records, aggregate_csv: csv_path, aborted })
}

fn split_round_robin<T>(items: Vec<T>, buckets: usize) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = (0..buckets).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        out[i % buckets].push(item);
    }
    out
}

/// Trained artifacts of one `train-toy` invocation.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// (lambda, params path, loss csv path, final total loss)
    pub outputs: Vec<(f64, PathBuf, PathBuf, f64)>,
}

/// Train the toy predictor once per configured lambda on generated ring
/// scenes and persist params plus the loss curves.
pub fn cmd_train_toy(config: &RunConfig) -> Result<TrainSummary> {
    use rand::SeedableRng;
    if config.train_scenes == 0 {
        return Err(Error::Config("train_scenes must be at least 1".into()));
    }
    std::fs::create_dir_all(&config.out)?;
    let camera = DepthCamera::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let scenes: Result<Vec<_>> = (0..config.train_scenes)
        .map(|i| {
            let (plan, pose) = ring_scene(config.seed.wrapping_add(i as u64));
            crate::predictor::make_train_scene(&plan, &pose, &camera, &mut rng)
        })
        .collect();
    let scenes = scenes?;

    let mut outputs = Vec::new();
    for &lambda in &config.lambda_occ {
        let init = ToyPredictorParams::init(crate::predictor::FEATURE_DIM, 0.1, config.seed);
        let tag = format!("{lambda:.2}");
        let curve_path = config.out.join(format!("loss_lambda_{tag}.csv"));
        match crate::predictor::train_toy(&scenes, lambda, config.epochs, &init) {
            Ok(result) => {
                let params_path = config.out.join(format!("params_lambda_{tag}.twp1"));
                let file = std::fs::File::create(&params_path)?;
                result.params.write_to(std::io::BufWriter::new(file))?;
                write_curve(&curve_path, &result.curve)?;
                let final_loss = result.curve.last().map(|p| p.l_total).unwrap_or(f64::NAN);
                outputs.push((lambda, params_path, curve_path, final_loss));
            }
            Err(diverged) => {
                write_curve(&curve_path, &diverged.curve)?;
                return Err(Error::Training(format!(
                    "lambda {lambda}: {diverged}; partial curve saved to {}",
                    curve_path.display()
                )));
            }
        }
    }
    Ok(TrainSummary { outputs })
}

fn write_curve(path: &Path, curve: &[crate::predictor::CurvePoint]) -> Result<()> {
    let mut s = String::from("epoch,l_vis,l_occ,l_total\n");
    for p in curve {
        s.push_str(&format!("{},{},{},{}\n", p.epoch, p.l_vis, p.l_occ, p.l_total));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// One evaluated pose.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub pose_index: usize,
    pub metrics: WaypointMetrics,
}

/// Waypoint-evaluation output.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    pub mean_pct_open: f64,
    pub mean_delta: f64,
    /// Mean %Open of the comparison predictor, when one was given.
    pub compare_mean_pct_open: Option<f64>,
    pub csv_path: PathBuf,
}

/// Evaluate a predictor (and optionally a comparison predictor) over scene
/// episode start poses or generated held-out poses.
pub fn cmd_eval_waypoints(config: &RunConfig) -> Result<EvalSummary> {
    let camera = DepthCamera::default();
    let poses: Vec<(FloorPlan, AgentPose)> = if let Some(path) = &config.scene {
        let scene = load_scene(path)?;
        scene
            .episodes
            .iter()
            .map(|e| (scene.plan.clone(), e.start))
            .collect()
    } else {
        (0..config.eval_poses)
            .map(|i| ring_scene(config.seed.wrapping_add(100_000 + i as u64)))
            .collect()
    };
    if poses.is_empty() {
        return Err(Error::Validation("no poses to evaluate".into()));
    }
    let source = load_predictor(&config.predictor, config.seed)?;
    let compare = config
        .compare
        .as_ref()
        .map(|p| load_predictor(p.to_str().unwrap_or_default(), config.seed))
        .transpose()?;
    std::fs::create_dir_all(&config.out)?;

    let eval_source = |source: &PredictorSource| -> Result<Vec<WaypointMetrics>> {
        let mut all = Vec::with_capacity(poses.len());
        for (i, (plan, pose)) in poses.iter().enumerate() {
            let pano = crate::world::render_depth_panorama(plan, pose, &camera)?;
            let profile = shortest_distance_profile(&pano, &camera)?;
            let mask = occupancy_mask(&profile);
            let gt = detect_openings(&profile);
            let p_star = target_heatmap(&gt)?;
            let map = source.heatmap_at(plan, pose, &camera, 100_000 + i as u64)?;
            let set = nms(&map, K_MAX, NMS_RADIUS_BINS);
            all.push(waypoint_metrics(&set, &gt, &mask, &p_star));
        }
        Ok(all)
    };

    let main_metrics = eval_source(&source)?;
    let compare_mean = match &compare {
        Some(src) => {
            let m = eval_source(src)?;
            Some(m.iter().map(|r| r.pct_open).sum::<f64>() / m.len() as f64)
        }
        None => None,
    };

    let csv_path = config.out.join("waypoints.csv");
    let mut csv = String::from("pose,delta,pct_open,d_c,d_h,s_way\n");
    let opt = |v: Option<f64>| v.map(|x| fmt_f64(x)).unwrap_or_default();
    for (i, m) in main_metrics.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            fmt_f64(m.delta),
            fmt_f64(m.pct_open),
            opt(m.d_c),
            opt(m.d_h),
            fmt_f64(m.s_way)
        ));
    }
    let n = main_metrics.len() as f64;
    let mean_delta = main_metrics.iter().map(|m| m.delta).sum::<f64>() / n;
    let mean_pct = main_metrics.iter().map(|m| m.pct_open).sum::<f64>() / n;
    let mean_dc = mean_opt(main_metrics.iter().map(|m| m.d_c));
    let mean_dh = mean_opt(main_metrics.iter().map(|m| m.d_h));
    let mean_sway = main_metrics.iter().map(|m| m.s_way).sum::<f64>() / n;
    csv.push_str(&format!(
        "mean,{},{},{},{},{}\n",
        fmt_f64(mean_delta),
        fmt_f64(mean_pct),
        opt(mean_dc),
        opt(mean_dh),
        fmt_f64(mean_sway)
    ));
    std::fs::write(&csv_path, csv)?;

    Ok(EvalSummary {
        rows: main_metrics
            .into_iter()
            .enumerate()
            .map(|(pose_index, metrics)| EvalRow { pose_index, metrics })
            .collect(),
        mean_pct_open: mean_pct,
        mean_delta,
        compare_mean_pct_open: compare_mean,
        csv_path,
    })
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let collected: Vec<f64> = values.flatten().collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Rendered artifacts of one `render` invocation.
#[derive(Debug, Clone)]
pub struct RenderSummary {
    pub svg_path: PathBuf,
    pub heatmap_paths: Vec<PathBuf>,
}

/// Render a persisted trace against its scene: the trajectory SVG plus one
/// polar-heatmap PPM per step (the geometry oracle's view at the recorded
/// pose with the offered waypoints marked).
pub fn cmd_render(trace_path: &Path, scene_path: &Path, out: &Path) -> Result<RenderSummary> {
    let records = read_trace_jsonl(trace_path)?;
    let scene = load_scene(scene_path)?;
    let stem = trace_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace");
    let episode_id = stem.strip_suffix(".trace").unwrap_or(stem);
    let episode = scene
        .episodes
        .iter()
        .find(|e| e.id == episode_id)
        .ok_or_else(|| {
            Error::Load(format!("scene has no episode '{episode_id}' for this trace"))
        })?;
    std::fs::create_dir_all(out)?;

    let mut poses = vec![episode.start];
    let mut collisions = Vec::new();
    for r in &records {
        poses.push(AgentPose::new(r.pose.x, r.pose.z, r.pose.heading));
        collisions.push(r.collided);
    }
    let svg = trajectory_svg(&scene.plan, &poses, &collisions, episode.goal);
    let svg_path = out.join(format!("{episode_id}.traj.svg"));
    std::fs::write(&svg_path, svg)?;

    let camera = DepthCamera::default();
    let mut heatmap_paths = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let pose_before = poses[i];
        let map = PredictorSource::Oracle.heatmap_at(&scene.plan, &pose_before, &camera, 0)?;
        let marked: Vec<(usize, usize)> = record
            .options
            .iter()
            .filter_map(|o| match &o.kind {
                ActionKind::MoveToWaypoint { angle_bin, dist_bin, .. } => {
                    Some((*angle_bin, *dist_bin))
                }
                _ => None,
            })
            .collect();
        let ppm = heatmap_ppm(&map, &marked);
        let path = out.join(format!("{episode_id}.step{i:03}.heatmap.ppm"));
        std::fs::write(&path, ppm)?;
        heatmap_paths.push(path);
    }
    Ok(RenderSummary { svg_path, heatmap_paths })
}
