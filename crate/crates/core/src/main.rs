//! Command-line entry point.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use waynav::harness::config::{BackendKind, ConfigLayer, RunConfig};
use waynav::harness::runner;

#[derive(Parser)]
#[command(name = "waynav", version, about = "Occupancy-aware waypoint navigation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run navigation episodes and persist traces and metrics.
    Simulate(RunArgs),
    /// Run navigation episodes with metrics-only output.
    EvalNav(RunArgs),
    /// Train the toy waypoint predictor on generated scenes.
    TrainToy(RunArgs),
    /// Evaluate waypoint predictions against ground-truth openings.
    EvalWaypoints(RunArgs),
    /// Render a persisted trace to SVG and PPM images.
    Render {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scene JSON file.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated episode ids to run.
    #[arg(long)]
    episodes: Option<String>,
    /// Decision backend: greedy or external.
    #[arg(long)]
    backend: Option<String>,
    /// External decision endpoint URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Wire mode for the endpoint: decision or chat.
    #[arg(long)]
    endpoint_mode: Option<String>,
    /// Model name for the chat endpoint mode.
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature for the chat endpoint mode.
    #[arg(long)]
    temperature: Option<f64>,
    /// Predictor source: "oracle" or a params file path.
    #[arg(long)]
    predictor: Option<String>,
    /// Second params file for paired waypoint evaluation.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Occupancy-loss weight(s); repeat the flag to train once per value.
    #[arg(long = "lambda-occ")]
    lambda_occ: Vec<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Success threshold in meters (3.0 sim, 2.0 strict).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Episode-level worker count.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Offer the backtrack action (true/false).
    #[arg(long)]
    backtrack: Option<bool>,
    /// Generated training scene count for train-toy.
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Generated held-out pose count for eval-waypoints.
    #[arg(long)]
    eval_poses: Option<usize>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, waynav::Error> {
        let file = match &self.config {
            Some(path) => Some(ConfigLayer::from_toml_file(path)?),
            None => None,
        };
        let backend = match self.backend.as_deref() {
            None => None,
            Some("greedy") => Some(BackendKind::Greedy),
            Some("external") => Some(BackendKind::External),
            Some(other) => {
                return Err(waynav::Error::Config(format!(
                    "backend must be 'greedy' or 'external', got '{other}'"
                )))
            }
        };
        let cli = ConfigLayer {
            scene: self.scene,
            episodes: self.episodes,
            backend,
            endpoint: self.endpoint,
            endpoint_mode: self.endpoint_mode,
            model: self.model,
            temperature: self.temperature,
            auth_token_env: None,
            timeout_secs: None,
            retries: None,
            predictor: self.predictor,
            compare: self.compare,
            lambda_occ: (!self.lambda_occ.is_empty()).then_some(self.lambda_occ),
            max_steps: self.max_steps,
            threshold: self.threshold,
            seed: self.seed,
            workers: self.workers,
            out: self.out,
            backtrack: self.backtrack,
            train_scenes: self.train_scenes,
            epochs: self.epochs,
            eval_poses: self.eval_poses,
        };
        RunConfig::resolve(file, cli)
    }
}

fn run() -> Result<(), waynav::Error> {
    match Cli::parse().command {
        Command::Simulate(args) => {
            let config = args.resolve()?;
            let summary = runner::cmd_simulate(&config, false)?;
            print_simulate(&summary);
        }
        Command::EvalNav(args) => {
            let config = args.resolve()?;
            let summary = runner::cmd_simulate(&config, true)?;
            print_simulate(&summary);
        }
        Command::TrainToy(args) => {
            let config = args.resolve()?;
            let summary = runner::cmd_train_toy(&config)?;
            for (lambda, params, curve, final_loss) in &summary.outputs {
                println!(
                    "lambda {lambda}: final loss {final_loss:.6}, params {}, curve {}",
                    params.display(),
                    curve.display()
                );
            }
        }
        Command::EvalWaypoints(args) => {
            let config = args.resolve()?;
            let summary = runner::cmd_eval_waypoints(&config)?;
            println!(
                "{} poses: mean |delta| {:.3}, mean %Open {:.2}",
                summary.rows.len(),
                summary.mean_delta,
                summary.mean_pct_open
            );
            if let Some(other) = summary.compare_mean_pct_open {
                println!(
                    "%Open delta vs comparison: {:+.2} points ({:.2} vs {:.2})",
                    summary.mean_pct_open - other,
                    summary.mean_pct_open,
                    other
                );
            }
            println!("per-pose metrics: {}", summary.csv_path.display());
        }
        Command::Render { trace, scene, out } => {
            let summary = runner::cmd_render(&trace, &scene, &out)?;
            println!("trajectory: {}", summary.svg_path.display());
            println!("heatmaps: {} files", summary.heatmap_paths.len());
        }
    }
    Ok(())
}

fn print_simulate(summary: &runner::SimulateSummary) {
    for r in &summary.records {
        println!(
            "{}: tl {:.2} ne {} sr {} osr {} spl {:.3} collisions {:.3}",
            r.episode_id,
            r.tl,
            r.ne.map(|v| format!("{v:.2}")).unwrap_or_else(|| "inf".into()),
            r.sr,
            r.osr,
            r.spl,
            r.collisions
        );
    }
    println!("aggregate metrics: {}", summary.aggregate_csv.display());
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
