//! Layered run configuration: built-in defaults, overridden by a TOML
//! config file, overridden by command-line flags.

use crate::error::{Error, Result};
use crate::navigator::{EndpointConfig, EndpointMode};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Which decision backend drives episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Greedy,
    External,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    /// Comma-separated episode id filter; empty means all.
    pub episodes: String,
    pub backend: BackendKind,
    pub endpoint: EndpointConfig,
    /// "oracle" or a path to trained params.
    pub predictor: String,
    /// Second params path for paired waypoint evaluation.
    pub compare: Option<PathBuf>,
    pub lambda_occ: Vec<f64>,
    pub max_steps: usize,
    pub threshold: f64,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub backtrack: bool,
    pub train_scenes: usize,
    pub epochs: usize,
    pub eval_poses: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: None,
            episodes: String::new(),
            backend: BackendKind::Greedy,
            endpoint: EndpointConfig::default(),
            predictor: "oracle".to_string(),
            compare: None,
            lambda_occ: vec![0.5],
            max_steps: 20,
            threshold: 3.0,
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
            backtrack: true,
            train_scenes: 60,
            epochs: 500,
            eval_poses: 100,
        }
    }
}

/// One override layer; every key mirrors a CLI flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub scene: Option<PathBuf>,
    pub episodes: Option<String>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub endpoint_mode: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub auth_token_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<usize>,
    pub predictor: Option<String>,
    pub compare: Option<PathBuf>,
    pub lambda_occ: Option<Vec<f64>>,
    pub max_steps: Option<usize>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub backtrack: Option<bool>,
    pub train_scenes: Option<usize>,
    pub epochs: Option<usize>,
    pub eval_poses: Option<usize>,
}

impl ConfigLayer {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

impl RunConfig {
    /// Apply the file layer, then the CLI layer, over built-in defaults.
    pub fn resolve(file: Option<ConfigLayer>, cli: ConfigLayer) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for layer in file.into_iter().chain(std::iter::once(cli)) {
            config.apply(layer)?;
        }
        if config.threshold <= 0.0 {
            return Err(Error::Config("threshold must be positive".into()));
        }
        if config.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(config)
    }

    fn apply(&mut self, layer: ConfigLayer) -> Result<()> {
        if let Some(v) = layer.scene {
            self.scene = Some(v);
        }
        if let Some(v) = layer.episodes {
            self.episodes = v;
        }
        if let Some(v) = layer.backend {
            self.backend = v;
        }
        if let Some(v) = layer.endpoint {
            self.endpoint.url = v;
        }
        if let Some(v) = layer.endpoint_mode {
            self.endpoint.mode = match v.as_str() {
                "decision" => EndpointMode::Decision,
                "chat" => EndpointMode::Chat,
                other => {
                    return Err(Error::Config(format!(
                        "endpoint_mode must be 'decision' or 'chat', got '{other}'"
                    )))
                }
            };
        }
        if let Some(v) = layer.model {
            self.endpoint.model = v;
        }
        if let Some(v) = layer.temperature {
            self.endpoint.temperature = v;
        }
        if let Some(v) = layer.auth_token_env {
            self.endpoint.auth_token_env = v;
        }
        if let Some(v) = layer.timeout_secs {
            self.endpoint.timeout_secs = v;
        }
        if let Some(v) = layer.retries {
            self.endpoint.retries = v;
        }
        if let Some(v) = layer.predictor {
            self.predictor = v;
        }
        if let Some(v) = layer.compare {
            self.compare = Some(v);
        }
        if let Some(v) = layer.lambda_occ {
            if v.iter().any(|l| *l < 0.0) {
                return Err(Error::Config("lambda_occ must be >= 0".into()));
            }
            self.lambda_occ = v;
        }
        if let Some(v) = layer.max_steps {
            self.max_steps = v;
        }
        if let Some(v) = layer.threshold {
            self.threshold = v;
        }
        if let Some(v) = layer.seed {
            self.seed = v;
        }
        if let Some(v) = layer.workers {
            self.workers = v;
        }
        if let Some(v) = layer.out {
            self.out = v;
        }
        if let Some(v) = layer.backtrack {
            self.backtrack = v;
        }
        if let Some(v) = layer.train_scenes {
            self.train_scenes = v;
        }
        if let Some(v) = layer.epochs {
            self.epochs = v;
        }
        if let Some(v) = layer.eval_poses {
            self.eval_poses = v;
        }
        Ok(())
    }
}
