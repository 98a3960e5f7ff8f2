//! Run configuration, scene and trace persistence, renders, and the
//! command implementations behind the CLI.

pub mod config;
pub mod render;
pub mod runner;
pub mod scene;
pub mod trace;

pub use config::RunConfig;
pub use scene::{load_scene, Scene};
pub use trace::TraceRecord;
