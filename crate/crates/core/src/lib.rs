//! Occupancy-aware waypoint prediction and navigation toolkit.
//!
//! The crate bundles a synthetic continuous 2D world, a polar-heatmap
//! waypoint representation with occupancy-aware losses, a toy trainable
//! predictor, a history-aware navigation agent with backtracking, and a
//! full evaluation suite (SR/OSR/SPL/TL/NE, collision rate, Chamfer and
//! Hausdorff waypoint distances).

pub mod error;
pub mod geom;
pub mod harness;
pub mod heatmap;
pub mod losses;
pub mod metrics;
pub mod navigator;
pub mod polar;
pub mod predictor;
pub mod synth;
pub mod world;

pub use error::Error;
