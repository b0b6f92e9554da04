//! Kolmogorov–Arnold networks: learnable spline edge functions summed at
//! each node, trained by full-batch descent and distilled into closed-form
//! expressions by per-edge snapping.

mod experiment;
mod network;
mod snap;
pub mod spline;
mod train;

pub use experiment::{incremental_experiment, kan_fit_snapped, restart_seed, ExperimentConfig, ExperimentData, ExperimentRecord, SnappedFit};
pub use network::{kan_gradcheck, Edge, KanLayer, KanNetwork, DEFAULT_GRID, MIN_GRID, MIN_HIDDEN_WIDTH};
pub use snap::{kan_snap, EdgeFit, Family, Regime, SnapLibrary, SnapResult};
pub use train::{kan_train, KanOptimizer, KanTrainConfig};
