//! Merging-zone simulation: geometry, vehicle bookkeeping, metrics, logging.

pub mod log;
pub mod metrics;
pub mod scenario;
pub mod world;

pub use log::{LogRow, RolloutLog};
pub use metrics::{fuel_rate, summarize, CavRecord, EpisodeMetrics};
pub use scenario::{MergeGeometry, Road};
pub use world::{
    run_episode, AgentStepInfo, CavAgent, EpisodeOutcome, FixedTheta, SceneObs, ThetaPolicy, World,
};
