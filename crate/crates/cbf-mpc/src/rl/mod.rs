//! Learning the controller parameters with soft actor-critic.

pub mod checkpoint;
pub mod features;
pub mod mlp;
pub mod replay;
pub mod sac;
pub mod train;

pub use checkpoint::{CheckpointPolicy, PolicyCheckpoint};
pub use features::{ActionMap, Featurizer, RewardParams, OBS_DIM};
pub use mlp::{Adam, Gradients, Mlp};
pub use replay::{ReplayBuffer, Transition, TransitionBatch};
pub use sac::{SacAgent, SacConfig};
pub use train::{train_policy, ProgressSnapshot, TrainOutput, TrainStats};
