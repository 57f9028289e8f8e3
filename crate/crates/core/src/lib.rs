//! Population-based learned optimizer: a swarm of coordinate-wise LSTMs with
//! intra- and inter-particle attention, trained on a regret plus posterior
//! entropy meta-loss, together with classical baselines.

pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod loss;
pub mod meta;
pub mod objectives;
pub mod posterior;
pub mod seed;
pub mod swarm;
pub mod training;

pub use baselines::Level;
pub use checkpoint::Checkpoint;
pub use error::{CoreError, Result};
pub use meta::{ArchFlags, MetaParams, ModelConfig, TrajectoryRecord};
pub use objectives::{Family, FamilyKind, FunctionInstance, SearchSpace};
pub use swarm::{Feature, FeatureConfig, SwarmState};
pub use training::{train, TrainConfig};
