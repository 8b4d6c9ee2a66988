//! Slot-based D2D interference-network simulator with a graph-embedded PPO
//! power-control agent and classical baselines.

pub mod baselines;
pub mod channel;
pub mod checkpoint;
pub mod error;
pub mod gnn;
pub mod graphfeat;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod queueing;
pub mod rng;
pub mod runner;
pub mod topology;
pub mod units;

pub use baselines::{BaselineKind, BaselineParams, BaselinePolicy, WmmseResult};
pub use channel::{link_capacity, ChannelSource, ChannelState, ChannelTrace, FadingProcess};
pub use checkpoint::PolicyCheckpoint;
pub use error::{Error, Result};
pub use gnn::{Gnn, GnnLayer, GraphBatch};
pub use graphfeat::{Featurizer, GraphSample, RateTracker};
pub use metrics::{EpisodeResult, MetricsReport, Spread};
pub use policy::{Actor, Architecture, Critic, PowerAction};
pub use ppo::{CriticTarget, EpisodeLog, TrainConfig, Trainer};
pub use queueing::{BufferState, Env, EnvConfig, Observation, PacketRecord, RemainingPolicy, StepOutcome};
pub use runner::{ExperimentConfig, Mode, RunSummary, Scenario};
pub use topology::{LayoutParams, NetworkTopology, PathLossConfig};
