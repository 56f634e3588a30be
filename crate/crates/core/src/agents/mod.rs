//! Learning agents, the centralized training loop, decentralized
//! evaluation, baselines and the exhaustive oracle.

pub mod bandit;
mod config;
pub mod ddqn;
pub mod mpdqn;
pub mod oracle;
pub mod replay;
pub mod schedule;
pub mod team;
pub mod trainer;

pub use config::TrainConfig;
pub use ddqn::DdqnAgent;
pub use mpdqn::MpdqnAgent;
pub use oracle::{exhaustive_oracle, OracleResult};
pub use replay::ReplayBuffer;
pub use schedule::{decay_lr, Epsilon, RunningNorm};
pub use team::{RandomPolicy, Team, TeamCheckpoint, TeamPolicy};
pub use trainer::{evaluate, evaluate_with, train, train_with, EpisodeMetrics, EvalMetrics, RunArtifacts, TrainHooks};
