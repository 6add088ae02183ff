// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod data;
pub mod divergence;
pub mod dualcore;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mdp;
pub mod nn;
pub mod occupancy;
pub mod verify;

pub use dualcore::{DualSolution, ScoreTable, ValueTable};
pub use divergence::{Divergence, FDivergence, FiniteDistribution};
pub use error::{Error, Result};
pub use mdp::{EnvSpec, GoalMdp, GoalTransitionDistribution, OccupancyTensor, Policy};
pub use occupancy::{MixtureParams, MixtureProblem, PrimalSolution};
pub use agents::{Agent, AgentConfig, AgentKind, GoalPolicy, SmoreConfig};
pub use data::{CollectConfig, OfflineDataset, Transition};
pub use eval::{EvalReport, Metrics};
pub use nn::DenseNet;
pub use verify::{Suite, VerifyReport};
pub use experiment::ExperimentConfig;
