//! Learning safe-stoppability monitors for fallback controllers.
//!
//! A monitor estimates, for a state reached under the nominal controller,
//! the probability that switching to the fallback controller brings the
//! system to rest without leaving the safe set. Training data is collected
//! iteratively, concentrating labels where the current monitor is unsure.

pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod monitor;
pub mod oracle;
pub mod prism;
pub mod rollout;
pub mod seed;

pub use dataset::{class_weights, ClassWeights, Dataset, StrideConfig, TriggerSample};
pub use env::{Control, EnvKind, EnvParams, EnvSpec, State};
pub use error::{PrismError, Result};
pub use monitor::{decide, train, Decision, Monitor, TrainHyper, TrainReport};
pub use oracle::{Agreement, Grid, GridAxis, LabeledGrid, OracleConfig};
pub use prism::{run_prism, PrismConfig, PrismState};
pub use rollout::{DrAxis, DrConfig, Label, Trajectory};
pub use seed::{SeedTree, Stream};
