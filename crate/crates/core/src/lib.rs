//! Combined kernel and tree boosting.
//!
//! Every boosting iteration fits both a regression tree and a Gaussian-kernel
//! ridge regression function to a second-order expansion of the empirical
//! risk, then admits whichever of the two lowers the actual empirical risk
//! more. Restricting the engine to one learner type gives plain tree boosting
//! or plain kernel boosting.

pub mod boost;
pub mod data;
pub mod harness;
mod error;
pub mod kernels;
pub mod losses;
pub mod trees;

pub use boost::{
    empirical_risk, fit, BaseLearner, BoostConfig, Ensemble, FitReport, Iteration, KernelParams, LearnerTag, Learners,
    RhoSpec, Selection,
};
pub use data::{Dataset, Matrix, SplitSpec, Standardizer, Task, TaskKind};
pub use error::{Error, Result};
pub use kernels::{KernelConfig, KernelLearner, NystromFactor};
pub use losses::{GradHess, Loss};
pub use trees::{Tree, TreeParams};
