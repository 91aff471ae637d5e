//! Approximate balancing weights for transporting site-level treatment
//! effects from multisite randomized trials to a target population.
//!
//! Each module covers one stage: data model, feature maps, the QP solver,
//! weight computation, estimators, the multisite driver, cross-site
//! heterogeneity and the simulation harness. Common types are re-exported
//! at the crate root.

pub mod balance;
pub mod estimators;
pub mod features;
pub mod heterogeneity;
pub mod model;
pub mod multisite;
pub mod qp;
pub mod sim;

pub use balance::{
    lambda_sweep, solve_weights, BalanceError, BalanceMode, BalanceProblem, ImbalanceReport,
    SweepRow, WeightSolution,
};
pub use estimators::{BootstrapOptions, EstimatorError, Method, TransportEstimate};
pub use features::{FeatureError, FeatureMap, FeatureMapSpec, KernelSpec};
pub use heterogeneity::{
    estimate_theta, pseudo_r2, HeterogeneityError, HeterogeneityReport, SiteEffectSet,
};
pub use model::{
    ModelError, PotentialOutcomeOracle, RawRow, SiteDataset, SiteId, TargetSpec, UnitRecord,
};
pub use multisite::{transport_all, ModeConfig, MultisiteError, TransportConfig, TransportReport};
pub use qp::{solve_qp, QpError, QpSettings, QpSolution, QpStatus, QuadraticProgram};
pub use sim::{run_simulation, SimConfig, SimError, SimReport};
