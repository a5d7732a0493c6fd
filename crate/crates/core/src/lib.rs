//! Estimation of average treatment effects for multi-valued discrete
//! interventions, built around orthogonal score functions.
//!
//! The crate provides:
//!
//! - `data` — observational tables, treatment coding, splits, CSV I/O.
//! - `learners` — outcome regressors and a multinomial propensity model.
//! - `estimators` — IoC (regression adjustment), IwC (orthogonal-score) and
//!   DRE (classical doubly-robust) estimates of per-level means, ATE and
//!   ATTE, with an exact report structure.
//! - `scores` — score-function evaluation, root solving, and Monte-Carlo
//!   checks of the moment and orthogonality conditions.
//! - `dgp` — a fully specified synthetic data-generating process with exact
//!   counterfactual ground truth, plus a semi-synthetic variant over
//!   externally supplied features.
//! - `metrics` — weighted relative errors, error reductions, consistency
//!   curves, and the estimator error decomposition.

pub mod data;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod learners;
pub mod metrics;
pub mod numeric;
pub mod scores;

pub use data::{
    read_csv, read_csv_infer, split_train_test, subpopulation, validate_table, write_csv,
    ObservationTable, SplitIndex, TreatmentCoding,
};
pub use error::{Error, Result};
pub use estimators::{EffectTensor, EstimateReport, Family, NuisanceBundle};
pub use learners::{
    fit_outcome_model, fit_propensity, FittedOutcomeModel, FittedPropensityModel, OutcomeFamily,
    OutcomeModel, OutcomeModelSpec, PropensityConfig, PropensityModel,
};
