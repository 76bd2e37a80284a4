//! TMLE and CV-TMLE for the average treatment effect and the variance of the
//! treatment effect across covariate strata (the blip variance), with
//! influence-curve inference, a logistic plug-in baseline and a simulation lab.

pub mod cli;
pub mod data;
pub mod eic;
pub mod error;
pub mod estimator;
pub mod folds;
pub mod inference;
pub mod learners;
pub mod math;
pub mod nuisance;
pub mod plugin;
pub mod simlab;
pub mod targeting;

pub use data::{load_csv, ObservedDataset, OutcomeScale};
pub use error::{Error, ErrorClass, Result};
pub use estimator::{tmle_estimate, tmle_from_initial, EstimatorKind, TmleOutput};
pub use inference::{build_report, simultaneous_quantile, EstimateReport, InferenceOptions};
pub use nuisance::{fit_nuisance, NuisanceConfig, NuisanceMode, NuisancePredictions, PropensitySource};
pub use targeting::{run_targeting, StopReason, TargetedFit, TargetingOptions};
