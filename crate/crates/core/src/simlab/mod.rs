//! Simulation designs, Monte-Carlo truths, and the replicate harness.

mod campaign;
mod dgp;
mod replicate;

pub use campaign::{metrics_table, run_campaign, write_metrics_csv, write_raw_csv, CampaignConfig, CampaignOutput};
pub use dgp::{
    draw_dataset, mc_blip_moments, perturb_controlled_noise, true_params, DgpSpec, TrueParams, MIN_TRUTH_DRAWS,
    WELLSPEC_PRESETS,
};
pub use replicate::{
    run_replicates, EstimatorConfig, EstimatorType, ReplicateContext, ReplicateEstimate, ReplicateEstimator,
    ReplicateMetrics, ReplicateOutput, ReplicateRecord, TargetMetrics,
};
