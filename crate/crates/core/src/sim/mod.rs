//! Photon-counting Monte Carlo and maximum-likelihood estimation.

pub mod adaptive;
pub mod estimate;
pub mod experiment;
pub mod rng;
pub mod sampling;

pub use adaptive::{
    adaptive_replication, adaptive_two_stage, direct_only_estimate, AdaptiveOutcome,
    AdaptiveSchedule, StageOne,
};
pub use estimate::{
    ml_estimate, ml_estimate_multi, BinnedDirectModel, EstimationResult, LikelihoodModel,
    MlOptions, PovmModel,
};
pub use experiment::{crlb_experiment, moments, ExperimentConfig, ExperimentSummary};
pub use rng::replication_rng;
pub use sampling::{sample_multinomial, sample_outcomes, OutcomeCounts};
