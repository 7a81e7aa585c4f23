//! Exact-posterior checks on toy families, gradient checks, and ablation and
//! noise sweeps.

mod gradients;
mod oracle;
mod sweep;

pub use gradients::{gradient_suite, GradientCheck, GRAD_CHECK_PERTURBATION, GRAD_CHECK_TOLERANCE};
pub use oracle::{
    bayes_posterior_oracle, model_posterior, oracle_agreement, posterior_from_log_likelihoods,
    posterior_from_similarities, run_oracle_check, total_variation, train_toy_encoder, DiscreteFamily, Episode,
    OracleCheckConfig, OracleReport, ONE_HOT_TV_TOLERANCE, ORACLE_TV_THRESHOLD,
};
pub use sweep::{
    ablation_cells, ablation_sweep, noise_cells, noise_sweep, read_sweep_csv, run_cell, run_sweep, CellEntry,
    SweepCell, SweepManifest, SweepOutcome, SweepRecord, SWEEP_CSV, SWEEP_MANIFEST,
};
