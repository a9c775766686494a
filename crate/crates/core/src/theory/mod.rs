//! Gaussian recommendation system, closed-form bounds, Monte-Carlo
//! verification and the norm/threshold correlation labs.

pub mod bounds;
pub mod correlation;
pub mod estimate;
pub mod system;
pub mod verify;

pub use bounds::{theorem_bounds, BoundsInput, BoundsOutcome};
pub use correlation::{
    epsilon_norm_correlation, epsilon_norm_correlation_with_grid, mf_epsilon_norm_correlation, tolerance_threshold,
    CorrelationReport, GaussianLabConfig,
};
pub use estimate::{
    estimate_error, reference_trajectory, resolve_probe, run_monte_carlo, ErrorEstimate, McResult, PoisonConfig, Probe,
    ProbeSpec, SamplerMode, TrainingKind,
};
pub use system::{
    abc, adversarial_epoch, init_system, inject_poison, item_scale_factor, preference, standard_epoch,
    transform_factor, GaussianConfig, GaussianState, PoisonSpec,
};
pub use verify::{
    default_grid, parse_grid, verify_point, verify_theorem, GridPoint, Theorem, Verdict, VerificationReport,
    VerificationRow, VerifyOptions,
};
