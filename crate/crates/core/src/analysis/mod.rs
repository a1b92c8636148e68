//! Theorem constants, trajectory checks, calibration, fits and sweeps.

mod baseline;
mod checks;
mod constants;
mod fit;
mod sweep;
mod verdict;

pub use baseline::{
    compare_with_heat_kernel, heat_baseline, heat_kernel, HeatComparison, HeatRow, HeatSetup,
};
pub use checks::{
    calibrate_c1, calibrate_cp, check_moment_inequality, concentration_integral, h1_barrier,
    lp_barrier, lp_barrier_scale, weighted_d_integral, ConcentrationIntegral, MomentCheck,
    MomentViolation, WeightedIntegral, MIN_CONCENTRATION_SAMPLES,
};
pub use constants::{select_lambda, theorem_constants, LambdaSelection, TheoremConstants};
pub use fit::{fit_power_law, PowerLawFit};
pub use sweep::{
    assess_sweep, epsilon_sweep, execute_run, lp_exponent, prepare_run, recheck, resolve_lambda, run_verdicts,
    summarize,
    Calibration, CheckSettings, ConcentrationRow, ExponentFit, LpValue, MomentSummary,
    PreparedRun, RunResult, RunSettings, RunSummary, SweepOutcome, SweepReport, SweepRow,
    DEFAULT_SAMPLES, MASS_DEFECT_TOLERANCE,
};
pub use verdict::{all_passed, p_label, parse_p_label, Verdict};
