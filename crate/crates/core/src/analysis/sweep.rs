//! Single runs with their per-run checks, and epsilon sweeps with
//! calibration, scaling fits and verdicts.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{
    calibrate_c1, calibrate_cp, check_moment_inequality, concentration_integral, h1_barrier,
    lp_barrier, weighted_d_integral, WeightedIntegral,
};
use super::constants::{select_lambda, theorem_constants, TheoremConstants};
use super::fit::{fit_power_law, PowerLawFit};
use super::verdict::{p_label, Verdict};
use crate::drift::InteractionMatrix;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::radial_field::{make_initial_condition, DensityField, Dimension, InitSpec, RadialGrid};
use crate::solver::{run_with_matrix, DiffusionMode, SolverConfig, TrajectoryRecord};

/// Relative mass defect `|M(t) + outflow - M(0)| / M(0)` tolerated by the
/// conservation verdict.
pub const MASS_DEFECT_TOLERANCE: f64 = 1e-6;
/// Default number of recorded samples over `[0, t_end]`.
pub const DEFAULT_SAMPLES: f64 = 200.0;

/// Tolerances and options of the inequality checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    /// Moment inequality slack as a fraction of `kappa M^2 / 2`.
    pub slack: f64,
    /// Multiplier applied to calibrated constants.
    pub safety_factor: f64,
    /// Number of smallest epsilons withheld from calibration.
    pub holdout: usize,
    /// Exponents for the global `L^p` barriers and slope fits.
    pub lp: Vec<f64>,
    /// Exponent of the localized (ball) `L^p` integral.
    pub localized_p: f64,
    /// Allowed relative deviation of fitted slopes from their targets.
    pub fit_tolerance: f64,
    pub min_r2: f64,
    /// Minimum ratio of the smallest-eps to the largest-eps concentration integral.
    pub concentration_ratio_min: f64,
    /// The barrier must be within this factor of the observed sup at the smallest eps.
    pub saturation_factor: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            slack: 1e-2,
            safety_factor: 1.5,
            holdout: 1,
            lp: vec![2.0, f64::INFINITY],
            localized_p: 2.0,
            fit_tolerance: 0.15,
            min_r2: 0.98,
            concentration_ratio_min: 0.5,
            saturation_factor: 10.0,
        }
    }
}

/// Everything needed to set up runs at any epsilon.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub dimension: Dimension,
    pub kernel: KernelSpec,
    pub init: InitSpec,
    /// Fixed cut-off scale; `None` scans for the one maximizing `L_Lambda`.
    pub lambda: Option<f64>,
    /// Fixed cell width; otherwise `eps / dr_per_eps`.
    pub dr: Option<f64>,
    pub dr_per_eps: f64,
    /// Fixed domain radius; otherwise `max(1.25 R, R + 10 sqrt(eps t_end))`
    /// with `R` the support radius of the initial profile.
    pub r_max: Option<f64>,
    /// Fixed end time; otherwise `T_Lambda`.
    pub t_end: Option<f64>,
    /// Fixed sampling period; otherwise `t_end / 200`.
    pub record_interval: Option<f64>,
    pub cfl: f64,
    pub diffusion: DiffusionMode,
    pub dt_max: Option<f64>,
    pub mass_loss_tolerance: f64,
    pub checks: CheckSettings,
    /// Directory for cached interaction matrices (`N >= 2`).
    pub matrix_cache: Option<PathBuf>,
}

impl RunSettings {
    pub fn new(dimension: Dimension, kernel: KernelSpec, init: InitSpec) -> Self {
        Self {
            dimension,
            kernel,
            init,
            lambda: None,
            dr: None,
            dr_per_eps: 8.0,
            r_max: None,
            t_end: None,
            record_interval: None,
            cfl: 0.5,
            diffusion: DiffusionMode::Implicit,
            dt_max: None,
            mass_loss_tolerance: 1e-6,
            checks: CheckSettings::default(),
            matrix_cache: None,
        }
    }

    fn cell_width(&self, eps: f64) -> f64 {
        self.dr.unwrap_or(eps / self.dr_per_eps)
    }
}

/// Grid, initial datum, constants and solver settings of one run.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub epsilon: f64,
    pub u0: DensityField,
    /// Absent when the kernel has no attraction at `Lambda`.
    pub constants: Option<TheoremConstants>,
    pub solver: SolverConfig,
    pub lambda: f64,
}

/// Resolves the cut-off scale: the fixed value, or the scan on the grid of
/// the largest epsilon.
pub fn resolve_lambda(settings: &RunSettings, eps: f64) -> Result<f64> {
    if let Some(l) = settings.lambda {
        return Ok(l);
    }
    let r_s = settings.init.support_radius()?;
    let dr = settings.cell_width(eps);
    let grid = Arc::new(RadialGrid::with_spacing(settings.dimension, dr, 1.25 * r_s)?);
    let u0 = make_initial_condition(&settings.init, grid)?;
    Ok(select_lambda(&u0, &settings.kernel)?.lambda)
}

pub fn prepare_run(settings: &RunSettings, eps: f64, lambda: f64) -> Result<PreparedRun> {
    let r_s = settings.init.support_radius()?;
    let dr = settings.cell_width(eps);
    // constants only need u0 on a grid covering its support
    let probe_grid = Arc::new(RadialGrid::with_spacing(settings.dimension, dr, 1.25 * r_s)?);
    let probe = make_initial_condition(&settings.init, probe_grid)?;
    let probe_constants = constants_or_none(&probe, &settings.kernel, lambda)?;
    let t_end = match (settings.t_end, probe_constants.as_ref().and_then(|c| c.t_lambda)) {
        (Some(t), _) => t,
        (None, Some(t)) => t,
        (None, None) => {
            return Err(Error::Config(
                "t_end = \"auto\" needs admissible data (T_Lambda undefined)".into(),
            ))
        }
    };
    let r_max = settings
        .r_max
        .unwrap_or_else(|| (1.25 * r_s).max(r_s + 10.0 * (eps * t_end).sqrt()));
    let grid = Arc::new(RadialGrid::with_spacing(settings.dimension, dr, r_max)?);
    let u0 = make_initial_condition(&settings.init, grid)?;
    let constants = constants_or_none(&u0, &settings.kernel, lambda)?;
    let record_interval = settings
        .record_interval
        .unwrap_or(t_end / DEFAULT_SAMPLES)
        .max(f64::MIN_POSITIVE);
    let mut solver = SolverConfig::new(eps, t_end, record_interval);
    solver.cfl = settings.cfl;
    solver.diffusion = settings.diffusion;
    solver.dt_max = settings.dt_max;
    solver.mass_loss_tolerance = settings.mass_loss_tolerance;
    let mut lp = vec![1.0];
    for &p in &settings.checks.lp {
        if !lp.contains(&p) {
            lp.push(p);
        }
    }
    for p in [2.0, f64::INFINITY] {
        if !lp.contains(&p) {
            lp.push(p);
        }
    }
    solver.lp = lp;
    solver.validate()?;
    Ok(PreparedRun {
        epsilon: eps,
        u0,
        constants,
        solver,
        lambda,
    })
}

fn constants_or_none(
    u0: &DensityField,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<Option<TheoremConstants>> {
    match theorem_constants(u0, kernel, lambda, None) {
        Ok(c) => Ok(Some(c)),
        Err(Error::HypothesisViolated { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-run diagnostics that do not need other runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epsilon: f64,
    pub dr: f64,
    pub cells: usize,
    pub r_max: f64,
    pub t_end: f64,
    pub steps: usize,
    pub constants: Option<TheoremConstants>,
    pub mass_defect: f64,
    pub boundary_flux: f64,
    pub boundary_loss_exceeded: bool,
    /// `(p, sup_t |u(t)|_p)`.
    pub sup_lp: Vec<LpValue>,
    /// `(p, |u_0|_p)`.
    pub initial_lp: Vec<LpValue>,
    pub sup_h1: Option<f64>,
    pub initial_h1: Option<f64>,
    pub moment: Option<MomentSummary>,
    pub weighted: Option<WeightedIntegral>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpValue {
    pub p: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub samples: usize,
    pub max_excess: f64,
    pub violations: usize,
    pub first_violation_time: Option<f64>,
}

impl RunSummary {
    pub fn sup(&self, p: f64) -> Option<f64> {
        find_lp(&self.sup_lp, p)
    }

    pub fn initial(&self, p: f64) -> Option<f64> {
        find_lp(&self.initial_lp, p)
    }
}

fn find_lp(v: &[LpValue], p: f64) -> Option<f64> {
    let label = p_label(p);
    v.iter().find(|x| x.p == label).map(|x| x.value)
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub trajectory: TrajectoryRecord,
}

pub fn execute_run(prepared: &PreparedRun, settings: &RunSettings) -> Result<RunResult> {
    let grid = prepared.u0.grid_arc().clone();
    let matrix = match &settings.matrix_cache {
        Some(dir) if grid.dimension().get() > 1 && !settings.kernel.is_zero() => {
            let name = format!("{}-{}.bin", settings.kernel.id(), grid.hash_hex());
            InteractionMatrix::build_cached(grid.clone(), &settings.kernel, &dir.join(name))?
        }
        _ => InteractionMatrix::build(grid.clone(), &settings.kernel)?,
    };
    let traj = run_with_matrix(&prepared.u0, &matrix, &prepared.solver, prepared.lambda)?;
    let summary = summarize(prepared, &traj, &settings.checks)?;
    Ok(RunResult {
        summary,
        trajectory: traj,
    })
}

/// Per-run diagnostics of a trajectory.
pub fn summarize(
    prepared: &PreparedRun,
    traj: &TrajectoryRecord,
    checks: &CheckSettings,
) -> Result<RunSummary> {
    let grid = prepared.u0.grid();
    let initial_lp = traj
        .lp
        .iter()
        .map(|s| {
            Ok(LpValue {
                p: p_label(s.p),
                value: prepared.u0.lp_norm(s.p)?,
            })
        })
        .collect::<Result<_>>()?;
    let base = RunSummary {
        epsilon: prepared.epsilon,
        dr: grid.dr(),
        cells: grid.len(),
        r_max: grid.r_max(),
        t_end: prepared.solver.t_end,
        steps: 0,
        constants: prepared.constants.clone(),
        mass_defect: 0.0,
        boundary_flux: 0.0,
        boundary_loss_exceeded: false,
        sup_lp: Vec::new(),
        initial_lp,
        sup_h1: None,
        initial_h1: if grid.dimension().get() == 1 {
            Some(prepared.u0.h1_seminorm()?)
        } else {
            None
        },
        moment: None,
        weighted: None,
    };
    recheck(&base, traj, checks)
}

/// Recomputes every trajectory-derived field of `stored` from `traj`,
/// keeping the grid, constants and initial norms.
pub fn recheck(
    stored: &RunSummary,
    traj: &TrajectoryRecord,
    checks: &CheckSettings,
) -> Result<RunSummary> {
    let sup = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let sup_lp = traj
        .lp
        .iter()
        .map(|s| LpValue {
            p: p_label(s.p),
            value: sup(&s.values),
        })
        .collect();
    let (moment, weighted) = match &stored.constants {
        Some(c) => {
            let m = check_moment_inequality(traj, c, checks.slack)?;
            let moment = MomentSummary {
                samples: m.samples_checked,
                max_excess: m.max_excess,
                violations: m.violations.len(),
                first_violation_time: m.violations.first().map(|v| v.time),
            };
            let weighted = match c.t_lambda {
                Some(_) => weighted_d_integral(traj, c).ok(),
                None => None,
            };
            (Some(moment), weighted)
        }
        None => (None, None),
    };
    Ok(RunSummary {
        steps: traj.stats.steps,
        mass_defect: traj.max_mass_defect(),
        boundary_flux: traj.boundary_flux.last().copied().unwrap_or(0.0),
        boundary_loss_exceeded: traj.stats.boundary_loss_exceeded,
        sup_lp,
        sup_h1: traj.h1.as_ref().map(|h| sup(h)),
        moment,
        weighted,
        ..stored.clone()
    })
}

/// Verdicts that only need one run.
pub fn run_verdicts(summary: &RunSummary) -> Vec<Verdict> {
    let mut v = vec![
        Verdict::at_most(
            "mass_conservation",
            summary.mass_defect,
            MASS_DEFECT_TOLERANCE,
            format!("max |M(t) + outflow - M(0)| / M(0) = {:.3e}", summary.mass_defect),
        ),
        Verdict::new(
            "boundary_loss",
            !summary.boundary_loss_exceeded,
            if summary.boundary_loss_exceeded { -summary.boundary_flux } else { 0.0 },
            format!("mass through r_max = {:.3e}", summary.boundary_flux),
        ),
    ];
    if let Some(m) = &summary.moment {
        let slack = summary
            .constants
            .as_ref()
            .map(|_| m.max_excess)
            .unwrap_or(0.0);
        v.push(Verdict::new(
            "moment_inequality",
            m.violations == 0,
            -slack,
            format!(
                "{} violations over {} samples, max excess {:.3e} of kappa M^2/2",
                m.violations, m.samples, m.max_excess
            ),
        ));
    }
    match (&summary.weighted, &summary.constants) {
        (Some(w), _) => v.push(Verdict::at_least(
            "weighted_concentration_bound",
            w.ratio,
            1.0,
            format!(
                "integral {:.6e} vs Lambda L / eps = {:.6e}, ratio {:.6}",
                w.integral, w.bound, w.ratio
            ),
        )),
        (None, Some(c)) if c.t_lambda.is_some() => v.push(Verdict::failed(
            "weighted_concentration_bound",
            "trajectory shorter than T_Lambda",
        )),
        _ => {}
    }
    v
}

/// Fitted exponent with its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub quantity: String,
    pub p: String,
    pub target: f64,
    pub fit: PowerLawFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub calibration_epsilons: Vec<f64>,
    pub holdout_epsilons: Vec<f64>,
    pub c1: Option<f64>,
    pub cp: Vec<LpValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub epsilon: f64,
    pub radius: f64,
    pub mass_integral: f64,
    pub localized_lp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub summary: Option<RunSummary>,
    pub concentration: Option<ConcentrationRow>,
    /// Barrier values at this epsilon, `(p, barrier)`; `p = "h1"` for the
    /// Sobolev barrier.
    pub barriers: Vec<LpValue>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dimension: Dimension,
    pub kernel: String,
    pub lambda: f64,
    pub mass: f64,
    pub rows: Vec<SweepRow>,
    pub calibration: Calibration,
    pub lambda_ball: Option<f64>,
    pub fits: Vec<ExponentFit>,
    /// Smallest concentration integral over the sweep.
    pub c_star: Option<f64>,
    /// Largest epsilon below which every row passes its own checks.
    pub eps_star: Option<f64>,
    pub verdicts: Vec<Verdict>,
}

pub struct SweepOutcome {
    pub report: SweepReport,
    /// Trajectories in row order (`None` for failed rows).
    pub trajectories: Vec<Option<TrajectoryRecord>>,
}

/// `-N (p - 1) / p` (`-N` for `p = inf`).
pub fn lp_exponent(n: usize, p: f64) -> f64 {
    if p.is_infinite() {
        -(n as f64)
    } else {
        -(n as f64) * (p - 1.0) / p
    }
}

/// Runs every epsilon (in parallel on the current rayon pool), calibrates
/// the unnamed constants on all but the `holdout` smallest epsilons, and
/// evaluates the sweep verdicts.
pub fn epsilon_sweep(settings: &RunSettings, epsilons: &[f64]) -> Result<SweepOutcome> {
    let mut eps: Vec<f64> = epsilons.to_vec();
    if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidInput("epsilons must be positive".into()));
    }
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    if eps.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "a sweep needs at least 4 distinct epsilons, got {}",
            eps.len()
        )));
    }
    if eps[0] / eps[eps.len() - 1] < 10.0 * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(
            "sweep epsilons must span at least one decade".into(),
        ));
    }
    let lambda = resolve_lambda(settings, eps[0])?;
    let results: Vec<Result<RunResult>> = eps
        .par_iter()
        .map(|&e| {
            let prepared = prepare_run(settings, e, lambda)?;
            let mut prepared = prepared;
            prepared.solver.store_snapshots = true;
            execute_run(&prepared, settings)
        })
        .collect();
    let mut rows = Vec::with_capacity(eps.len());
    let mut trajectories = Vec::with_capacity(eps.len());
    for (e, r) in eps.iter().zip(results) {
        match r {
            Ok(r) => {
                rows.push(SweepRow {
                    epsilon: *e,
                    summary: Some(r.summary),
                    concentration: None,
                    barriers: Vec::new(),
                    error: None,
                });
                trajectories.push(Some(r.trajectory));
            }
            Err(err) => {
                rows.push(SweepRow {
                    epsilon: *e,
                    summary: None,
                    concentration: None,
                    barriers: Vec::new(),
                    error: Some(err.to_string()),
                });
                trajectories.push(None);
            }
        }
    }
    let report = assess_sweep(settings, lambda, rows, &trajectories);
    Ok(SweepOutcome {
        report,
        trajectories,
    })
}

/// Calibration, barriers, fits and verdicts for finished rows (sorted by
/// decreasing epsilon, `trajs` aligned with them). Barrier and
/// concentration fields of the rows are recomputed.
pub fn assess_sweep(
    settings: &RunSettings,
    lambda: f64,
    mut rows: Vec<SweepRow>,
    trajs: &[Option<TrajectoryRecord>],
) -> SweepReport {
    for r in rows.iter_mut() {
        r.barriers.clear();
        r.concentration = None;
    }
    let checks = &settings.checks;
    let n = settings.dimension.get();
    let mass = settings.init.mass();
    let mut verdicts = Vec::new();

    // calibration on the larger epsilons, barriers checked on the held-out ones
    let k = rows.len();
    let holdout = checks.holdout.min(k);
    let calib_idx: Vec<usize> = (0..k - holdout).filter(|&i| trajs[i].is_some()).collect();
    let probes: Vec<&TrajectoryRecord> = calib_idx.iter().filter_map(|&i| trajs[i].as_ref()).collect();
    let c1 = if n == 1 {
        calibrate_c1(&probes, mass, checks.safety_factor).ok()
    } else {
        None
    };
    let cp: Vec<(f64, Option<f64>)> = checks
        .lp
        .iter()
        .map(|&p| (p, calibrate_cp(&probes, p, mass, checks.safety_factor).ok()))
        .collect();
    let calibration = Calibration {
        calibration_epsilons: calib_idx.iter().map(|&i| rows[i].epsilon).collect(),
        holdout_epsilons: rows[k - holdout..].iter().map(|r| r.epsilon).collect(),
        c1,
        cp: cp
            .iter()
            .filter_map(|(p, c)| c.map(|c| LpValue { p: p_label(*p), value: c }))
            .collect(),
    };

    for row in rows.iter_mut() {
        let Some(s) = &row.summary else { continue };
        for (p, c) in &cp {
            if let Some(c) = c {
                let u0n = s.initial(p.max(2.0)).unwrap_or(0.0);
                row.barriers.push(LpValue {
                    p: p_label(*p),
                    value: lp_barrier(*c, n, *p, mass, row.epsilon, u0n),
                });
            }
        }
        if let (Some(c1), Some(h0)) = (c1, s.initial_h1) {
            row.barriers.push(LpValue {
                p: "h1".into(),
                value: h1_barrier(c1, mass, row.epsilon, h0),
            });
        }
    }

    // per-run verdicts, aggregated over the sweep
    let summaries: Vec<&RunSummary> = rows.iter().filter_map(|r| r.summary.as_ref()).collect();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        verdicts.push(Verdict::failed(
            format!("run eps={}", r.epsilon),
            r.error.clone().unwrap_or_default(),
        ));
    }
    let worst_defect = summaries.iter().map(|s| s.mass_defect).fold(0.0, f64::max);
    verdicts.push(Verdict::at_most(
        "mass_conservation",
        worst_defect,
        MASS_DEFECT_TOLERANCE,
        format!("max relative defect {worst_defect:.3e} over {} runs", summaries.len()),
    ));
    let lost = summaries.iter().filter(|s| s.boundary_loss_exceeded).count();
    verdicts.push(Verdict::new(
        "boundary_loss",
        lost == 0,
        if lost == 0 { 0.0 } else { -(lost as f64) },
        format!("{lost} runs lost more than the tolerated mass through r_max"),
    ));
    let moments: Vec<&MomentSummary> = summaries.iter().filter_map(|s| s.moment.as_ref()).collect();
    if !moments.is_empty() {
        let viol: usize = moments.iter().map(|m| m.violations).sum();
        let excess = moments.iter().map(|m| m.max_excess).fold(f64::NEG_INFINITY, f64::max);
        verdicts.push(Verdict::new(
            "moment_inequality",
            viol == 0 && moments.len() == summaries.len(),
            checks.slack - excess,
            format!("{viol} violations; max excess {excess:.3e} of kappa M^2/2 (slack {})", checks.slack),
        ));
    }
    let weighted: Vec<(f64, f64)> = summaries
        .iter()
        .filter_map(|s| s.weighted.map(|w| (s.epsilon, w.ratio)))
        .collect();
    if summaries.iter().any(|s| s.constants.is_some()) {
        let min_ratio = weighted.iter().map(|w| w.1).fold(f64::INFINITY, f64::min);
        let mut detail = weighted
            .iter()
            .map(|(e, r)| format!("eps={e}: {r:.6}"))
            .collect::<Vec<_>>()
            .join(", ");
        let short = summaries.len() - weighted.len();
        if short > 0 {
            if !detail.is_empty() {
                detail.push_str("; ");
            }
            detail.push_str(&format!("{short} runs end before T_Lambda"));
        }
        verdicts.push(Verdict::new(
            "weighted_concentration_bound",
            short == 0 && min_ratio >= 1.0,
            if weighted.is_empty() { f64::NEG_INFINITY } else { min_ratio - 1.0 },
            format!("integral * eps / (Lambda L) per run: {detail}"),
        ));
    }

    // barriers on held-out rows
    let held: Vec<&SweepRow> = rows[k - holdout..].iter().filter(|r| r.summary.is_some()).collect();
    for (p, c) in &cp {
        let name = format!("lp_barrier_p{}", p_label(*p));
        if c.is_none() {
            verdicts.push(Verdict::failed(name, "calibration needs at least 3 successful probe runs"));
            continue;
        }
        verdicts.push(barrier_verdict(name, &held, &p_label(*p), |s| s.sup(*p)));
    }
    if n == 1 {
        if c1.is_some() {
            verdicts.push(barrier_verdict("h1_barrier".into(), &held, "h1", |s| s.sup_h1));
        } else {
            verdicts.push(Verdict::failed("h1_barrier", "C1 calibration needs at least 3 successful probe runs"));
        }
    }
    // two-sided optimality at the smallest eps
    if let Some(last) = rows.last().filter(|r| r.summary.is_some()) {
        let s = last.summary.as_ref().expect("checked");
        for &p in &checks.lp {
            let label = p_label(p);
            let (Some(b), Some(sup)) = (find_lp(&last.barriers, p), s.sup(p)) else {
                continue;
            };
            let factor = b / sup;
            verdicts.push(Verdict::at_most(
                format!("barrier_saturation_p{label}"),
                factor,
                checks.saturation_factor,
                format!("barrier / sup_t |u|_{label} = {factor:.4} at eps = {}", last.epsilon),
            ));
        }
    }

    // scaling fits
    let mut fits = Vec::new();
    for &p in &checks.lp {
        let label = p_label(p);
        let pts: Vec<(f64, f64)> = summaries
            .iter()
            .filter_map(|s| s.sup(p).map(|v| (s.epsilon, v)))
            .collect();
        let target = lp_exponent(n, p);
        verdicts.push(slope_verdict(
            format!("lp_slope_p{label}"),
            &pts,
            target,
            checks,
            "sup_lp",
            &label,
            &mut fits,
        ));
    }

    // concentration in B_{lambda eps} over [0, T_Lambda]
    let lambda_ball = summaries
        .iter()
        .filter_map(|s| {
            let c = s.constants.as_ref()?;
            match (n, c1) {
                (1, Some(c1)) => c.clone().with_c1(c1).lambda_ball,
                (1, None) => None,
                _ => c.lambda_ball,
            }
        })
        .reduce(f64::min);
    let mut c_star = None;
    if let Some(lb) = lambda_ball {
        let mut values = Vec::new();
        let mut errors = Vec::new();
        for (row, traj) in rows.iter_mut().zip(trajs) {
            let (Some(s), Some(traj)) = (&row.summary, traj) else { continue };
            let Some(t_star) = s.constants.as_ref().and_then(|c| c.t_lambda) else { continue };
            match concentration_integral(traj, lb, row.epsilon, t_star, &[checks.localized_p]) {
                Ok(ci) => {
                    row.concentration = Some(ConcentrationRow {
                        epsilon: row.epsilon,
                        radius: ci.radius,
                        mass_integral: ci.mass_integral,
                        localized_lp: ci.lp_integrals[0].1,
                    });
                    values.push((row.epsilon, ci.mass_integral, ci.lp_integrals[0].1));
                }
                Err(e) => errors.push(format!("eps={}: {e}", row.epsilon)),
            }
        }
        if errors.is_empty() && values.len() >= 2 {
            let min = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
            c_star = Some(min);
            let ratio = values[values.len() - 1].1 / values[0].1;
            verdicts.push(Verdict::new(
                "concentration_uniform",
                min > 0.0 && ratio >= checks.concentration_ratio_min,
                (ratio - checks.concentration_ratio_min).min(min),
                format!(
                    "C_* = {min:.6e}, smallest/largest eps ratio {ratio:.4} (lambda = {lb:.6e})"
                ),
            ));
            if n <= 2 {
                let pts: Vec<(f64, f64)> = values.iter().map(|v| (v.0, v.2)).collect();
                let p = checks.localized_p;
                let label = p_label(p);
                verdicts.push(slope_verdict(
                    format!("localized_slope_p{label}"),
                    &pts,
                    lp_exponent(n, p),
                    checks,
                    "localized_lp",
                    &label,
                    &mut fits,
                ));
            }
        } else {
            verdicts.push(Verdict::failed(
                "concentration_uniform",
                if errors.is_empty() { "fewer than two resolved runs".into() } else { errors.join("; ") },
            ));
        }
    } else if summaries.iter().any(|s| s.constants.is_some()) {
        verdicts.push(Verdict::failed(
            "concentration_uniform",
            "ball factor lambda unavailable (inadmissible data or no C1 calibration)",
        ));
    }

    // empirical eps_*: every row at or below it passes its own checks
    let mut eps_star = None;
    for row in rows.iter().rev() {
        let ok = row.summary.as_ref().is_some_and(|s| {
            crate::analysis::verdict::all_passed(&run_verdicts(s)) && row_barriers_hold(row, s)
        });
        if !ok {
            break;
        }
        eps_star = Some(row.epsilon);
    }

    SweepReport {
        dimension: settings.dimension,
        kernel: settings.kernel.id(),
        lambda,
        mass,
        rows,
        calibration,
        lambda_ball,
        fits,
        c_star,
        eps_star,
        verdicts,
    }
}

fn row_barriers_hold(row: &SweepRow, s: &RunSummary) -> bool {
    row.barriers.iter().all(|b| {
        let sup = if b.p == "h1" {
            s.sup_h1
        } else {
            s.sup_lp.iter().find(|x| x.p == b.p).map(|x| x.value)
        };
        sup.is_none_or(|v| v <= b.value)
    })
}

fn barrier_verdict(
    name: String,
    held: &[&SweepRow],
    label: &str,
    sup: impl Fn(&RunSummary) -> Option<f64>,
) -> Verdict {
    if held.is_empty() {
        return Verdict::failed(name, "no held-out runs");
    }
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for r in held {
        let s = r.summary.as_ref().expect("held-out rows have summaries");
        let (Some(b), Some(v)) = (find_lp_label(&r.barriers, label), sup(s)) else {
            return Verdict::failed(name, format!("missing data at eps = {}", r.epsilon));
        };
        worst = worst.min(1.0 - v / b);
        parts.push(format!("eps={}: sup {v:.6e} <= barrier {b:.6e}", r.epsilon));
    }
    Verdict::new(name, worst >= 0.0, worst, parts.join(", "))
}

fn find_lp_label(v: &[LpValue], label: &str) -> Option<f64> {
    v.iter().find(|x| x.p == label).map(|x| x.value)
}

fn slope_verdict(
    name: String,
    pts: &[(f64, f64)],
    target: f64,
    checks: &CheckSettings,
    quantity: &str,
    label: &str,
    fits: &mut Vec<ExponentFit>,
) -> Verdict {
    if pts.len() < 4 {
        return Verdict::failed(name, format!("only {} points to fit", pts.len()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    match fit_power_law(&xs, &ys) {
        Ok(fit) => {
            fits.push(ExponentFit {
                quantity: quantity.into(),
                p: label.into(),
                target,
                fit,
            });
            let tol = checks.fit_tolerance * target.abs().max(1e-12);
            let dev = (fit.slope - target).abs();
            Verdict::new(
                name,
                dev <= tol && fit.r_squared >= checks.min_r2,
                (tol - dev).min(fit.r_squared - checks.min_r2),
                format!(
                    "slope {:.4} (target {target:.4} +- {tol:.4}), R^2 {:.5}",
                    fit.slope, fit.r_squared
                ),
            )
        }
        Err(e) => Verdict::failed(name, e.to_string()),
    }
}
