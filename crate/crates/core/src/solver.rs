//! Finite-volume time stepping for
//! `u_t = r^{1-N} d/dr ( r^{N-1} (eps u_r - u V) )`.
//!
//! Interface fluxes are `F = A (V+ u_left + V- u_right) - eps A (u_right - u_left) / dr`
//! with exact shell areas `A`, face velocity the mean of the two neighbouring
//! cell velocities, no flux through `r = 0`, and an absorbing ghost cell
//! (`u = 0`) beyond `r_max` whose outflow is accumulated. The velocity is
//! lagged by one step. The implicit mode treats drift and diffusion fluxes
//! implicitly, which gives a tridiagonal M-matrix and hence positivity for
//! every `dt`; the explicit mode is positive under the step bound returned by
//! [`max_stable_dt`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::drift::InteractionMatrix;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::radial_field::{DensityField, Dimension, RadialGrid};
use crate::tridiag;

/// Values above `-CLIP_THRESHOLD * max(1, max u)` are clipped to zero.
const CLIP_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionMode {
    Explicit,
    #[default]
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub t_end: f64,
    /// Fraction of the step bound actually used, in `(0, 1]`.
    pub cfl: f64,
    pub diffusion: DiffusionMode,
    pub record_interval: f64,
    /// Relative mass loss through `r_max` above which the run is flagged.
    pub mass_loss_tolerance: f64,
    /// Optional cap on the step size.
    pub dt_max: Option<f64>,
    pub store_snapshots: bool,
    /// Lebesgue exponents recorded at each sample (`f64::INFINITY` allowed).
    pub lp: Vec<f64>,
}

impl SolverConfig {
    pub fn new(epsilon: f64, t_end: f64, record_interval: f64) -> Self {
        Self {
            epsilon,
            t_end,
            cfl: 0.5,
            diffusion: DiffusionMode::Implicit,
            record_interval,
            mass_loss_tolerance: 1e-6,
            dt_max: None,
            store_snapshots: false,
            lp: vec![1.0, 2.0, f64::INFINITY],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidInput(format!("solver {what} is invalid: {v}")))
        };
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon (must be > 0)", self.epsilon);
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end", self.t_end);
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl (must lie in (0, 1])", self.cfl);
        }
        if !(self.record_interval > 0.0 && self.record_interval.is_finite()) {
            return bad("record_interval", self.record_interval);
        }
        if !(self.mass_loss_tolerance >= 0.0) {
            return bad("mass_loss_tolerance", self.mass_loss_tolerance);
        }
        if let Some(d) = self.dt_max {
            if !(d > 0.0) {
                return bad("dt_max", d);
            }
        }
        if let Some(p) = self.lp.iter().find(|p| !(**p >= 1.0)) {
            return bad("Lebesgue exponent", *p);
        }
        Ok(())
    }
}

/// Result of a single step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub field: DensityField,
    /// Mass that left through `r_max` during the step.
    pub outflow: f64,
    /// Some tiny negative values were reset to zero.
    pub clipped: bool,
}

/// Largest admissible step for the current velocity, already scaled by
/// `cfl`: the advective bound `dr / max|V|` and, in explicit mode, the exact
/// positivity bound `min_i vol_i / (outgoing rate)_i`.
pub fn max_stable_dt(grid: &RadialGrid, velocity: &[f64], config: &SolverConfig) -> f64 {
    let vmax = velocity.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut limit = if vmax > 0.0 { grid.dr() / vmax } else { f64::INFINITY };
    if config.diffusion == DiffusionMode::Explicit {
        let faces = FaceCoefficients::new(grid, velocity, config.epsilon);
        for i in 0..grid.len() {
            let rate = faces.beta[i] + faces.alpha[i + 1];
            if rate > 0.0 {
                limit = limit.min(grid.volumes()[i] / rate);
            }
        }
    }
    config.cfl * limit
}

/// `F_k = alpha_k u_{k-1} - beta_k u_k` through the face at `r = k dr`.
struct FaceCoefficients {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl FaceCoefficients {
    fn new(grid: &RadialGrid, v: &[f64], eps: f64) -> Self {
        let n = grid.len();
        let diff = eps / grid.dr();
        let mut alpha = vec![0.0; n + 1];
        let mut beta = vec![0.0; n + 1];
        for k in 1..=n {
            let vf = if k < n { 0.5 * (v[k - 1] + v[k]) } else { v[n - 1] };
            let a = grid.interface_area(k);
            alpha[k] = a * (vf.max(0.0) + diff);
            // the ghost beyond r_max is empty, so beta_n never multiplies anything
            beta[k] = if k < n { a * (-vf.min(0.0) + diff) } else { 0.0 };
        }
        Self { alpha, beta }
    }
}

/// Advances `field` by `dt` with the drift computed from `matrix`.
pub fn step(
    field: &DensityField,
    matrix: &InteractionMatrix,
    config: &SolverConfig,
    dt: f64,
) -> Result<StepOutcome> {
    if field.grid() != matrix.grid().as_ref() {
        return Err(Error::GridMismatch);
    }
    let v = matrix.apply(field)?;
    step_with_velocity(field, &v, config, dt)
}

fn step_with_velocity(
    field: &DensityField,
    v: &[f64],
    config: &SolverConfig,
    dt: f64,
) -> Result<StepOutcome> {
    let grid = field.grid();
    let limit = max_stable_dt(grid, v, config);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    let n = grid.len();
    let u = field.values();
    let vol = grid.volumes();
    let faces = FaceCoefficients::new(grid, v, config.epsilon);
    let (alpha, beta) = (&faces.alpha, &faces.beta);
    let (mut next, outflow) = match config.diffusion {
        DiffusionMode::Explicit => {
            let flux = |k: usize| -> f64 {
                match k {
                    0 => 0.0,
                    k if k == n => alpha[n] * u[n - 1],
                    k => alpha[k] * u[k - 1] - beta[k] * u[k],
                }
            };
            let next: Vec<f64> = (0..n)
                .map(|i| u[i] + dt / vol[i] * (flux(i) - flux(i + 1)))
                .collect();
            (next, dt * flux(n))
        }
        DiffusionMode::Implicit => {
            let mut lower = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut upper = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                diag[i] = vol[i] / dt + beta[i] + alpha[i + 1];
                if i > 0 {
                    lower[i] = -alpha[i];
                }
                if i + 1 < n {
                    upper[i] = -beta[i + 1];
                }
                rhs[i] = vol[i] / dt * u[i];
            }
            tridiag::solve_in_place(&lower, &diag, &upper, &mut rhs);
            let out = dt * alpha[n] * rhs[n - 1];
            (rhs, out)
        }
    };
    let umax = next.iter().fold(1.0_f64, |m, x| m.max(*x));
    let mut clipped = false;
    for (i, x) in next.iter_mut().enumerate() {
        if *x < 0.0 {
            if *x >= -CLIP_THRESHOLD * umax {
                *x = 0.0;
                clipped = true;
            } else {
                return Err(Error::NegativeDensity {
                    cell: i,
                    value: *x,
                    time: field.time() + dt,
                });
            }
        }
        if !x.is_finite() {
            return Err(Error::NegativeDensity {
                cell: i,
                value: *x,
                time: field.time() + dt,
            });
        }
    }
    Ok(StepOutcome {
        field: DensityField::from_parts(field.grid_arc().clone(), next, field.time() + dt),
        outflow,
        clipped,
    })
}

/// A Lebesgue norm sampled along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSeries {
    pub p: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub clipped_steps: usize,
    /// Cumulative outflow through `r_max` exceeded the configured tolerance.
    pub boundary_loss_exceeded: bool,
}

/// Diagnostics sampled every `record_interval` (and at `t_end`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dimension: Dimension,
    pub epsilon: f64,
    pub lambda: f64,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub i_lambda: Vec<f64>,
    pub d_lambda: Vec<f64>,
    pub lp: Vec<LpSeries>,
    /// `N = 1` only.
    pub h1: Option<Vec<f64>>,
    /// Cumulative mass lost through `r_max` up to each sample.
    pub boundary_flux: Vec<f64>,
    pub snapshots: Vec<DensityField>,
    pub stats: RunStats,
}

impl TrajectoryRecord {
    fn empty(dimension: Dimension, epsilon: f64, lambda: f64, lp: &[f64]) -> Self {
        Self {
            dimension,
            epsilon,
            lambda,
            times: Vec::new(),
            mass: Vec::new(),
            i_lambda: Vec::new(),
            d_lambda: Vec::new(),
            lp: lp
                .iter()
                .map(|&p| LpSeries {
                    p,
                    values: Vec::new(),
                })
                .collect(),
            h1: (dimension.get() == 1).then(Vec::new),
            boundary_flux: Vec::new(),
            snapshots: Vec::new(),
            stats: RunStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn lp_series(&self, p: f64) -> Option<&[f64]> {
        self.lp
            .iter()
            .find(|s| s.p == p)
            .map(|s| s.values.as_slice())
    }

    /// `max_k |M(t_k) + flux(t_k) - M(0)| / M(0)`.
    pub fn max_mass_defect(&self) -> f64 {
        let Some(&m0) = self.mass.first() else {
            return 0.0;
        };
        self.mass
            .iter()
            .zip(&self.boundary_flux)
            .map(|(m, f)| (m + f - m0).abs() / m0)
            .fold(0.0, f64::max)
    }

    fn record(&mut self, field: &DensityField, outflow: f64, keep: bool) -> Result<()> {
        self.times.push(field.time());
        self.mass.push(field.mass());
        self.i_lambda.push(field.truncated_moment(self.lambda)?);
        self.d_lambda.push(field.concentration_functional(self.lambda)?);
        for s in &mut self.lp {
            s.values.push(field.lp_norm(s.p)?);
        }
        if let Some(h1) = &mut self.h1 {
            h1.push(field.h1_seminorm()?);
        }
        self.boundary_flux.push(outflow);
        if keep {
            self.snapshots.push(field.clone());
        }
        Ok(())
    }
}

/// Builds the interaction matrix for `kernel` and runs to `t_end`.
pub fn run(
    u0: &DensityField,
    kernel: &KernelSpec,
    config: &SolverConfig,
    lambda: f64,
) -> Result<TrajectoryRecord> {
    let matrix = InteractionMatrix::build(u0.grid_arc().clone(), kernel)?;
    run_with_matrix(u0, &matrix, config, lambda)
}

/// Adaptive stepping from `u0.time()` to `t_end`, landing exactly on every
/// recording time.
pub fn run_with_matrix(
    u0: &DensityField,
    matrix: &InteractionMatrix,
    config: &SolverConfig,
    lambda: f64,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("Lambda must be positive, got {lambda}")));
    }
    if u0.grid() != matrix.grid().as_ref() {
        return Err(Error::GridMismatch);
    }
    let grid: Arc<RadialGrid> = u0.grid_arc().clone();
    let mut rec = TrajectoryRecord::empty(grid.dimension(), config.epsilon, lambda, &config.lp);
    let m0 = u0.mass();
    let start = u0.time();
    let mut field = u0.clone();
    let mut outflow = 0.0;
    rec.record(&field, outflow, config.store_snapshots)?;
    let mut dt_min = f64::INFINITY;
    let mut dt_max = 0.0_f64;
    let mut k = 1usize;
    let end = start + config.t_end;
    while field.time() < end {
        let target = (start + k as f64 * config.record_interval).min(end);
        loop {
            let v = matrix.apply(&field)?;
            let mut dt = max_stable_dt(&grid, &v, config);
            if let Some(cap) = config.dt_max {
                dt = dt.min(cap);
            }
            if !dt.is_finite() {
                // no drift and implicit diffusion: fall back to the record spacing
                dt = config.record_interval / 8.0;
            }
            let remaining = target - field.time();
            let last = dt >= remaining * (1.0 - 1e-12);
            let dt_used = if last { remaining } else { dt };
            let out = step_with_velocity(&field, &v, config, dt_used)?;
            outflow += out.outflow;
            rec.stats.steps += 1;
            rec.stats.clipped_steps += usize::from(out.clipped);
            dt_min = dt_min.min(dt_used);
            dt_max = dt_max.max(dt_used);
            field = out.field;
            if last {
                field = DensityField::from_parts(grid.clone(), field.into_values(), target);
                break;
            }
        }
        rec.record(&field, outflow, config.store_snapshots)?;
        k += 1;
    }
    rec.stats.dt_min = if dt_min.is_finite() { dt_min } else { 0.0 };
    rec.stats.dt_max = dt_max;
    rec.stats.boundary_loss_exceeded = outflow > config.mass_loss_tolerance * m0;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_field::{make_from_profile, make_initial_condition, InitSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid(n: usize, cells: usize, r_max: f64) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::new(Dimension::new(n).unwrap(), cells, r_max).unwrap())
    }

    fn gaussian(g: &Arc<RadialGrid>, width: f64) -> DensityField {
        make_initial_condition(&InitSpec::Gaussian { mass: 1.0, width }, g.clone()).unwrap()
    }

    #[test]
    fn zero_end_time_records_initial_sample_only() {
        let g = grid(1, 50, 2.0);
        let cfg = SolverConfig::new(0.1, 0.0, 0.1);
        let rec = run(&gaussian(&g, 0.2), &KernelSpec::neg_abs(), &cfg, 1.0).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(rec.stats.steps, 0);
    }

    #[test]
    fn rejects_zero_epsilon_and_bad_cfl() {
        let mut cfg = SolverConfig::new(0.0, 1.0, 0.1);
        assert!(cfg.validate().is_err());
        cfg.epsilon = 0.1;
        cfg.cfl = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn constant_interior_is_stationary_without_drift() {
        // flat profile with a far-away edge: interior cells see zero fluxes
        let g = grid(3, 100, 1.0);
        let u = make_from_profile(g.clone(), |r| if r < 0.8 { 1.0 } else { 0.0 }, 1.0).unwrap();
        let m = InteractionMatrix::build(g.clone(), &KernelSpec::zero()).unwrap();
        for mode in [DiffusionMode::Explicit, DiffusionMode::Implicit] {
            let mut cfg = SolverConfig::new(1e-3, 1.0, 1.0);
            cfg.diffusion = mode;
            let v = m.apply(&u).unwrap();
            let dt = max_stable_dt(&g, &v, &cfg).min(1e-3);
            let out = step(&u, &m, &cfg, dt).unwrap();
            for i in 0..60 {
                assert_relative_eq!(out.field.values()[i], u.values()[i], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn one_step_conserves_mass_up_to_outflow() {
        for n in 1..=3 {
            let g = grid(n, 80, 1.0);
            // mass touching the boundary so the outflow is nonzero
            let u = gaussian(&g, 0.6);
            let m = InteractionMatrix::build(g.clone(), &KernelSpec::exponential()).unwrap();
            for mode in [DiffusionMode::Explicit, DiffusionMode::Implicit] {
                let mut cfg = SolverConfig::new(0.05, 1.0, 1.0);
                cfg.diffusion = mode;
                let v = m.apply(&u).unwrap();
                let dt = max_stable_dt(&g, &v, &cfg);
                let out = step(&u, &m, &cfg, dt).unwrap();
                assert!(out.outflow > 0.0);
                assert_relative_eq!(out.field.mass() + out.outflow, u.mass(), max_relative = 1e-14);
                assert!(out.field.values().iter().all(|x| *x >= 0.0));
            }
        }
    }

    #[test]
    fn cfl_violation_reported() {
        let g = grid(1, 50, 1.0);
        let u = gaussian(&g, 0.2);
        let m = InteractionMatrix::build(g.clone(), &KernelSpec::neg_abs()).unwrap();
        let mut cfg = SolverConfig::new(0.1, 1.0, 1.0);
        cfg.diffusion = DiffusionMode::Explicit;
        assert!(matches!(step(&u, &m, &cfg, 1.0), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn heat_run_matches_gauss_weierstrass() {
        let eps = 0.1;
        let w = 0.3;
        let t0 = w * w / (2.0 * eps);
        let g = grid(1, 800, 4.0);
        let u0 = gaussian(&g, w);
        let mut cfg = SolverConfig::new(eps, 0.5, 0.25);
        cfg.diffusion = DiffusionMode::Explicit;
        let rec = run(&u0, &KernelSpec::zero(), &cfg, 1.0).unwrap();
        assert_eq!(rec.times, vec![0.0, 0.25, 0.5]);
        let t = t0 + 0.5;
        let exact = (8.0 * PI * eps * t).powf(-0.25);
        let l2 = rec.lp_series(2.0).unwrap()[2];
        assert_relative_eq!(l2, exact, max_relative = 1e-3);
    }

    #[test]
    fn neg_abs_run_conserves_mass_and_concentrates() {
        let g = grid(1, 400, 2.0);
        let u0 = gaussian(&g, 0.3);
        let cfg = SolverConfig::new(0.05, 0.5, 0.05);
        let rec = run(&u0, &KernelSpec::neg_abs(), &cfg, 1.0).unwrap();
        assert!(rec.max_mass_defect() < 1e-12);
        assert!(!rec.stats.boundary_loss_exceeded);
        let linf = rec.lp_series(f64::INFINITY).unwrap();
        assert!(linf.last().unwrap() > &linf[0]);
        assert_eq!(rec.h1.as_ref().unwrap().len(), rec.len());
    }
}
