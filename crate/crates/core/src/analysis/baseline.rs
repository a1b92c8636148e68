use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::verdict::{p_label, Verdict};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::radial_field::{make_from_profile, make_initial_condition, Dimension, InitSpec, RadialGrid};
use crate::solver::{run, DiffusionMode, SolverConfig};

/// `L^p` norm of the `N`-dimensional heat kernel of mass `mass` at
/// diffusivity `eps` and time `t`:
/// `(4 pi eps t)^{-N (p - 1) / (2p)} p^{-N / (2p)} M`, and
/// `(4 pi eps t)^{-N/2} M` for `p = inf`.
pub fn heat_baseline(dim: Dimension, eps: f64, t: f64, p: f64, mass: f64) -> Result<f64> {
    if !(eps > 0.0 && t > 0.0) {
        return Err(Error::InvalidInput(format!(
            "heat baseline needs eps > 0 and t > 0, got eps = {eps}, t = {t}"
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("L^p exponent must be >= 1, got {p}")));
    }
    let n = dim.as_f64();
    let base = 4.0 * PI * eps * t;
    if p.is_infinite() {
        return Ok(base.powf(-n / 2.0) * mass);
    }
    Ok(base.powf(-n * (p - 1.0) / (2.0 * p)) * p.powf(-n / (2.0 * p)) * mass)
}

/// Heat kernel profile `M (4 pi eps t)^{-N/2} exp(-r^2 / (4 eps t))`.
pub fn heat_kernel(dim: Dimension, eps: f64, t: f64, mass: f64, r: f64) -> f64 {
    let s = 4.0 * eps * t;
    mass * (PI * s).powf(-dim.as_f64() / 2.0) * (-r * r / s).exp()
}

/// Setup of a pure-diffusion run from a Gaussian datum.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatSetup {
    pub dimension: Dimension,
    pub mass: f64,
    /// Width `w` of `exp(-r^2 / (2 w^2))`.
    pub width: f64,
    pub epsilon: f64,
    pub dr: f64,
    pub r_max: f64,
    pub t_end: f64,
    pub record_interval: f64,
    pub diffusion: DiffusionMode,
    pub lp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatRow {
    pub t: f64,
    pub p: String,
    pub solver: f64,
    pub exact: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatComparison {
    /// The Gaussian datum is the heat kernel at time `t0 = w^2 / (2 eps)`,
    /// so the exact solution at `t` is the kernel at `t + t0`.
    pub t0: f64,
    pub rows: Vec<HeatRow>,
    /// `|u(t_end) - w(t_end)|_1 / M`, against exact cell averages.
    pub l1_profile_error: f64,
    pub boundary_flux: f64,
}

impl HeatComparison {
    pub fn max_rel_err(&self, p: f64) -> f64 {
        let label = p_label(p);
        self.rows
            .iter()
            .filter(|r| r.p == label)
            .map(|r| r.rel_err)
            .fold(0.0, f64::max)
    }

    /// Profile error within `l1_tol`, norm errors within `lp_tol`.
    pub fn verdicts(&self, lp: &[f64], l1_tol: f64, lp_tol: f64) -> Vec<Verdict> {
        let mut v = vec![Verdict::at_most(
            "heat_l1_profile",
            self.l1_profile_error,
            l1_tol,
            format!("|u - w|_1 / M = {:.3e} at t_end", self.l1_profile_error),
        )];
        for &p in lp {
            let e = self.max_rel_err(p);
            v.push(Verdict::at_most(
                format!("heat_norm_p{}", p_label(p)),
                e,
                lp_tol,
                format!("max relative error of |u|_{} = {e:.3e}", p_label(p)),
            ));
        }
        v
    }
}

/// Runs the zero kernel from a Gaussian and compares with the closed form.
pub fn compare_with_heat_kernel(setup: &HeatSetup) -> Result<HeatComparison> {
    let HeatSetup { dimension, mass, width, epsilon, .. } = *setup;
    let grid = Arc::new(RadialGrid::with_spacing(dimension, setup.dr, setup.r_max)?);
    let u0 = make_initial_condition(&InitSpec::Gaussian { mass, width }, grid.clone())?;
    let mut cfg = SolverConfig::new(epsilon, setup.t_end, setup.record_interval);
    cfg.diffusion = setup.diffusion;
    cfg.lp = setup.lp.clone();
    cfg.store_snapshots = true;
    // Lambda only enters the recorded moments
    let traj = run(&u0, &KernelSpec::zero(), &cfg, 1.0)?;
    let t0 = width * width / (2.0 * epsilon);
    let mut rows = Vec::new();
    for (k, &t) in traj.times.iter().enumerate() {
        for s in &traj.lp {
            let exact = heat_baseline(dimension, epsilon, t + t0, s.p, mass)?;
            rows.push(HeatRow {
                t,
                p: p_label(s.p),
                solver: s.values[k],
                exact,
                rel_err: (s.values[k] - exact).abs() / exact,
            });
        }
    }
    let last = traj
        .snapshots
        .last()
        .ok_or_else(|| Error::InvalidInput("empty trajectory".into()))?;
    let t = last.time() + t0;
    let exact = make_from_profile(grid.clone(), |r| heat_kernel(dimension, epsilon, t, mass, r), mass)?;
    let l1: f64 = last
        .values()
        .iter()
        .zip(exact.values())
        .zip(grid.volumes())
        .map(|((a, b), v)| (a - b).abs() * v)
        .sum();
    Ok(HeatComparison {
        t0,
        rows,
        l1_profile_error: l1 / mass,
        boundary_flux: traj.boundary_flux.last().copied().unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn examples() {
        let d1 = Dimension::new(1).unwrap();
        assert_relative_eq!(heat_baseline(d1, 0.3, 2.0, 1.0, 1.7).unwrap(), 1.7);
        let t = 1.0 / (4.0 * PI);
        assert_relative_eq!(heat_baseline(d1, t, 1.0, f64::INFINITY, 2.0).unwrap(), 2.0);
        assert!(heat_baseline(d1, 0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn matches_discrete_norms_of_the_kernel() {
        for n in 1..=3 {
            let d = Dimension::new(n).unwrap();
            let g = Arc::new(RadialGrid::new(d, 2000, 3.0).unwrap());
            let (eps, t) = (0.05, 0.7);
            let f = make_from_profile(g, |r| heat_kernel(d, eps, t, 1.0, r), 1.0).unwrap();
            for p in [2.0, 3.0] {
                assert_relative_eq!(
                    f.lp_norm(p).unwrap(),
                    heat_baseline(d, eps, t, p, 1.0).unwrap(),
                    max_relative = 1e-5
                );
            }
        }
    }

    #[test]
    fn zero_kernel_run_follows_the_heat_kernel() {
        for n in [1, 3] {
            let setup = HeatSetup {
                dimension: Dimension::new(n).unwrap(),
                mass: 1.0,
                width: 0.1,
                epsilon: 0.1,
                dr: 0.01,
                r_max: 3.0,
                t_end: 0.2,
                record_interval: 0.05,
                diffusion: DiffusionMode::Explicit,
                lp: vec![1.0, 2.0, f64::INFINITY],
            };
            let c = compare_with_heat_kernel(&setup).unwrap();
            assert_relative_eq!(c.t0, 0.05);
            assert_eq!(c.rows.len(), 5 * 3);
            assert!(c.max_rel_err(1.0) < 1e-9, "{c:?}");
            assert!(c.max_rel_err(2.0) < 5e-3, "{c:?}");
            assert!(c.l1_profile_error < 5e-3, "{c:?}");
            assert!(c.verdicts(&[2.0], 5e-3, 5e-3).iter().all(|v| v.passed));
        }
    }
}
