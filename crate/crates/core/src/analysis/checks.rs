use serde::{Deserialize, Serialize};

use super::constants::TheoremConstants;
use crate::error::{Error, Result};
use crate::solver::TrajectoryRecord;

/// One sample where `Lambda dI/dt` exceeded the right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentViolation {
    pub time: f64,
    /// `Lambda dI/dt` from the recorded series.
    pub lhs: f64,
    /// `eps D - kappa M^2 / 2 + omega I`.
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub samples_checked: usize,
    /// `max (lhs - rhs) / (kappa M^2 / 2)` over interior samples.
    pub max_excess: f64,
    pub slack: f64,
    pub violations: Vec<MomentViolation>,
}

impl MomentCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `Lambda dI/dt <= eps D - kappa M^2 / 2 + omega I` at every
/// interior sample, with `dI/dt` from the three-point difference on the
/// (possibly nonuniform) record times. Excesses above
/// `slack * kappa M^2 / 2` are violations.
pub fn check_moment_inequality(
    traj: &TrajectoryRecord,
    constants: &TheoremConstants,
    slack: f64,
) -> Result<MomentCheck> {
    if constants.kappa_lambda <= 0.0 {
        return Err(Error::HypothesisViolated {
            hypothesis: "KN2",
            detail: "moment inequality needs kappa_Lambda > 0".into(),
        });
    }
    same_lambda(traj, constants)?;
    let scale = constants.attraction_scale();
    let (t, i, d) = (&traj.times, &traj.i_lambda, &traj.d_lambda);
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    let mut samples = 0;
    for k in 1..t.len().saturating_sub(1) {
        let (h1, h2) = (t[k] - t[k - 1], t[k + 1] - t[k]);
        let didt = -h2 / (h1 * (h1 + h2)) * i[k - 1]
            + (h2 - h1) / (h1 * h2) * i[k]
            + h1 / (h2 * (h1 + h2)) * i[k + 1];
        let lhs = constants.lambda * didt;
        let rhs = traj.epsilon * d[k] - scale + constants.omega * i[k];
        let excess = (lhs - rhs) / scale;
        max_excess = max_excess.max(excess);
        samples += 1;
        if excess > slack {
            violations.push(MomentViolation { time: t[k], lhs, rhs });
        }
    }
    Ok(MomentCheck {
        samples_checked: samples,
        max_excess: if samples > 0 { max_excess } else { 0.0 },
        slack,
        violations,
    })
}

fn same_lambda(traj: &TrajectoryRecord, constants: &TheoremConstants) -> Result<()> {
    if (traj.lambda - constants.lambda).abs() > 1e-12 * constants.lambda {
        return Err(Error::InvalidInput(format!(
            "trajectory was recorded with Lambda = {} but constants use {}",
            traj.lambda, constants.lambda
        )));
    }
    Ok(())
}

/// Time-weighted concentration integral against its lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedIntegral {
    /// `int_0^{T_Lambda} D(t) e^{-omega t / Lambda} dt`.
    pub integral: f64,
    /// `Lambda L_Lambda / eps`.
    pub bound: f64,
    /// `integral / bound`.
    pub ratio: f64,
}

impl WeightedIntegral {
    pub fn passed(&self) -> bool {
        self.integral >= self.bound
    }
}

/// Trapezoid rule on the recorded samples up to `T_Lambda`, the last
/// partial interval closed by linear interpolation.
pub fn weighted_d_integral(
    traj: &TrajectoryRecord,
    constants: &TheoremConstants,
) -> Result<WeightedIntegral> {
    same_lambda(traj, constants)?;
    let t_end = constants.t_lambda.ok_or_else(|| {
        Error::InvalidInput("T_Lambda is undefined for inadmissible data (L_Lambda <= 0)".into())
    })?;
    let (omega, lambda) = (constants.omega, constants.lambda);
    let integrand: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.d_lambda)
        .map(|(t, d)| d * (-omega * t / lambda).exp())
        .collect();
    let integral = integrate_to(&traj.times, &integrand, t_end)?;
    let bound = lambda * constants.l_lambda / traj.epsilon;
    Ok(WeightedIntegral {
        integral,
        bound,
        ratio: integral / bound,
    })
}

/// `int_{t_0}^{t_end} f dt` by the trapezoid rule on `(t, f)`.
pub(crate) fn integrate_to(t: &[f64], f: &[f64], t_end: f64) -> Result<f64> {
    let last = t.last().copied().unwrap_or(f64::NEG_INFINITY);
    if last < t_end * (1.0 - 1e-12) {
        return Err(Error::TrajectoryTooShort {
            end: last,
            needed: t_end,
        });
    }
    let mut s = 0.0;
    for k in 1..t.len() {
        let (a, b) = (t[k - 1], t[k]);
        if a >= t_end {
            break;
        }
        if b <= t_end {
            s += 0.5 * (b - a) * (f[k - 1] + f[k]);
        } else {
            let w = (t_end - a) / (b - a);
            let fe = f[k - 1] + w * (f[k] - f[k - 1]);
            s += 0.5 * (t_end - a) * (f[k - 1] + fe);
            break;
        }
    }
    Ok(s)
}

/// Minimum number of snapshots in `[0, T_*]`.
pub const MIN_CONCENTRATION_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationIntegral {
    /// Ball radius `lambda eps`.
    pub radius: f64,
    /// `int_0^{T_*} int_{B} u dx dt`.
    pub mass_integral: f64,
    /// `(p, int_0^{T_*} (int_B u^p)^{1/p} dt)` for each requested `p`.
    pub lp_integrals: Vec<(f64, f64)>,
}

/// Time integrals over `[0, t_star]` of the mass and of the `L^p` norms in
/// the ball `B_{lambda_ball eps}`, computed from stored snapshots.
pub fn concentration_integral(
    traj: &TrajectoryRecord,
    lambda_ball: f64,
    epsilon: f64,
    t_star: f64,
    ps: &[f64],
) -> Result<ConcentrationIntegral> {
    let radius = lambda_ball * epsilon;
    let snaps = &traj.snapshots;
    let Some(first) = snaps.first() else {
        return Err(Error::InvalidInput("trajectory has no stored snapshots".into()));
    };
    let dr = first.grid().dr();
    if !(radius >= 2.0 * dr) {
        return Err(Error::UnresolvedBall { radius, dr });
    }
    let inside = snaps.iter().filter(|s| s.time() <= t_star * (1.0 + 1e-12)).count();
    if inside < MIN_CONCENTRATION_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "only {inside} snapshots in [0, {t_star}], need {MIN_CONCENTRATION_SAMPLES}"
        )));
    }
    let times: Vec<f64> = snaps.iter().map(|s| s.time()).collect();
    let masses: Vec<f64> = snaps.iter().map(|s| s.ball_mass(radius)).collect();
    let mass_integral = integrate_to(&times, &masses, t_star)?;
    let lp_integrals = ps
        .iter()
        .map(|&p| {
            let vals = snaps
                .iter()
                .map(|s| s.ball_lp(radius, p))
                .collect::<Result<Vec<_>>>()?;
            Ok((p, integrate_to(&times, &vals, t_star)?))
        })
        .collect::<Result<_>>()?;
    Ok(ConcentrationIntegral {
        radius,
        mass_integral,
        lp_integrals,
    })
}

/// `sup_t |u(t)|_{H^1} eps^{3/2} M^{-5/2}` maximized over the probes, times
/// `safety` (`N = 1`, at least three probes).
pub fn calibrate_c1(probes: &[&TrajectoryRecord], mass: f64, safety: f64) -> Result<f64> {
    check_probes(probes)?;
    let mut c = 0.0_f64;
    for p in probes {
        let h1 = p.h1.as_ref().ok_or_else(|| {
            Error::Domain("H1 calibration needs one-dimensional trajectories".into())
        })?;
        let sup = h1.iter().copied().fold(0.0, f64::max);
        c = c.max(sup * p.epsilon.powf(1.5) / mass.powf(2.5));
    }
    Ok(safety * c)
}

/// `L^p` analogue of [`calibrate_c1`] for the barrier
/// `C_p M^{(N(p-1)+p)/p} eps^{-N(p-1)/p}`.
pub fn calibrate_cp(probes: &[&TrajectoryRecord], p: f64, mass: f64, safety: f64) -> Result<f64> {
    check_probes(probes)?;
    let mut c = 0.0_f64;
    for t in probes {
        let series = t.lp_series(p).ok_or_else(|| {
            Error::InvalidInput(format!("trajectory has no L^{p} series"))
        })?;
        let sup = series.iter().copied().fold(0.0, f64::max);
        let scale = lp_barrier_scale(t.dimension.get(), p, mass, t.epsilon);
        c = c.max(sup / scale);
    }
    Ok(safety * c)
}

fn check_probes(probes: &[&TrajectoryRecord]) -> Result<()> {
    if probes.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "calibration needs at least 3 probe runs, got {}",
            probes.len()
        )));
    }
    Ok(())
}

/// `M^{(N(p-1)+p)/p} eps^{-N(p-1)/p}`; the `p = inf` limit is `M^{N+1} eps^{-N}`.
pub fn lp_barrier_scale(n: usize, p: f64, mass: f64, eps: f64) -> f64 {
    let n = n as f64;
    let (mexp, eexp) = if p.is_infinite() {
        (n + 1.0, n)
    } else {
        ((n * (p - 1.0) + p) / p, n * (p - 1.0) / p)
    };
    mass.powf(mexp) * eps.powf(-eexp)
}

/// `max{M, |u_0|_{max(2,p)}, C_p M^{...} eps^{...}}`.
pub fn lp_barrier(c_p: f64, n: usize, p: f64, mass: f64, eps: f64, u0_norm: f64) -> f64 {
    mass.max(u0_norm).max(c_p * lp_barrier_scale(n, p, mass, eps))
}

/// `max{|u_0|_{H^1}, C_1 M^{5/2} eps^{-3/2}}`.
pub fn h1_barrier(c1: f64, mass: f64, eps: f64, u0_h1: f64) -> f64 {
    u0_h1.max(c1 * mass.powf(2.5) * eps.powf(-1.5))
}
