use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::radial_field::{DensityField, Dimension};

/// Explicit constants of the moment argument for one initial datum and one
/// cut-off scale `Lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub dimension: Dimension,
    pub lambda: f64,
    pub mass: f64,
    pub mu_lambda: f64,
    /// `kappa M Lambda / (4 (kappa + 2 |k'|_inf))`.
    pub admissibility_bound: f64,
    /// `mu_lambda < admissibility_bound`.
    pub admissible: bool,
    pub kappa_lambda: f64,
    pub kprime_sup_norm: f64,
    /// `2 M (kappa + 2 |k'|_inf)`.
    pub omega: f64,
    /// `I_Lambda(u_0)`.
    pub i_lambda0: f64,
    /// `(kappa M^2 / (2 omega) - I_Lambda(0)) / 2`.
    pub l_lambda: f64,
    /// `(Lambda / omega) log(kappa M^2 / (2 omega L))`, absent when `L <= 0`.
    pub t_lambda: Option<f64>,
    /// Concentration ball radius factor `lambda` (the ball is `B_{lambda eps}`).
    /// For `N = 1` it needs the calibrated `C_1`.
    pub lambda_ball: Option<f64>,
    pub c1: Option<f64>,
}

impl TheoremConstants {
    /// `kappa M^2 / 2`, the scale of the moment inequality.
    pub fn attraction_scale(&self) -> f64 {
        0.5 * self.kappa_lambda * self.mass * self.mass
    }

    /// `kappa M^2 / (2 omega) (1 - e^{-omega T / Lambda}) - I_Lambda(0)`,
    /// which is `>= L_Lambda` exactly when `T >= T_Lambda`.
    pub fn moment_bound_lhs(&self, t: f64) -> f64 {
        let x = self.attraction_scale() / self.omega;
        x * (1.0 - (-self.omega * t / self.lambda).exp()) - self.i_lambda0
    }

    /// Recomputes the ball factor with a calibrated `C_1` (`N = 1`).
    pub fn with_c1(mut self, c1: f64) -> Self {
        self.c1 = Some(c1);
        self.lambda_ball = ball_factor(self.dimension, self.mass, self.lambda, self.l_lambda, self.t_lambda, Some(c1));
        self
    }

    /// Lower bound on the time-integrated mass in `B_{lambda eps}` that the
    /// `N = 1` argument yields with this `lambda`: `lambda Lambda L / 2`.
    pub fn concentration_lower_bound(&self) -> Option<f64> {
        if self.dimension.get() != 1 {
            return None;
        }
        Some(self.lambda_ball? * self.lambda * self.l_lambda / 2.0)
    }
}

fn ball_factor(
    dim: Dimension,
    mass: f64,
    lambda: f64,
    l: f64,
    t: Option<f64>,
    c1: Option<f64>,
) -> Option<f64> {
    let t = t?;
    if dim.get() >= 2 {
        Some(2.0 * (dim.get() - 1) as f64 * mass * t / (lambda * l))
    } else {
        let c1 = c1?;
        Some((lambda * l / (4.0 * c1 * mass.powf(2.5) * t)).powi(2))
    }
}

/// Constants for `u0` at scale `lambda`.
///
/// Fails when the kernel has no attraction below `lambda` (`kappa_Lambda
/// <= 0`); inadmissible data is reported through the returned flags.
pub fn theorem_constants(
    u0: &DensityField,
    kernel: &KernelSpec,
    lambda: f64,
    c1: Option<f64>,
) -> Result<TheoremConstants> {
    let kappa = kernel.kappa_lambda(lambda)?;
    if !kappa.satisfies_kn2 {
        return Err(Error::HypothesisViolated {
            hypothesis: "KN2",
            detail: format!("kappa_Lambda = {} at Lambda = {lambda}", kappa.value),
        });
    }
    let kappa = kappa.value;
    let mass = u0.mass();
    let knorm = kernel.kprime_sup_norm();
    let mu_lambda = u0.mu_lambda(lambda)?;
    let admissibility_bound = kappa * mass * lambda / (4.0 * (kappa + 2.0 * knorm));
    let omega = 2.0 * mass * (kappa + 2.0 * knorm);
    let i_lambda0 = u0.truncated_moment(lambda)?;
    let x = kappa * mass * mass / (2.0 * omega);
    let l_lambda = 0.5 * (x - i_lambda0);
    let t_lambda = (l_lambda > 0.0).then(|| lambda / omega * (x / l_lambda).ln());
    let dimension = u0.dimension();
    Ok(TheoremConstants {
        dimension,
        lambda,
        mass,
        mu_lambda,
        admissibility_bound,
        admissible: mu_lambda < admissibility_bound,
        kappa_lambda: kappa,
        kprime_sup_norm: knorm,
        omega,
        i_lambda0,
        l_lambda,
        t_lambda,
        lambda_ball: ball_factor(dimension, mass, lambda, l_lambda, t_lambda, c1),
        c1,
    })
}

/// Outcome of the `Lambda` scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub l_lambda: f64,
    /// `(Lambda, L_Lambda)` for every scanned value where constants exist.
    pub scanned: Vec<(f64, f64)>,
}

/// Scans `Lambda` over 81 logarithmically spaced values in
/// `[1e-2 R, 1e2 R]`, `R` the radius holding all but `1e-8` of the mass,
/// and keeps the one maximizing `L_Lambda`.
pub fn select_lambda(u0: &DensityField, kernel: &KernelSpec) -> Result<LambdaSelection> {
    let r = u0.mass_radius(1e-8).max(u0.grid().dr());
    let mut scanned = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for k in 0..=80 {
        let lambda = r * 10f64.powf(-2.0 + 4.0 * k as f64 / 80.0);
        let Ok(c) = theorem_constants(u0, kernel, lambda, None) else {
            continue;
        };
        scanned.push((lambda, c.l_lambda));
        if c.l_lambda > 0.0 && best.is_none_or(|(_, l)| c.l_lambda > l) {
            best = Some((lambda, c.l_lambda));
        }
    }
    let (lambda, l_lambda) = best.ok_or_else(|| {
        Error::InvalidInput("no admissible Lambda found for this initial datum and kernel".into())
    })?;
    Ok(LambdaSelection {
        lambda,
        l_lambda,
        scanned,
    })
}
