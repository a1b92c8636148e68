//! Radial meshes, density fields and the static functionals of a density.

mod grid;
mod initial;

use std::sync::Arc;

pub use grid::{Dimension, RadialGrid, MIN_CELLS};
pub use initial::{make_initial_condition, make_from_profile, InitSpec};

use crate::error::{Error, Result};

/// Cut-off profile used by the truncated moment.
///
/// `s` on `[0, 1/2]`, `1 - (3/2 - s)^2 / 2` on `[1/2, 3/2]`, `1` beyond.
/// Negative arguments are treated as zero.
pub fn phi(s: f64) -> f64 {
    let s = s.max(0.0);
    if s <= 0.5 {
        s
    } else if s <= 1.5 {
        let t = 1.5 - s;
        1.0 - 0.5 * t * t
    } else {
        1.0
    }
}

/// Derivative of [`phi`].
pub fn phi_prime(s: f64) -> f64 {
    let s = s.max(0.0);
    if s <= 0.5 {
        1.0
    } else if s <= 1.5 {
        1.5 - s
    } else {
        0.0
    }
}

/// Lagrange weights extrapolating a function of `r^2` to `r = 0` from the
/// first three cell centres `(i + 1/2) dr`.
const ORIGIN_WEIGHTS: [f64; 3] = [1.171875, -0.1953125, 0.0234375];

/// Cell-averaged nonnegative density on a [`RadialGrid`] at time `time`.
///
/// For `N = 1` the grid covers the half line and the density is understood
/// as its even extension, so every integral is over the full line.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    time: f64,
}

impl DensityField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values but grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::InvalidInput(format!("time must be nonnegative, got {time}")));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "density must be finite and nonnegative, cell {i} has {v}"
            )));
        }
        Ok(Self { grid, values, time })
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
            time: 0.0,
        }
    }

    /// Skips validation; callers guarantee nonnegative finite values.
    pub(crate) fn from_parts(grid: Arc<RadialGrid>, values: Vec<f64>, time: f64) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, time }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dimension(&self) -> Dimension {
        self.grid.dimension()
    }

    /// The same profile multiplied by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|v| v * c).collect(),
            self.time,
        )
    }

    fn weighted_sum(&self, weight: impl Fn(usize, f64) -> f64) -> f64 {
        let centers = self.grid.centers();
        self.values
            .iter()
            .zip(self.grid.volumes())
            .enumerate()
            .map(|(i, (u, vol))| weight(i, centers[i]) * u * vol)
            .sum()
    }

    /// Discrete `int u dx`.
    pub fn mass(&self) -> f64 {
        self.weighted_sum(|_, _| 1.0)
    }

    /// Discrete `L^p` norm; `p = f64::INFINITY` gives the maximum.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        check_exponent(p)?;
        if p.is_infinite() {
            return Ok(self.values.iter().copied().fold(0.0, f64::max));
        }
        if p == 1.0 {
            return Ok(self.mass());
        }
        let s: f64 = self
            .values
            .iter()
            .zip(self.grid.volumes())
            .map(|(u, vol)| u.powf(p) * vol)
            .sum();
        Ok(s.powf(1.0 / p))
    }

    /// Homogeneous `H^1` seminorm of the even extension (`N = 1` only).
    pub fn h1_seminorm(&self) -> Result<f64> {
        if self.dimension().get() != 1 {
            return Err(Error::Domain(format!(
                "H1 seminorm is only available for N = 1, field has N = {}",
                self.dimension()
            )));
        }
        let dr = self.grid.dr();
        // each half-line jump appears twice on the mirrored line; the jump
        // across the origin vanishes by symmetry
        let s: f64 = self
            .values
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                d * d
            })
            .sum();
        Ok((2.0 * s / dr).sqrt())
    }

    /// Truncated moment `I_Lambda = int phi(|x| / Lambda) u dx`.
    pub fn truncated_moment(&self, lambda: f64) -> Result<f64> {
        check_scale(lambda)?;
        Ok(self.weighted_sum(|_, r| phi(r / lambda)))
    }

    /// Capped first moment `mu_Lambda = int min(|x|, Lambda) u dx`.
    pub fn mu_lambda(&self, lambda: f64) -> Result<f64> {
        check_scale(lambda)?;
        Ok(self.weighted_sum(|_, r| r.min(lambda)))
    }

    /// Concentration functional `D_Lambda`.
    ///
    /// `N = 1`: twice the value at the origin, extrapolated from the first
    /// three cells as a quadratic in `r^2` (clamped at zero).
    /// `N >= 2`: `(N - 1) int_{B_{3 Lambda / 2}} u / |x| dx`, where a cell is
    /// included iff its centre lies inside the ball and `|x|^{-1}` is
    /// integrated exactly over each included cell.
    pub fn concentration_functional(&self, lambda: f64) -> Result<f64> {
        check_scale(lambda)?;
        let n = self.dimension().get();
        if n == 1 {
            let u0: f64 = ORIGIN_WEIGHTS
                .iter()
                .zip(&self.values)
                .map(|(w, u)| w * u)
                .sum();
            return Ok(2.0 * u0.max(0.0));
        }
        let cutoff = 1.5 * lambda;
        let centers = self.grid.centers();
        let s: f64 = (0..self.values.len())
            .take_while(|&i| centers[i] < cutoff)
            .map(|i| self.values[i] * self.grid.cell_inverse_radius_integral(i))
            .sum();
        Ok((n - 1) as f64 * s)
    }

    /// `int_{B_radius} u dx`, with partial cells weighted by their overlap.
    pub fn ball_mass(&self, radius: f64) -> f64 {
        self.ball_sum(radius, |u| u)
    }

    /// `(int_{B_radius} u^p dx)^{1/p}`; `p = inf` gives the max over cells
    /// meeting the ball.
    pub fn ball_lp(&self, radius: f64, p: f64) -> Result<f64> {
        check_exponent(p)?;
        if p.is_infinite() {
            let m = self
                .values
                .iter()
                .enumerate()
                .take_while(|(i, _)| self.grid.edge(*i) < radius)
                .map(|(_, u)| *u)
                .fold(0.0, f64::max);
            return Ok(m);
        }
        Ok(self.ball_sum(radius, |u| u.powf(p)).powf(1.0 / p))
    }

    fn ball_sum(&self, radius: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .take_while(|(i, _)| self.grid.edge(*i) < radius)
            .map(|(i, u)| f(*u) * self.grid.cell_ball_overlap(i, radius))
            .sum()
    }

    /// Smallest cell edge `R` with `int_{|x| > R} u dx <= tail * mass`.
    pub fn mass_radius(&self, tail: f64) -> f64 {
        let total = self.mass();
        if total <= 0.0 {
            return 0.0;
        }
        let mut outside = total;
        for (i, (u, vol)) in self.values.iter().zip(self.grid.volumes()).enumerate() {
            if outside <= tail * total {
                return self.grid.edge(i);
            }
            outside -= u * vol;
        }
        self.grid.r_max()
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("L^p exponent must be >= 1, got {p}")))
    }
}

fn check_scale(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("Lambda must be positive, got {lambda}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize, cells: usize, r_max: f64) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::new(Dimension::new(n).unwrap(), cells, r_max).unwrap())
    }

    fn tabulate(g: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> DensityField {
        let v = g.centers().iter().map(|&r| f(r)).collect();
        DensityField::new(g.clone(), v, 0.0).unwrap()
    }

    /// `1/2` on `[-1, 1]` on a grid whose cell edges include `r = 1`.
    fn half_box() -> DensityField {
        let g = grid(1, 500, 5.0);
        tabulate(&g, |r| if r < 1.0 { 0.5 } else { 0.0 })
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.25), 0.25);
        assert_eq!(phi(1.0), 0.875);
        assert_eq!(phi(2.0), 1.0);
        assert_eq!(phi_prime(1.0), 0.5);
        assert_eq!(phi_prime(0.1), 1.0);
        assert_eq!(phi_prime(3.0), 0.0);
    }

    #[test]
    fn phi_is_c1_at_breakpoints() {
        for s in [0.5, 1.5] {
            assert_relative_eq!(phi(s - 1e-9), phi(s + 1e-9), epsilon = 1e-8);
            assert_relative_eq!(phi_prime(s - 1e-9), phi_prime(s + 1e-9), epsilon = 1e-8);
        }
    }

    #[test]
    fn mass_of_box_and_disc() {
        assert_relative_eq!(half_box().mass(), 1.0, max_relative = 1e-13);
        let g = grid(2, 400, 2.0);
        let disc = tabulate(&g, |r| if r < 1.0 { 1.0 } else { 0.0 });
        assert_relative_eq!(disc.mass(), PI, max_relative = 1e-12);
        assert_relative_eq!(disc.scaled(2.0).unwrap().mass(), 2.0 * PI, max_relative = 1e-12);
    }

    #[test]
    fn lp_examples() {
        let g = grid(2, 400, 2.0);
        let disc = tabulate(&g, |r| if r < 1.0 { 3.0 } else { 0.0 });
        assert_relative_eq!(disc.lp_norm(2.0).unwrap(), 3.0 * PI.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(disc.lp_norm(1.0).unwrap(), disc.mass());
        assert_eq!(disc.lp_norm(f64::INFINITY).unwrap(), 3.0);
        assert!(disc.lp_norm(0.5).is_err());
    }

    #[test]
    fn h1_against_direct_sum_on_mirrored_line() {
        // linear ramp on the first m cells, zero afterwards
        let g = grid(1, 200, 2.0);
        let (a, m) = (3.0, 60usize);
        let f = tabulate(&g, |r| if r < m as f64 * 0.01 { a * r } else { 0.0 });
        let half = f.values();
        let full: Vec<f64> = half.iter().rev().chain(half.iter()).copied().collect();
        let dr = g.dr();
        let direct: f64 = full
            .windows(2)
            .map(|w| ((w[1] - w[0]) / dr).powi(2) * dr)
            .sum::<f64>()
            .sqrt();
        assert_relative_eq!(f.h1_seminorm().unwrap(), direct, max_relative = 1e-12);
        // ramp part alone is a * sqrt(2 (m-1) dr); the rest is the drop at the edge
        let ramp = a * (2.0 * (m - 1) as f64 * dr).sqrt();
        let drop = half[m - 1];
        let expected = (ramp * ramp + 2.0 * drop * drop / dr).sqrt();
        assert_relative_eq!(f.h1_seminorm().unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn h1_constant_and_rejected_in_2d() {
        let g = grid(1, 50, 1.0);
        assert_eq!(tabulate(&g, |_| 2.0).h1_seminorm().unwrap(), 0.0);
        let g2 = grid(2, 50, 1.0);
        assert!(tabulate(&g2, |_| 2.0).h1_seminorm().is_err());
    }

    #[test]
    fn truncated_moment_example() {
        let f = half_box();
        assert_relative_eq!(f.truncated_moment(2.0).unwrap(), 0.25, max_relative = 1e-12);
        let g = grid(1, 400, 4.0);
        let far = tabulate(&g, |r| if r > 3.0 { 1.0 } else { 0.0 });
        assert_relative_eq!(far.truncated_moment(1.0).unwrap(), far.mass());
    }

    #[test]
    fn mu_lambda_examples() {
        let f = half_box();
        assert_relative_eq!(f.mu_lambda(2.0).unwrap(), 0.5, max_relative = 1e-12);
        assert_relative_eq!(f.mu_lambda(0.5).unwrap(), 0.375, max_relative = 1e-12);
    }

    #[test]
    fn concentration_functional_examples() {
        let g = grid(2, 1000, 2.0);
        let disc = tabulate(&g, |r| if r < 1.0 { 1.0 } else { 0.0 });
        assert_relative_eq!(
            disc.concentration_functional(1.0).unwrap(),
            2.0 * PI,
            max_relative = 1e-12
        );
        let g1 = grid(1, 1000, 5.0);
        let smooth = tabulate(&g1, |r| 0.7 * (-r * r).exp());
        assert_relative_eq!(
            smooth.concentration_functional(1.0).unwrap(),
            1.4,
            max_relative = 1e-6
        );
        assert_eq!(DensityField::zeros(g1).concentration_functional(1.0).unwrap(), 0.0);
    }

    #[test]
    fn ball_mass_with_partial_cell() {
        let g = grid(3, 100, 1.0);
        let f = tabulate(&g, |_| 1.0);
        assert_relative_eq!(
            f.ball_mass(0.333),
            4.0 * PI / 3.0 * 0.333f64.powi(3),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            f.ball_lp(0.5, 2.0).unwrap(),
            (4.0 * PI / 3.0 * 0.125f64).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_negative_values() {
        let g = grid(1, 4, 1.0);
        assert!(DensityField::new(g.clone(), vec![1.0, -1.0, 0.0, 0.0], 0.0).is_err());
        assert!(DensityField::new(g, vec![1.0; 3], 0.0).is_err());
    }

    fn random_field() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (1usize..=3).prop_flat_map(|n| (Just(n), prop::collection::vec(0.0f64..10.0, 16)))
    }

    proptest! {
        #[test]
        fn phi_bounds(s in 0.0f64..100.0) {
            let p = phi(s);
            prop_assert!(p >= 0.0 && p <= s.min(1.0));
            let d = phi_prime(s);
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn moment_bounds((n, v) in random_field(), lambda in 0.01f64..10.0, c in 0.1f64..5.0) {
            let f = DensityField::new(grid(n, 16, 2.0), v, 0.0).unwrap();
            let m = f.mass();
            prop_assert!(f.truncated_moment(lambda).unwrap() <= m * (1.0 + 1e-12));
            let mu = f.mu_lambda(lambda).unwrap();
            prop_assert!(mu <= lambda * m * (1.0 + 1e-12));
            prop_assert!(f.mu_lambda(lambda * 1.5).unwrap() >= mu);

            let g = f.scaled(c).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
            prop_assert!(rel(g.mass(), c * m));
            prop_assert!(rel(g.concentration_functional(lambda).unwrap(),
                c * f.concentration_functional(lambda).unwrap()));
            for p in [1.5, 2.0, 4.0, f64::INFINITY] {
                prop_assert!(rel(g.lp_norm(p).unwrap(), c * f.lp_norm(p).unwrap()));
            }
        }
    }
}
