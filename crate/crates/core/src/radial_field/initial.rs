use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DensityField, RadialGrid};
use crate::error::{Error, Result};
use crate::kernel::read_two_columns;
use crate::quadrature::GaussLegendre;

/// Initial radial profile, rescaled to the requested mass after discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// `exp(-r^2 / (2 width^2))`.
    Gaussian { mass: f64, width: f64 },
    /// Indicator of the annulus `inner <= |x| < outer` (`inner = 0` gives a ball).
    Indicator {
        mass: f64,
        #[serde(default)]
        inner: f64,
        outer: f64,
    },
    /// Two-column `r u(r)` text file, linearly interpolated, zero past the
    /// last sample.
    Tabulated { mass: f64, path: PathBuf },
}

impl InitSpec {
    pub fn mass(&self) -> f64 {
        match self {
            Self::Gaussian { mass, .. }
            | Self::Indicator { mass, .. }
            | Self::Tabulated { mass, .. } => *mass,
        }
    }

    /// Radius beyond which the unnormalized profile is negligible.
    pub fn support_radius(&self) -> Result<f64> {
        match self {
            Self::Gaussian { width, .. } => Ok(8.0 * width),
            Self::Indicator { outer, .. } => Ok(*outer),
            Self::Tabulated { path, .. } => {
                let (r, _) = read_two_columns(path)?;
                r.last()
                    .copied()
                    .ok_or_else(|| Error::parse(path, "empty profile"))
            }
        }
    }
}

pub fn make_initial_condition(spec: &InitSpec, grid: Arc<RadialGrid>) -> Result<DensityField> {
    let mass = spec.mass();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initial mass must be positive, got {mass}"
        )));
    }
    match spec {
        InitSpec::Gaussian { width, .. } => {
            if !(*width > 0.0 && width.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "gaussian width must be positive, got {width}"
                )));
            }
            let w = *width;
            make_from_profile(grid, |r| (-r * r / (2.0 * w * w)).exp(), mass)
        }
        InitSpec::Indicator { inner, outer, .. } => {
            if !(*inner >= 0.0 && outer > inner) {
                return Err(Error::InvalidInput(format!(
                    "indicator needs 0 <= inner < outer, got [{inner}, {outer})"
                )));
            }
            // exact cell averages from the overlap volumes
            let values = (0..grid.len())
                .map(|i| {
                    let v = grid.cell_ball_overlap(i, *outer) - grid.cell_ball_overlap(i, *inner);
                    (v / grid.volumes()[i]).max(0.0)
                })
                .collect();
            normalize(grid, values, mass)
        }
        InitSpec::Tabulated { path, .. } => {
            let (r, u) = read_two_columns(path)?;
            if r.len() < 2 {
                return Err(Error::parse(path, "profile needs at least two rows"));
            }
            if r.windows(2).any(|w| w[1] <= w[0]) || r[0] < 0.0 {
                return Err(Error::parse(path, "radii must be nonnegative and increasing"));
            }
            if u.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::parse(path, "profile values must be nonnegative"));
            }
            let profile = move |x: f64| {
                if x <= r[0] {
                    return u[0];
                }
                let k = r.partition_point(|&s| s < x);
                if k >= r.len() {
                    return 0.0;
                }
                let t = (x - r[k - 1]) / (r[k] - r[k - 1]);
                u[k - 1] + t * (u[k] - u[k - 1])
            };
            make_from_profile(grid, profile, mass)
        }
    }
}


/// Cell averages of `profile(|x|)` (Gauss-Legendre in each shell), scaled to
/// total mass `mass`.
pub fn make_from_profile(
    grid: Arc<RadialGrid>,
    profile: impl Fn(f64) -> f64,
    mass: f64,
) -> Result<DensityField> {
    let gl = GaussLegendre::new(4);
    let n = grid.dimension().get() as i32;
    let sigma = grid.dimension().sphere_area();
    let values = (0..grid.len())
        .map(|i| {
            let (a, b) = (grid.edge(i), grid.edge(i + 1));
            let integral = sigma * gl.integrate(a, b, |r| profile(r) * r.powi(n - 1));
            integral / grid.volumes()[i]
        })
        .collect::<Vec<_>>();
    if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(
            "initial profile must be finite and nonnegative".into(),
        ));
    }
    normalize(grid, values, mass)
}

fn normalize(grid: Arc<RadialGrid>, values: Vec<f64>, mass: f64) -> Result<DensityField> {
    let raw = DensityField::new(grid, values, 0.0)?;
    let m = raw.mass();
    if !(m > 0.0) {
        return Err(Error::InvalidInput(
            "initial profile has zero mass on this grid".into(),
        ));
    }
    raw.scaled(mass / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_field::Dimension;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;
    use std::io::Write;

    fn grid(n: usize, cells: usize, r_max: f64) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::new(Dimension::new(n).unwrap(), cells, r_max).unwrap())
    }

    #[test]
    fn gaussian_has_exact_mass() {
        for n in 1..=3 {
            let f = make_initial_condition(
                &InitSpec::Gaussian { mass: 1.0, width: 0.2 },
                grid(n, 333, 2.1),
            )
            .unwrap();
            assert_relative_eq!(f.mass(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn disc_indicator_is_flat() {
        let f = make_initial_condition(
            &InitSpec::Indicator { mass: 1.0, inner: 0.0, outer: 1.0 },
            grid(2, 100, 2.0),
        )
        .unwrap();
        for (i, u) in f.values().iter().enumerate() {
            let expected = if i < 50 { 1.0 / PI } else { 0.0 };
            assert_relative_eq!(*u, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn tabulated_profile_renormalized() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# r u").unwrap();
        for k in 0..=20 {
            let r = k as f64 * 0.05;
            writeln!(file, "{r} {}", 1.0 - r).unwrap();
        }
        file.flush().unwrap();
        let spec = InitSpec::Tabulated { mass: 2.5, path: file.path().to_path_buf() };
        let f = make_initial_condition(&spec, grid(1, 100, 2.0)).unwrap();
        assert_relative_eq!(f.mass(), 2.5, max_relative = 1e-14);
        assert!(f.values()[60..].iter().all(|u| *u == 0.0));
        assert_eq!(spec.support_radius().unwrap(), 1.0);
    }

    #[test]
    fn zero_mass_rejected() {
        let g = grid(1, 10, 1.0);
        assert!(make_initial_condition(&InitSpec::Gaussian { mass: 0.0, width: 0.1 }, g.clone())
            .is_err());
        // annulus entirely outside the grid
        assert!(make_initial_condition(
            &InitSpec::Indicator { mass: 1.0, inner: 5.0, outer: 6.0 },
            g
        )
        .is_err());
    }
}
