use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Spatial dimension `N in {1, 2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dimension(u8);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        match n {
            1..=3 => Ok(Self(n as u8)),
            _ => Err(Error::InvalidInput(format!(
                "unsupported dimension N = {n}; expected 1, 2 or 3"
            ))),
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Area of the unit sphere `S^{N-1}`: `2 pi^{N/2} / Gamma(N/2)`.
    pub fn sphere_area(self) -> f64 {
        match self.0 {
            1 => 2.0,
            2 => 2.0 * PI,
            _ => 4.0 * PI,
        }
    }

    /// Volume of the ball of radius `r`.
    pub fn ball_volume(self, r: f64) -> f64 {
        self.sphere_area() * r.powi(self.0 as i32) / self.as_f64()
    }
}

impl TryFrom<usize> for Dimension {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Self::new(n)
    }
}

impl From<Dimension> for usize {
    fn from(d: Dimension) -> usize {
        d.get()
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Uniform cell-centred radial mesh on `[0, r_max]`.
///
/// Cell `i` is the annulus `[i dr, (i + 1) dr]` with centre `(i + 1/2) dr`;
/// there is no node at the origin. Cell volumes and interface areas are the
/// exact values for the annular shells, so `sum(volumes)` is the volume of
/// `B_{r_max}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    dimension: Dimension,
    dr: f64,
    r_max: f64,
    centers: Vec<f64>,
    volumes: Vec<f64>,
    /// `areas[i]` is the area of the sphere at `r = i dr`, `i = 0..=n`.
    areas: Vec<f64>,
}

/// Smallest supported cell count (the origin extrapolation uses three cells).
pub const MIN_CELLS: usize = 4;

impl RadialGrid {
    pub fn new(dimension: Dimension, cells: usize, r_max: f64) -> Result<Self> {
        if cells < MIN_CELLS {
            return Err(Error::InvalidInput(format!(
                "grid needs at least {MIN_CELLS} cells, got {cells}"
            )));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::InvalidInput(format!("r_max must be positive, got {r_max}")));
        }
        let dr = r_max / cells as f64;
        let n = dimension.get() as i32;
        let sigma = dimension.sphere_area();
        let centers = (0..cells).map(|i| (i as f64 + 0.5) * dr).collect();
        // (i+1)^N - i^N is an exact integer in f64 for any practical size
        let drn = dr.powi(n);
        let volumes = (0..cells)
            .map(|i| {
                let i = i as f64;
                sigma / n as f64 * ((i + 1.0).powi(n) - i.powi(n)) * drn
            })
            .collect();
        let areas = (0..=cells)
            .map(|i| sigma * (i as f64 * dr).powi(n - 1))
            .collect();
        Ok(Self {
            dimension,
            dr,
            r_max,
            centers,
            volumes,
            areas,
        })
    }

    /// Grid with spacing at most `dr` covering at least `[0, r_max]`.
    pub fn with_spacing(dimension: Dimension, dr: f64, r_max: f64) -> Result<Self> {
        if !(dr > 0.0 && dr.is_finite()) {
            return Err(Error::InvalidInput(format!("dr must be positive, got {dr}")));
        }
        let cells = ((r_max / dr) - 1e-9).ceil().max(MIN_CELLS as f64) as usize;
        Self::new(dimension, cells, cells as f64 * dr)
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Inner edge `i dr` of cell `i` (also valid for `i = n`).
    pub fn edge(&self, i: usize) -> f64 {
        i as f64 * self.dr
    }

    /// Area of the interface at `r = i dr`, `i = 0..=n`.
    pub fn interface_area(&self, i: usize) -> f64 {
        self.areas[i]
    }

    /// Volume of `cell_i intersected with B_radius`.
    pub fn cell_ball_overlap(&self, i: usize, radius: f64) -> f64 {
        let a = self.edge(i);
        if radius <= a {
            return 0.0;
        }
        let b = self.edge(i + 1);
        if radius >= b {
            return self.volumes[i];
        }
        let d = self.dimension;
        d.ball_volume(radius) - d.ball_volume(a)
    }

    /// `int_{cell_i} |x|^{-1} dx` (only meaningful for `N >= 2`).
    pub fn cell_inverse_radius_integral(&self, i: usize) -> f64 {
        let n = self.dimension.get() as i32;
        debug_assert!(n >= 2);
        let (a, b) = (self.edge(i), self.edge(i + 1));
        self.dimension.sphere_area() * (b.powi(n - 1) - a.powi(n - 1)) / (n - 1) as f64
    }

    /// Short content hash identifying the mesh.
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dimension.get() as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        h.update(self.r_max.to_le_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
