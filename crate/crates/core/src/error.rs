use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("hypothesis {hypothesis} violated: {detail}")]
    HypothesisViolated {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("{what} did not converge: {detail}")]
    Nonconvergence { what: &'static str, detail: String },

    #[error("field and interaction matrix live on different grids")]
    GridMismatch,

    #[error("drift bound violated: |V|max = {vmax:e} exceeds |k'|max * M = {bound:e}")]
    DriftBound { vmax: f64, bound: f64 },

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("negative density {value:e} in cell {cell} at t = {time}")]
    NegativeDensity { cell: usize, value: f64, time: f64 },

    #[error("ball of radius {radius:e} is not resolved by cells of width {dr:e}; refine the grid")]
    UnresolvedBall { radius: f64, dr: f64 },

    #[error("trajectory too short: ends at t = {end}, need t = {needed}")]
    TrajectoryTooShort { end: f64, needed: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error: {detail}")]
    Parse { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
