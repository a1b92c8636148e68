//! TOML run configuration.
//!
//! Every key has a default except `kernel`, `N` and `eps`. Unknown keys are
//! rejected. [`Config::resolved_toml`] writes the fully defaulted form,
//! which parses back to the same value.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::analysis::{parse_p_label, CheckSettings, RunSettings};
use crate::error::{Error, Result};
use crate::kernel::{CheckStatus, KernelSpec};
use crate::radial_field::{Dimension, InitSpec};
use crate::solver::DiffusionMode;

/// A number, or `"auto"` for a derived value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Auto {
    #[default]
    Auto,
    Value(f64),
}

impl Auto {
    pub fn value(self) -> Option<f64> {
        match self {
            Auto::Auto => None,
            Auto::Value(v) => Some(v),
        }
    }
}

impl Serialize for Auto {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Auto::Auto => s.serialize_str("auto"),
            Auto::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Auto {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Auto;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"auto\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Auto, E> {
                if v == "auto" {
                    Ok(Auto::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Auto, E> {
                Ok(Auto::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Auto, E> {
                Ok(Auto::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Auto, E> {
                Ok(Auto::Value(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    NegAbs,
    Exponential,
    Zero,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Fixed cell width for every epsilon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dr: Option<f64>,
    /// Cells per epsilon when `dr` is absent.
    pub dr_per_eps: f64,
    pub r_max: Auto,
    /// Directory for cached interaction matrices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_cache: Option<PathBuf>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dr: None,
            dr_per_eps: 8.0,
            r_max: Auto::Auto,
            matrix_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub t_end: Auto,
    pub cfl: f64,
    pub diffusion: DiffusionMode,
    pub record_interval: Auto,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    pub mass_loss_tolerance: f64,
    /// Write every k-th recorded profile to `snapshots/`; 0 disables.
    pub snapshot_every: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            t_end: Auto::Auto,
            cfl: 0.5,
            diffusion: DiffusionMode::Implicit,
            record_interval: Auto::Auto,
            dt_max: None,
            mass_loss_tolerance: 1e-6,
            snapshot_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub slack: f64,
    pub safety_factor: f64,
    pub holdout: usize,
    pub lp: Vec<Exponent>,
    pub localized_p: Exponent,
    pub fit_tolerance: f64,
    pub min_r2: f64,
    pub concentration_ratio_min: f64,
    pub saturation_factor: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let c = CheckSettings::default();
        Self {
            slack: c.slack,
            safety_factor: c.safety_factor,
            holdout: c.holdout,
            lp: c.lp.iter().map(|&p| Exponent(p)).collect(),
            localized_p: Exponent(c.localized_p),
            fit_tolerance: c.fit_tolerance,
            min_r2: c.min_r2,
            concentration_ratio_min: c.concentration_ratio_min,
            saturation_factor: c.saturation_factor,
        }
    }
}

/// Lebesgue exponent, written as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent(pub f64);

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Exponent;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an exponent >= 1 or \"inf\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Exponent, E> {
                parse_p_label(v)
                    .map(Exponent)
                    .ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Exponent, E> {
                if v >= 1.0 {
                    Ok(Exponent(v))
                } else {
                    Err(E::invalid_value(de::Unexpected::Float(v), &self))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Exponent, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(V)
    }
}

fn default_initial() -> InitSpec {
    InitSpec::Gaussian {
        mass: 1.0,
        width: 0.25,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub kernel: KernelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_table: Option<PathBuf>,
    #[serde(rename = "N", alias = "dimension")]
    pub dimension: Dimension,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub lambda: Auto,
    #[serde(default = "default_initial")]
    pub initial: InitSpec,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads and validates a file. A relative `kernel_table` or tabulated
    /// initial-profile path is taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: Config =
            toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(t) = &mut c.kernel_table {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        if let InitSpec::Tabulated { path: p, .. } = &mut c.initial {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = &mut c.grid.matrix_cache {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.eps.is_empty() {
            return bad("eps must list at least one value".into());
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return bad(format!("eps values must be positive, got {e}"));
        }
        match (self.kernel, &self.kernel_table) {
            (KernelName::Tabulated, None) => {
                return bad("kernel = \"tabulated\" needs kernel_table".into())
            }
            (k, Some(_)) if k != KernelName::Tabulated => {
                return bad("kernel_table is only allowed with kernel = \"tabulated\"".into())
            }
            _ => {}
        }
        if self.kernel == KernelName::Zero && self.lambda == Auto::Auto {
            return bad("lambda = \"auto\" needs an attractive kernel; set lambda for kernel = \"zero\"".into());
        }
        if self.kernel == KernelName::Zero && self.solver.t_end == Auto::Auto {
            return bad("t_end = \"auto\" is T_Lambda, undefined for kernel = \"zero\"".into());
        }
        let positive = |name: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(v) if !(v > 0.0 && v.is_finite()) => {
                    Err(Error::Config(format!("{name} must be positive, got {v}")))
                }
                _ => Ok(()),
            }
        };
        positive("lambda", self.lambda.value())?;
        positive("grid.dr", self.grid.dr)?;
        positive("grid.dr_per_eps", Some(self.grid.dr_per_eps))?;
        positive("grid.r_max", self.grid.r_max.value())?;
        positive("solver.t_end", self.solver.t_end.value())?;
        positive("solver.cfl", Some(self.solver.cfl))?;
        positive("solver.record_interval", self.solver.record_interval.value())?;
        positive("solver.dt_max", self.solver.dt_max)?;
        positive("analysis.safety_factor", Some(self.analysis.safety_factor))?;
        positive("analysis.fit_tolerance", Some(self.analysis.fit_tolerance))?;
        if self.solver.cfl > 1.0 {
            return bad(format!("solver.cfl must be at most 1, got {}", self.solver.cfl));
        }
        if !(self.solver.mass_loss_tolerance >= 0.0) {
            return bad("solver.mass_loss_tolerance must be nonnegative".into());
        }
        if !(self.analysis.slack >= 0.0) {
            return bad("analysis.slack must be nonnegative".into());
        }
        if self.kernel != KernelName::Tabulated {
            self.validate_kernel(&self.kernel_spec()?)?;
        }
        Ok(())
    }

    fn validate_kernel(&self, k: &KernelSpec) -> Result<()> {
        let report = k.validate_hypotheses(self.dimension);
        if let Some(f) = report
            .failures()
            .find(|f| f.id == "KN3" && f.status == CheckStatus::Fail)
        {
            return Err(Error::Config(format!(
                "kernel {} fails {} in dimension {}",
                k.id(),
                f.description,
                self.dimension
            )));
        }
        Ok(())
    }

    /// Builds the kernel, reading the table if needed.
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let k = match self.kernel {
            KernelName::NegAbs => KernelSpec::neg_abs(),
            KernelName::Exponential => KernelSpec::exponential(),
            KernelName::Zero => KernelSpec::zero(),
            KernelName::Tabulated => {
                let path = self.kernel_table.as_ref().ok_or_else(|| {
                    Error::Config("kernel = \"tabulated\" needs kernel_table".into())
                })?;
                let k = KernelSpec::from_table_file(path)?;
                self.validate_kernel(&k)?;
                k
            }
        };
        Ok(k)
    }

    pub fn check_settings(&self) -> CheckSettings {
        let a = &self.analysis;
        CheckSettings {
            slack: a.slack,
            safety_factor: a.safety_factor,
            holdout: a.holdout,
            lp: a.lp.iter().map(|p| p.0).collect(),
            localized_p: a.localized_p.0,
            fit_tolerance: a.fit_tolerance,
            min_r2: a.min_r2,
            concentration_ratio_min: a.concentration_ratio_min,
            saturation_factor: a.saturation_factor,
        }
    }

    pub fn run_settings(&self) -> Result<RunSettings> {
        let mut s = RunSettings::new(self.dimension, self.kernel_spec()?, self.initial.clone());
        s.lambda = self.lambda.value();
        s.dr = self.grid.dr;
        s.dr_per_eps = self.grid.dr_per_eps;
        s.r_max = self.grid.r_max.value();
        s.t_end = self.solver.t_end.value();
        s.record_interval = self.solver.record_interval.value();
        s.cfl = self.solver.cfl;
        s.diffusion = self.solver.diffusion;
        s.dt_max = self.solver.dt_max;
        s.mass_loss_tolerance = self.solver.mass_loss_tolerance;
        s.checks = self.check_settings();
        s.matrix_cache = self.grid.matrix_cache.clone();
        Ok(s)
    }

    /// The configuration with every default written out.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = Config::from_toml_str("kernel = \"neg_abs\"\nN = 1\neps = [0.1]\n").unwrap();
        assert_eq!(c.dimension.get(), 1);
        assert_eq!(c.lambda, Auto::Auto);
        assert_eq!(c.grid, GridSection::default());
        assert_eq!(c.solver, SolverSection::default());
        assert_eq!(c.analysis, AnalysisSection::default());
        assert_eq!(c.check_settings(), CheckSettings::default());
        let text = c.resolved_toml().unwrap();
        assert!(text.contains("dr_per_eps"));
        assert_eq!(Config::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn full_config_roundtrips() {
        let src = r#"
kernel = "exponential"
dimension = 2
eps = [0.1, 0.05]
lambda = 3

[initial]
kind = "indicator"
mass = 2.0
outer = 0.5

[grid]
dr = 0.01
r_max = 4.0

[solver]
t_end = 1.5
diffusion = "explicit"
record_interval = 0.01
dt_max = 0.001

[analysis]
lp = [2, 4, "inf"]
"#;
        let c = Config::from_toml_str(src).unwrap();
        assert_eq!(c.lambda, Auto::Value(3.0));
        assert_eq!(c.check_settings().lp, vec![2.0, 4.0, f64::INFINITY]);
        let back = Config::from_toml_str(&c.resolved_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejections() {
        let base = "kernel = \"neg_abs\"\neps = [0.1]\n";
        assert!(Config::from_toml_str(&format!("{base}N = 4\n")).is_err());
        assert!(Config::from_toml_str(&format!("{base}N = 0\n")).is_err());
        assert!(Config::from_toml_str(&format!("{base}N = 1\nlamda = 1.0\n")).is_err());
        assert!(Config::from_toml_str(&format!("{base}N = 1\n[grid]\nd_r = 1.0\n")).is_err());
        assert!(Config::from_toml_str(&format!("{base}N = 1\nlambda = \"big\"\n")).is_err());
        assert!(Config::from_toml_str(&format!("{base}N = 1\nlambda = -1.0\n")).is_err());
        assert!(Config::from_toml_str("kernel = \"tabulated\"\nN = 1\neps = [0.1]\n").is_err());
        assert!(Config::from_toml_str("kernel = \"zero\"\nN = 1\neps = [0.1]\n").is_err());
        assert!(Config::from_toml_str(
            "kernel = \"zero\"\nN = 1\neps = [0.1]\nlambda = 1.0\n[solver]\nt_end = 1.0\n"
        )
        .is_ok());
        assert!(Config::from_toml_str("kernel = \"neg_abs\"\nN = 1\neps = []\n").is_err());
        assert!(Config::from_toml_str(&format!("{base}N = 1\n[analysis]\nlp = [0.5]\n")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let table = dir.path().join("k.txt");
        let rows: String = (1..=200)
            .map(|i| {
                let s = 0.05 * i as f64;
                format!("{s} {}\n", -(-s).exp())
            })
            .collect();
        std::fs::write(&table, rows).unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "kernel = \"tabulated\"\nkernel_table = \"k.txt\"\nN = 2\neps = [0.1]\nlambda = 1.0\n").unwrap();
        let c = Config::load(&cfg).unwrap();
        assert_eq!(c.kernel_table.as_deref(), Some(table.as_path()));
        assert!(c.kernel_spec().unwrap().id().starts_with("tabulated-"));
    }
}
