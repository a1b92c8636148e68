//! Interaction kernels `K(x) = k(|x|)`.
//!
//! Only the radial derivative `k'` enters the drift, so kernels are described
//! by `k'` (and `k''` where the one-dimensional theory needs it). Attraction is
//! encoded by `k' < 0`; its strength below the scale `Lambda` is
//! `kappa_Lambda = -sup_{0 < s < Lambda} k'(s)`.

use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::radial_field::Dimension;

/// Relative agreement required between successive refinements of a
/// tabulated supremum.
const SUP_REFINE_RTOL: f64 = 1e-6;
/// Relative agreement required between successive extrapolants of `kappa_0`.
const KAPPA_ZERO_RTOL: f64 = 1e-4;
/// Probe scales used by [`KernelSpec::validate_hypotheses`].
pub const KN2_PROBES: [f64; 3] = [0.1, 1.0, 10.0];

/// `k'` sampled on strictly increasing abscissae, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedProfile {
    s: Vec<f64>,
    kprime: Vec<f64>,
}

impl TabulatedProfile {
    pub fn new(s: Vec<f64>, kprime: Vec<f64>) -> Result<Self> {
        if s.len() != kprime.len() {
            return Err(Error::InvalidInput(format!(
                "tabulated kernel: {} abscissae but {} values",
                s.len(),
                kprime.len()
            )));
        }
        if s.len() < 2 {
            return Err(Error::InvalidInput(
                "tabulated kernel needs at least two samples".into(),
            ));
        }
        if s[0] <= 0.0 {
            return Err(Error::InvalidInput(
                "tabulated kernel abscissae must be positive".into(),
            ));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "tabulated kernel abscissae must be strictly increasing".into(),
            ));
        }
        if s.iter().chain(&kprime).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "tabulated kernel contains non-finite values".into(),
            ));
        }
        Ok(Self { s, kprime })
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.s
    }

    pub fn values(&self) -> &[f64] {
        &self.kprime
    }

    pub fn range(&self) -> (f64, f64) {
        (self.s[0], self.s[self.s.len() - 1])
    }

    fn segment(&self, s: f64) -> usize {
        // index j with s in [s_j, s_{j+1}]
        match self.s.binary_search_by(|x| x.partial_cmp(&s).unwrap()) {
            Ok(j) => j.min(self.s.len() - 2),
            Err(j) => j - 1,
        }
    }

    fn interpolate(&self, s: f64) -> f64 {
        let j = self.segment(s);
        let (s0, s1) = (self.s[j], self.s[j + 1]);
        let t = (s - s0) / (s1 - s0);
        self.kprime[j] * (1.0 - t) + self.kprime[j + 1] * t
    }

    fn slope(&self, s: f64) -> f64 {
        let j = self.segment(s);
        (self.kprime[j + 1] - self.kprime[j]) / (self.s[j + 1] - self.s[j])
    }

    fn contains(&self, s: f64) -> bool {
        let (lo, hi) = self.range();
        s >= lo && s <= hi
    }

    /// Supremum of the interpolant over `[s_0, hi]`, refined on uniform
    /// samples (plus the table nodes) until two refinements agree.
    fn sup_up_to(&self, hi: f64) -> f64 {
        let lo = self.s[0];
        let node_max = self
            .s
            .iter()
            .zip(&self.kprime)
            .filter(|(s, _)| **s <= hi)
            .map(|(_, k)| *k)
            .fold(self.interpolate(hi), f64::max);
        let uniform_max = |m: usize| -> f64 {
            (0..=m)
                .map(|k| self.interpolate(lo + (hi - lo) * k as f64 / m as f64))
                .fold(node_max, f64::max)
        };
        let mut m = 16;
        let mut prev = uniform_max(m);
        loop {
            m *= 2;
            let cur = uniform_max(m);
            if (cur - prev).abs() <= SUP_REFINE_RTOL * cur.abs().max(f64::MIN_POSITIVE) || m > 1 << 16 {
                return cur;
            }
            prev = cur;
        }
    }

    fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (s, k) in self.s.iter().zip(&self.kprime) {
            hasher.update(s.to_le_bytes());
            hasher.update(k.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// `K(x) = -|x|`
    NegAbs,
    /// `K(x) = exp(-|x|)`
    Exponential,
    /// `K = 0`: pure heat equation, used as a baseline only.
    Zero,
    Tabulated(TabulatedProfile),
}

/// An interaction kernel together with the norms the theory uses.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    kprime_sup_norm: f64,
    kdoubleprime_l1: Option<f64>,
}

/// `kappa_Lambda` (or `kappa_0`) together with the (KN2) verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaEstimate {
    pub value: f64,
    pub satisfies_kn2: bool,
}

impl KappaEstimate {
    fn new(value: f64) -> Self {
        Self {
            value,
            satisfies_kn2: value > 0.0 && value.is_finite(),
        }
    }
}

impl KernelSpec {
    pub fn neg_abs() -> Self {
        Self {
            family: KernelFamily::NegAbs,
            kprime_sup_norm: 1.0,
            kdoubleprime_l1: Some(0.0),
        }
    }

    pub fn exponential() -> Self {
        Self {
            family: KernelFamily::Exponential,
            kprime_sup_norm: 1.0,
            // int_0^inf e^{-s} ds
            kdoubleprime_l1: Some(1.0),
        }
    }

    pub fn zero() -> Self {
        Self {
            family: KernelFamily::Zero,
            kprime_sup_norm: 0.0,
            kdoubleprime_l1: Some(0.0),
        }
    }

    /// Tabulated `k'`. The sup norm is the sample maximum, which is a lower
    /// estimate of the true `|k'|_inf`; `|k''|_1` is the total variation of
    /// the piecewise-linear interpolant.
    pub fn tabulated(profile: TabulatedProfile) -> Self {
        let kprime_sup_norm = profile.kprime.iter().fold(0.0_f64, |m, k| m.max(k.abs()));
        let tv = profile
            .kprime
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .sum::<f64>();
        Self {
            family: KernelFamily::Tabulated(profile),
            kprime_sup_norm,
            kdoubleprime_l1: Some(tv),
        }
    }

    /// Load a two-column `(s, k'(s))` text table. Lines starting with `#`
    /// and blank lines are ignored.
    pub fn from_table_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (s, k) = read_two_columns(path)?;
        let profile = TabulatedProfile::new(s, k).map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(Self::tabulated(profile))
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn kprime_sup_norm(&self) -> f64 {
        self.kprime_sup_norm
    }

    pub fn kdoubleprime_l1(&self) -> Option<f64> {
        self.kdoubleprime_l1
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, KernelFamily::Zero)
    }

    /// Stable identifier used in cache keys and run metadata.
    pub fn id(&self) -> String {
        match &self.family {
            KernelFamily::NegAbs => "neg_abs".into(),
            KernelFamily::Exponential => "exponential".into(),
            KernelFamily::Zero => "zero".into(),
            KernelFamily::Tabulated(p) => format!("tabulated-{}", p.digest()),
        }
    }

    /// `k'(s)` for `s > 0`.
    pub fn kprime(&self, s: f64) -> Result<f64> {
        check_positive(s)?;
        Ok(match &self.family {
            KernelFamily::NegAbs => -1.0,
            KernelFamily::Exponential => -(-s).exp(),
            KernelFamily::Zero => 0.0,
            KernelFamily::Tabulated(p) => {
                if !p.contains(s) {
                    return Err(out_of_table(p, s));
                }
                p.interpolate(s)
            }
        })
    }

    /// `k''(s)` for `s > 0`; piecewise constant for tabulated kernels.
    pub fn kdoubleprime(&self, s: f64) -> Result<f64> {
        check_positive(s)?;
        Ok(match &self.family {
            KernelFamily::NegAbs | KernelFamily::Zero => 0.0,
            KernelFamily::Exponential => (-s).exp(),
            KernelFamily::Tabulated(p) => {
                if !p.contains(s) {
                    return Err(out_of_table(p, s));
                }
                p.slope(s)
            }
        })
    }

    /// `k'(s)` continued to `0 < s < s_0` by the first sample. Only used
    /// where quadrature nodes approach the diagonal `x = y`.
    pub(crate) fn kprime_near_origin(&self, s: f64) -> Result<f64> {
        match &self.family {
            KernelFamily::Tabulated(p) if s < p.range().0 => Ok(p.kprime[0]),
            _ => self.kprime(s.max(f64::MIN_POSITIVE)),
        }
    }

    /// `kappa_Lambda = -sup_{0 < s < Lambda} k'(s)`.
    ///
    /// A non-positive value is reported through
    /// [`KappaEstimate::satisfies_kn2`], not as an error.
    pub fn kappa_lambda(&self, lambda: f64) -> Result<KappaEstimate> {
        check_positive(lambda)?;
        let value = match &self.family {
            KernelFamily::NegAbs => 1.0,
            // k' = -e^{-s} is increasing: the sup is attained as s -> Lambda
            KernelFamily::Exponential => (-lambda).exp(),
            KernelFamily::Zero => 0.0,
            KernelFamily::Tabulated(p) => {
                let (lo, hi) = p.range();
                if lambda < lo || lambda > hi {
                    return Err(out_of_table(p, lambda));
                }
                -p.sup_up_to(lambda)
            }
        };
        Ok(KappaEstimate::new(value))
    }

    /// `kappa_0 = lim_{Lambda -> 0} kappa_Lambda`.
    ///
    /// Tabulated kernels use a two-level Richardson tableau over
    /// `Lambda in {1e-1, 1e-2, 1e-3}` and fail with
    /// [`Error::Nonconvergence`] when the last two extrapolants disagree.
    pub fn kappa_zero(&self) -> Result<KappaEstimate> {
        match &self.family {
            KernelFamily::NegAbs | KernelFamily::Exponential => Ok(KappaEstimate::new(1.0)),
            KernelFamily::Zero => Ok(KappaEstimate::new(0.0)),
            KernelFamily::Tabulated(_) => {
                let k1 = self.kappa_lambda(1e-1)?.value;
                let k2 = self.kappa_lambda(1e-2)?.value;
                let k3 = self.kappa_lambda(1e-3)?.value;
                let r12 = (10.0 * k2 - k1) / 9.0;
                let r23 = (10.0 * k3 - k2) / 9.0;
                let r = (100.0 * r23 - r12) / 99.0;
                if (r - r23).abs() > KAPPA_ZERO_RTOL * r.abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::Nonconvergence {
                        what: "kappa_0 extrapolation",
                        detail: format!("successive extrapolants {r23} and {r}"),
                    });
                }
                Ok(KappaEstimate::new(r))
            }
        }
    }

    /// Check (KN1)-(KN3) for the given dimension. Failures are entries of
    /// the report, never errors.
    pub fn validate_hypotheses(&self, dimension: Dimension) -> ValidationReport {
        let mut entries = Vec::new();
        entries.push(HypothesisCheck {
            id: "KN1",
            description: "k' bounded".into(),
            status: CheckStatus::from_bool(self.kprime_sup_norm.is_finite()),
            value: Some(self.kprime_sup_norm),
        });
        for lambda in KN2_PROBES {
            let (status, value) = match self.kappa_lambda(lambda) {
                Ok(k) => (CheckStatus::from_bool(k.satisfies_kn2), Some(k.value)),
                Err(_) => (CheckStatus::Fail, None),
            };
            entries.push(HypothesisCheck {
                id: "KN2",
                description: format!("kappa_Lambda > 0 at Lambda = {lambda}"),
                status,
                value,
            });
        }
        let (status, value) = match self.kappa_zero() {
            Ok(k) => (CheckStatus::from_bool(k.satisfies_kn2), Some(k.value)),
            Err(_) => (CheckStatus::Fail, None),
        };
        entries.push(HypothesisCheck {
            id: "KN2",
            description: "kappa_0 > 0".into(),
            status,
            value,
        });
        let kn3 = if dimension.get() == 1 {
            match self.kdoubleprime_l1 {
                Some(v) => (CheckStatus::from_bool(v.is_finite()), Some(v)),
                None => (CheckStatus::Fail, None),
            }
        } else {
            (CheckStatus::Skipped, self.kdoubleprime_l1)
        };
        entries.push(HypothesisCheck {
            id: "KN3",
            description: "|k''|_1 finite (N = 1 only)".into(),
            status: kn3.0,
            value: kn3.1,
        });
        ValidationReport { dimension, entries }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

impl CheckStatus {
    fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub id: &'static str,
    pub description: String,
    pub status: CheckStatus,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub dimension: Dimension,
    pub entries: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &HypothesisCheck> {
        self.entries.iter().filter(|e| e.status == CheckStatus::Fail)
    }
}

fn check_positive(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("expected a positive argument, got {s}")))
    }
}

fn out_of_table(p: &TabulatedProfile, s: f64) -> Error {
    let (lo, hi) = p.range();
    Error::Domain(format!("s = {s} outside tabulated range [{lo}, {hi}]"))
}

/// Read a whitespace-separated two-column numeric table.
pub(crate) fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split_whitespace();
        let mut next = || -> Result<f64> {
            cols.next()
                .ok_or_else(|| Error::parse(path, format!("line {}: expected two columns", lineno + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))
        };
        a.push(next()?);
        b.push(next()?);
    }
    Ok((a, b))
}
