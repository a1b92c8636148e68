use std::fmt;

use serde::{Deserialize, Serialize};

/// Pass/fail outcome of one checked inequality. `margin` is positive when
/// the check passes and measures the distance to the threshold in the
/// check's own units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    /// `-inf` for checks that could not be evaluated.
    #[serde(with = "extended_float")]
    pub margin: f64,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, passed: bool, margin: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            margin,
            detail: detail.into(),
        }
    }

    /// A check that could not be evaluated.
    pub fn failed(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::new(name, false, f64::NEG_INFINITY, detail)
    }

    /// Threshold check `value <= limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self::new(name, value <= limit, limit - value, detail)
    }

    /// Threshold check `value >= limit`.
    pub fn at_least(name: impl Into<String>, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self::new(name, value >= limit, value - limit, detail)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} margin={:.6e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.margin,
            self.detail
        )
    }
}

pub fn all_passed(verdicts: &[Verdict]) -> bool {
    verdicts.iter().all(|v| v.passed)
}

/// Label for a Lebesgue exponent in file formats: `"2"`, `"1.5"`, `"inf"`.
pub fn p_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

/// Inverse of [`p_label`].
pub fn parse_p_label(s: &str) -> Option<f64> {
    match s {
        "inf" | "infinity" => Some(f64::INFINITY),
        _ => s.parse().ok().filter(|p: &f64| *p >= 1.0),
    }
}

/// JSON has no infinities or NaN; they are written as strings.
pub(crate) mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(de::Error::custom(format!("invalid number {t:?}"))),
            },
        }
    }
}
