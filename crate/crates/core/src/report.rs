//! Structured records of checked identities and inequalities.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// JSON has no NaN/inf; encode them as strings so reports round-trip.
pub mod lenient_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("NaN")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

/// `f64` with lenient JSON encoding, for use inside maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Num(#[serde(with = "lenient_f64")] pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(with = "lenient_f64")]
    pub param: f64,
    #[serde(with = "lenient_f64")]
    pub lhs: f64,
    #[serde(with = "lenient_f64")]
    pub rhs: f64,
    #[serde(with = "lenient_f64")]
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    #[serde(with = "lenient_f64")]
    pub lhs: f64,
    #[serde(with = "lenient_f64")]
    pub rhs: f64,
    #[serde(with = "lenient_f64")]
    pub ratio: f64,
    #[serde(with = "lenient_f64")]
    pub tolerance: f64,
    pub pass: bool,
    pub rows: Vec<ReportRow>,
    pub diagnostics: BTreeMap<String, Num>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            ratio: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
            rows: Vec::new(),
            diagnostics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Report comparing two numbers by relative gap `|lhs - rhs| / |rhs|`.
    pub fn relative(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let mut r = Self::new(name);
        r.lhs = lhs;
        r.rhs = rhs;
        r.ratio = lhs / rhs;
        r.tolerance = tolerance;
        let gap = relative_gap(lhs, rhs);
        r.pass = gap.is_finite() && gap < tolerance;
        r.note("relative_gap", gap);
        r
    }

    pub fn push_row(&mut self, param: f64, value: f64, pass: bool) {
        self.rows.push(ReportRow {
            param,
            lhs: value,
            rhs: f64::NAN,
            ratio: f64::NAN,
            pass,
        });
    }

    pub fn push_cmp(&mut self, param: f64, lhs: f64, rhs: f64, pass: bool) {
        self.rows.push(ReportRow {
            param,
            lhs,
            rhs,
            ratio: lhs / rhs,
            pass,
        });
    }

    pub fn note(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), Num(value));
    }

    pub fn diag(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).map(|n| n.0)
    }

    pub fn text(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if b != 0.0 {
        (a - b).abs() / b.abs()
    } else {
        a.abs()
    }
}

/// Outcome of an embedding / isoperimetric boundedness check over a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub name: String,
    /// e.g. `"2sS_{1,s}/Γ(1-s)"`; the measured ratio stands in for it.
    pub constant_name: String,
    pub rows: Vec<ReportRow>,
    #[serde(with = "lenient_f64")]
    pub lhs: f64,
    #[serde(with = "lenient_f64")]
    pub rhs: f64,
    /// Smallest ratio over the family.
    #[serde(with = "lenient_f64")]
    pub ratio: f64,
    /// max/min of the ratio across the family.
    #[serde(with = "lenient_f64")]
    pub spread: f64,
    #[serde(with = "lenient_f64")]
    pub tolerance: f64,
    pub pass: bool,
    pub diagnostics: BTreeMap<String, Num>,
}

impl EmbeddingReport {
    pub fn from_rows(name: &str, constant_name: &str, rows: Vec<ReportRow>, max_spread: f64) -> Self {
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let finite = ratios.iter().all(|r| r.is_finite() && *r > 0.0);
        let spread = hi / lo;
        let (lhs, rhs) = rows
            .iter()
            .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
            .map(|r| (r.lhs, r.rhs))
            .unwrap_or((f64::NAN, f64::NAN));
        Self {
            name: name.to_string(),
            constant_name: constant_name.to_string(),
            rows,
            lhs,
            rhs,
            ratio: lo,
            spread,
            tolerance: max_spread,
            pass: finite && spread < max_spread,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), Num(value));
    }
}
