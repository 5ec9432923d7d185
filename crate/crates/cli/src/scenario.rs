//! Scenario files: TOML describing an operator, fractional order, fields,
//! sets and the numerics of each check.

use std::collections::BTreeMap;
use std::path::Path;

use kfp_core::nonlocal::FractionalParams;
use kfp_core::{AaBox, GaussianMixture, GaussianTerm, GridField, RegionSet, ScalarField, Spec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub operator: OperatorDesc,
    #[serde(default)]
    pub fractional: FractionalDesc,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub verify: VerifyDesc,
    #[serde(default)]
    pub expect: Expect,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub sets: Vec<SetDesc>,
    #[serde(default)]
    pub fields: Vec<FieldDesc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDesc {
    pub q: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionalDesc {
    pub s: f64,
    pub p: f64,
}

impl Default for FractionalDesc {
    fn default() -> Self {
        Self { s: 0.25, p: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    /// Log-spaced volume/dimension grid.
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    /// Levels reported in `sigma,G` profiles.
    pub sigma_points: usize,
    /// Times for `apply` and `kernel`.
    pub times: Vec<f64>,
    /// Points for `apply`, `fracpow` and `kernel`.
    pub probes: Vec<Vec<f64>>,
    /// Monte Carlo pairs per time node of the Besov seminorm.
    pub besov_samples: usize,
    /// Intrinsic dimension for uniform-regime checks; the fitted `D₀` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            t_min: 1e-4,
            t_max: 1e4,
            t_points: 33,
            sigma_points: 32,
            times: vec![0.1, 1.0, 10.0],
            probes: vec![vec![0.0, 0.0], vec![0.5, -0.25]],
            besov_samples: 1 << 16,
            d: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyDesc {
    /// Grid field for the coarea check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarea_field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blowup_set: Option<String>,
    pub blowup_times: Vec<f64>,
    /// Sets for the isoperimetric check.
    pub iso_sets: Vec<String>,
    /// Fields for the embedding checks.
    pub family: Vec<String>,
}

impl Default for VerifyDesc {
    fn default() -> Self {
        Self {
            coarea_field: None,
            blowup_set: None,
            blowup_times: vec![1e-2, 1e-3, 1e-4],
            iso_sets: Vec::new(),
            family: Vec::new(),
        }
    }
}

/// Expected dimensions, compared by `dims` when present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expect {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_zero: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_infinity: Option<f64>,
    /// `D∞ = +∞` expected (volume grows exponentially).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_infinity_unbounded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDesc {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDesc {
    Boxes { name: String, boxes: Vec<BoxDesc> },
    Ball { name: String, center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDesc {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldDesc {
    Mixture {
        name: String,
        #[serde(default)]
        constant: f64,
        terms: Vec<TermDesc>,
    },
    Indicator {
        name: String,
        set: String,
    },
    /// Pyramid of height 1 on a box.
    Tent {
        name: String,
        lo: Vec<f64>,
        hi: Vec<f64>,
        cells: usize,
    },
    /// Number of nested boxes containing each cell.
    Staircase {
        name: String,
        lo: Vec<f64>,
        hi: Vec<f64>,
        nested: Vec<BoxDesc>,
        cells: usize,
    },
    Grid {
        name: String,
        lo: Vec<f64>,
        hi: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<f64>,
    },
}

impl SetDesc {
    pub fn name(&self) -> &str {
        match self {
            SetDesc::Boxes { name, .. } | SetDesc::Ball { name, .. } => name,
        }
    }
}

impl FieldDesc {
    pub fn name(&self) -> &str {
        match self {
            FieldDesc::Mixture { name, .. }
            | FieldDesc::Indicator { name, .. }
            | FieldDesc::Tent { name, .. }
            | FieldDesc::Staircase { name, .. }
            | FieldDesc::Grid { name, .. } => name,
        }
    }
}

/// Tolerances filled in when a scenario leaves them out.
pub const DEFAULT_TOLERANCES: [(&str, f64); 5] = [
    ("coarea", 0.03),
    ("d_infinity", 0.025),
    ("d_zero", 0.02),
    ("embedding_spread", 1.5),
    ("mixed_spread", 2.0),
];

/// A scenario with every descriptor turned into a library object.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: Spec,
    pub fractional: FractionalParams,
    pub sets: Vec<(String, RegionSet)>,
    pub fields: Vec<(String, ScalarField)>,
}

impl Resolved {
    pub fn set(&self, name: &str) -> Result<&RegionSet, CliError> {
        self.sets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| CliError::Validation(format!("unknown set `{name}`")))
    }

    pub fn field(&self, name: &str) -> Result<&ScalarField, CliError> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| CliError::Validation(format!("unknown field `{name}`")))
    }
}

pub fn parse_config(text: &str, origin: &str) -> Result<Scenario, CliError> {
    let mut sc: Scenario = toml::from_str(text).map_err(|e| CliError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    for (k, v) in DEFAULT_TOLERANCES {
        sc.tolerances.entry(k.to_string()).or_insert(v);
    }
    sc.resolve()?;
    Ok(sc)
}

pub fn load_config(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse {
        origin: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 {
        return Err(CliError::Validation(format!("{what}: empty matrix")));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(CliError::Validation(format!(
                "{what}: row {} has {} entries, expected {n}",
                i + 1,
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
}

fn aabox(lo: &[f64], hi: &[f64], what: &str) -> Result<AaBox, CliError> {
    AaBox::new(lo.to_vec(), hi.to_vec()).map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

fn core<T>(r: kfp_core::Result<T>, what: &str) -> Result<T, CliError> {
    r.map_err(|e| CliError::Validation(format!("{what}: {e}")))
}

impl Scenario {
    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(f64::NAN)
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let q = matrix(&self.operator.q, "operator.q")?;
        let b = matrix(&self.operator.b, "operator.b")?;
        let spec = core(Spec::new(q, b), "operator")?;
        let dim = spec.dim();
        let fractional = core(FractionalParams::new(self.fractional.s, self.fractional.p), "fractional")?;
        let mut sets = Vec::new();
        for d in &self.sets {
            let what = format!("sets.{}", d.name());
            let set = match d {
                SetDesc::Boxes { boxes, .. } => {
                    let bs = boxes
                        .iter()
                        .map(|b| aabox(&b.lo, &b.hi, &what))
                        .collect::<Result<Vec<_>, _>>()?;
                    core(RegionSet::from_boxes(dim, bs), &what)?
                }
                SetDesc::Ball { center, radius, .. } => core(RegionSet::ball(center.clone(), *radius), &what)?,
            };
            if set.dim != dim {
                return Err(CliError::Validation(format!("{what}: dimension {} for a {dim}-dimensional operator", set.dim)));
            }
            sets.push((d.name().to_string(), set));
        }
        let mut fields = Vec::new();
        for d in &self.fields {
            let what = format!("fields.{}", d.name());
            let f = match d {
                FieldDesc::Mixture { constant, terms, .. } => {
                    let ts = terms
                        .iter()
                        .map(|t| core(GaussianTerm::new(t.weight, t.mean.clone(), matrix(&t.cov, &what)?), &what))
                        .collect::<Result<Vec<_>, _>>()?;
                    ScalarField::Mixture(core(GaussianMixture::new(dim, *constant, ts), &what)?)
                }
                FieldDesc::Indicator { set, .. } => {
                    let s = sets
                        .iter()
                        .find(|(n, _)| n == set)
                        .ok_or_else(|| CliError::Validation(format!("{what}: unknown set `{set}`")))?;
                    ScalarField::Indicator(s.1.clone())
                }
                FieldDesc::Tent { lo, hi, cells, .. } => {
                    ScalarField::Grid(core(GridField::tent(aabox(lo, hi, &what)?, *cells), &what)?)
                }
                FieldDesc::Staircase { lo, hi, nested, cells, .. } => {
                    let boxes = nested
                        .iter()
                        .map(|b| aabox(&b.lo, &b.hi, &what))
                        .collect::<Result<Vec<_>, _>>()?;
                    ScalarField::Grid(core(GridField::staircase(aabox(lo, hi, &what)?, &boxes, *cells), &what)?)
                }
                FieldDesc::Grid { lo, hi, shape, values, .. } => ScalarField::Grid(core(
                    GridField::new(aabox(lo, hi, &what)?, shape.clone(), values.clone()),
                    &what,
                )?),
            };
            if f.dim() != dim {
                return Err(CliError::Validation(format!("{what}: dimension {} for a {dim}-dimensional operator", f.dim())));
            }
            fields.push((d.name().to_string(), f));
        }
        let resolved = Resolved {
            spec,
            fractional,
            sets,
            fields,
        };
        if let Some(p) = self.grids.probes.iter().find(|p| p.len() != dim) {
            return Err(CliError::Validation(format!("grids.probes: point {p:?} is not {dim}-dimensional")));
        }
        if !(self.grids.t_min > 0.0 && self.grids.t_max > self.grids.t_min && self.grids.t_points >= 2) {
            return Err(CliError::Validation("grids: need 0 < t_min < t_max and t_points ≥ 2".into()));
        }
        if let Some(f) = &self.verify.coarea_field {
            resolved.field(f)?;
        }
        if let Some(s) = &self.verify.blowup_set {
            resolved.set(s)?;
        }
        for s in &self.verify.iso_sets {
            resolved.set(s)?;
        }
        for f in &self.verify.family {
            resolved.field(f)?;
        }
        Ok(resolved)
    }
}
