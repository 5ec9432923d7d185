//! Test functions and test sets on ℝ^N.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::operator::unit_ball_volume;

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(KfpError::DimensionMismatch(format!(
                "box corners have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(KfpError::InvalidParameter(format!("box {lo:?}..{hi:?} is not ordered")));
        }
        Ok(Self { lo, hi })
    }

    /// `[0, side]^dim`.
    pub fn cube(dim: usize, side: f64) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![side; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a < *v && *v < *b)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|v| v * lambda).collect(),
            hi: self.hi.iter().map(|v| v * lambda).collect(),
        }
    }

    /// Box with axis `k` stretched by `factors[k]` about the origin.
    pub fn dilated(&self, factors: &[f64]) -> Self {
        Self {
            lo: self.lo.iter().zip(factors).map(|(v, f)| v * f).collect(),
            hi: self.hi.iter().zip(factors).map(|(v, f)| v * f).collect(),
        }
    }

    fn overlap_volume(&self, other: &AaBox) -> f64 {
        (0..self.dim())
            .map(|k| (self.hi[k].min(other.hi[k]) - self.lo[k].max(other.lo[k])).max(0.0))
            .product()
    }

    pub fn hull(&self, other: &AaBox) -> AaBox {
        AaBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionKind {
    Boxes { boxes: Vec<AaBox> },
    Ball { center: Vec<f64>, radius: f64 },
}

/// A measurable set of finite measure: a disjoint union of boxes or a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub dim: usize,
    pub kind: RegionKind,
}

impl RegionSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            kind: RegionKind::Boxes { boxes: Vec::new() },
        }
    }

    pub fn from_box(b: AaBox) -> Self {
        Self {
            dim: b.dim(),
            kind: RegionKind::Boxes { boxes: vec![b] },
        }
    }

    /// Union of boxes; rejects overlapping members.
    pub fn from_boxes(dim: usize, boxes: Vec<AaBox>) -> Result<Self> {
        for b in &boxes {
            if b.dim() != dim {
                return Err(KfpError::DimensionMismatch(format!(
                    "box of dimension {} in a {dim}-dimensional set",
                    b.dim()
                )));
            }
        }
        for i in 0..boxes.len() {
            for j in 0..i {
                if boxes[i].overlap_volume(&boxes[j]) > 0.0 {
                    return Err(KfpError::InvalidParameter(format!("boxes {j} and {i} overlap")));
                }
            }
        }
        let boxes = boxes.into_iter().filter(|b| b.volume() > 0.0).collect();
        Ok(Self {
            dim,
            kind: RegionKind::Boxes { boxes },
        })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(KfpError::InvalidParameter(format!("ball radius {radius}")));
        }
        Ok(Self {
            dim: center.len(),
            kind: RegionKind::Ball { center, radius },
        })
    }

    pub fn unit_square() -> Self {
        Self::from_box(AaBox::cube(2, 1.0))
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            RegionKind::Boxes { boxes } => boxes.iter().map(AaBox::volume).sum(),
            RegionKind::Ball { radius, .. } => unit_ball_volume(self.dim) * radius.powi(self.dim as i32),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.volume() == 0.0
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.kind {
            RegionKind::Boxes { boxes } => boxes.iter().any(|b| b.contains(x)),
            RegionKind::Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 < radius * radius
            }
        }
    }

    pub fn bounding_box(&self) -> Option<AaBox> {
        match &self.kind {
            RegionKind::Boxes { boxes } => {
                let mut it = boxes.iter();
                let first = it.next()?.clone();
                Some(it.fold(first, |acc, b| acc.hull(b)))
            }
            RegionKind::Ball { center, radius } => Some(AaBox {
                lo: center.iter().map(|c| c - radius).collect(),
                hi: center.iter().map(|c| c + radius).collect(),
            }),
        }
    }

    pub fn boxes(&self) -> Option<&[AaBox]> {
        match &self.kind {
            RegionKind::Boxes { boxes } => Some(boxes),
            RegionKind::Ball { .. } => None,
        }
    }

    /// Image under `X ↦ λ X`.
    pub fn scaled(&self, lambda: f64) -> Self {
        self.dilated(&vec![lambda; self.dim])
    }

    /// Image under the diagonal map `X ↦ diag(factors) X` (boxes only; a ball
    /// is scaled by the first factor).
    pub fn dilated(&self, factors: &[f64]) -> Self {
        let kind = match &self.kind {
            RegionKind::Boxes { boxes } => RegionKind::Boxes {
                boxes: boxes.iter().map(|b| b.dilated(factors)).collect(),
            },
            RegionKind::Ball { center, radius } => RegionKind::Ball {
                center: center.iter().map(|c| c * factors[0]).collect(),
                radius: radius * factors[0],
            },
        };
        Self { dim: self.dim, kind }
    }
}

/// Weighted Gaussian bump `w·exp(−½(Y−μ)ᵀΣ⁻¹(Y−μ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTerm {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub prec: DMatrix<f64>,
    pub det_cov: f64,
}

impl GaussianTerm {
    pub fn new(weight: f64, mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(KfpError::DimensionMismatch(format!(
                "covariance is {}x{} for a mean of length {n}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !weight.is_finite() {
            return Err(KfpError::InvalidParameter(format!("mixture weight {weight}")));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| KfpError::InvalidParameter("mixture covariance is not SPD".into()))?;
        let det_cov = chol.l().diagonal().iter().map(|d| d * d).product();
        let prec = chol.inverse();
        Ok(Self {
            weight,
            mean: DVector::from_vec(mean),
            cov,
            prec,
            det_cov,
        })
    }

    /// Isotropic bump `w·exp(−|Y−μ|²/(2σ²))`.
    pub fn isotropic(weight: f64, mean: Vec<f64>, sigma2: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(weight, mean, DMatrix::identity(n, n) * sigma2)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        self.weight * (-0.5 * r.dot(&(&self.prec * &r))).exp()
    }

    /// `∫ term = w (2π)^{N/2} det(Σ)^{1/2}`.
    pub fn integral(&self) -> f64 {
        let n = self.mean.len() as f64;
        self.weight * (2.0 * std::f64::consts::PI).powf(n / 2.0) * self.det_cov.sqrt()
    }

    /// `∫ |term|^p = |w|^p (2π/p)^{N/2} det(Σ)^{1/2}`.
    pub fn lp_power(&self, p: f64) -> f64 {
        let n = self.mean.len() as f64;
        self.weight.abs().powf(p) * (2.0 * std::f64::consts::PI / p).powf(n / 2.0) * self.det_cov.sqrt()
    }
}

/// `constant + Σ_k term_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub dim: usize,
    pub constant: f64,
    pub terms: Vec<GaussianTerm>,
}

impl GaussianMixture {
    pub fn new(dim: usize, constant: f64, terms: Vec<GaussianTerm>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.mean.len() != dim) {
            return Err(KfpError::DimensionMismatch(format!(
                "mixture term of dimension {} in a {dim}-dimensional mixture",
                t.mean.len()
            )));
        }
        Ok(Self { dim, constant, terms })
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self {
            dim,
            constant: c,
            terms: Vec::new(),
        }
    }

    /// `w·exp(−|Y|²/2)`.
    pub fn standard(dim: usize, weight: f64) -> Self {
        Self {
            dim,
            constant: 0.0,
            terms: vec![GaussianTerm::isotropic(weight, vec![0.0; dim], 1.0).unwrap()],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Upper bound for `sup |f|`.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.terms.iter().map(|t| t.weight.abs()).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.constant *= c;
        for t in out.terms.iter_mut() {
            t.weight *= c;
        }
        out
    }

    pub fn plus(&self, other: &GaussianMixture) -> Self {
        let mut out = self.clone();
        out.constant += other.constant;
        out.terms.extend(other.terms.iter().cloned());
        out
    }
}

/// Piecewise-constant field on a uniform grid of cells over a box, zero
/// outside. Cell `(i_0, …, i_{N−1})` is stored at `i_0 + n_0 (i_1 + n_1 (…))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub domain: AaBox,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(domain: AaBox, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.len() != domain.dim() {
            return Err(KfpError::DimensionMismatch(format!(
                "grid shape {shape:?} for a {}-dimensional box",
                domain.dim()
            )));
        }
        if shape.iter().any(|&n| n < 2) {
            return Err(KfpError::InvalidParameter(format!("grid shape {shape:?} below 2 per axis")));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(KfpError::DimensionMismatch(format!(
                "{} grid values for shape {shape:?}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KfpError::InvalidParameter("grid values must be finite".into()));
        }
        Ok(Self { domain, shape, values })
    }

    /// Sample `f` at cell centres.
    pub fn from_fn(domain: AaBox, shape: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut x = vec![0.0; shape.len()];
        for idx in 0..total {
            Self::center_into(&domain, &shape, idx, &mut x);
            values.push(f(&x));
        }
        Self::new(domain, shape, values)
    }

    /// Pyramid of height 1 on a square/cube: `1 − ‖2(X − c)/side‖_∞`.
    pub fn tent(domain: AaBox, cells_per_axis: usize) -> Result<Self> {
        let c: Vec<f64> = domain.lo.iter().zip(&domain.hi).map(|(a, b)| (a + b) / 2.0).collect();
        let half: Vec<f64> = domain.lo.iter().zip(&domain.hi).map(|(a, b)| (b - a) / 2.0).collect();
        let shape = vec![cells_per_axis; domain.dim()];
        Self::from_fn(domain, shape, |x| {
            let m = x
                .iter()
                .zip(c.iter().zip(&half))
                .map(|(v, (c, h))| ((v - c) / h).abs())
                .fold(0.0, f64::max);
            (1.0 - m).max(0.0)
        })
    }

    /// Nested boxes `outer ⊃ … ⊃ inner`, value = number of boxes containing the cell.
    pub fn staircase(domain: AaBox, nested: &[AaBox], cells_per_axis: usize) -> Result<Self> {
        let shape = vec![cells_per_axis; domain.dim()];
        Self::from_fn(domain, shape, |x| nested.iter().filter(|b| b.contains(x)).count() as f64)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn cell_size(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| (self.domain.hi[k] - self.domain.lo[k]) / self.shape[k] as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_size().iter().product()
    }

    fn center_into(domain: &AaBox, shape: &[usize], mut idx: usize, out: &mut [f64]) {
        for k in 0..shape.len() {
            let i = idx % shape[k];
            idx /= shape[k];
            let h = (domain.hi[k] - domain.lo[k]) / shape[k] as f64;
            out[k] = domain.lo[k] + (i as f64 + 0.5) * h;
        }
    }

    pub fn cell_center(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        Self::center_into(&self.domain, &self.shape, idx, &mut x);
        x
    }

    pub fn cell_box(&self, idx: usize) -> AaBox {
        let h = self.cell_size();
        let c = self.cell_center(idx);
        AaBox {
            lo: c.iter().zip(&h).map(|(c, h)| c - h / 2.0).collect(),
            hi: c.iter().zip(&h).map(|(c, h)| c + h / 2.0).collect(),
        }
    }

    /// Index of the cell containing `x`, if inside the domain.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            let (a, b) = (self.domain.lo[k], self.domain.hi[k]);
            if !(x[k] >= a && x[k] < b) {
                return None;
            }
            let i = (((x[k] - a) / (b - a)) * self.shape[k] as f64) as usize;
            idx += i.min(self.shape[k] - 1) * stride;
            stride *= self.shape[k];
        }
        Some(idx)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.locate(x).map_or(0.0, |i| self.values[i])
    }

    /// Distinct values, ascending.
    pub fn levels(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// `{f ≥ v}` as a disjoint union of boxes. In 2-D, runs of cells along the
    /// first axis are merged and identical runs in consecutive rows are stacked.
    pub fn superlevel_set(&self, v: f64) -> RegionSet {
        let n0 = self.shape[0];
        let rows = self.values.len() / n0;
        let h = self.cell_size();
        let mut runs_per_row: Vec<Vec<(usize, usize)>> = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &self.values[r * n0..(r + 1) * n0];
            let mut runs = Vec::new();
            let mut i = 0;
            while i < n0 {
                if row[i] >= v {
                    let start = i;
                    while i < n0 && row[i] >= v {
                        i += 1;
                    }
                    runs.push((start, i));
                } else {
                    i += 1;
                }
            }
            runs_per_row.push(runs);
        }
        let mut boxes = Vec::new();
        let make = |run: (usize, usize), r0: usize, r1: usize| -> AaBox {
            let mut lo = vec![0.0; self.dim()];
            let mut hi = vec![0.0; self.dim()];
            lo[0] = self.domain.lo[0] + run.0 as f64 * h[0];
            hi[0] = self.domain.lo[0] + run.1 as f64 * h[0];
            if self.dim() == 2 {
                lo[1] = self.domain.lo[1] + r0 as f64 * h[1];
                hi[1] = self.domain.lo[1] + r1 as f64 * h[1];
            } else {
                // Row index spans axes 1..N; each row is one cell thick.
                let mut rest = r0;
                for k in 1..self.dim() {
                    let i = rest % self.shape[k];
                    rest /= self.shape[k];
                    lo[k] = self.domain.lo[k] + i as f64 * h[k];
                    hi[k] = lo[k] + h[k];
                }
            }
            AaBox { lo, hi }
        };
        if self.dim() == 2 {
            // Open rectangles keyed by run; extend while the next row repeats it.
            let mut open: Vec<((usize, usize), usize)> = Vec::new();
            for r in 0..=rows {
                let current: &[(usize, usize)] = if r < rows { &runs_per_row[r] } else { &[] };
                let mut still = Vec::new();
                for &(run, start) in &open {
                    if current.contains(&run) {
                        still.push((run, start));
                    } else {
                        boxes.push(make(run, start, r));
                    }
                }
                for &run in current {
                    if !still.iter().any(|(q, _)| *q == run) {
                        still.push((run, r));
                    }
                }
                open = still;
            }
        } else {
            for (r, runs) in runs_per_row.iter().enumerate() {
                for &run in runs {
                    boxes.push(make(run, r, r + 1));
                }
            }
        }
        RegionSet {
            dim: self.dim(),
            kind: RegionKind::Boxes { boxes },
        }
    }

    pub fn lp_power(&self, p: f64) -> f64 {
        self.cell_volume() * self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>()
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            domain: self.domain.clone(),
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Opaque evaluator with optional support box.
#[derive(Clone)]
pub struct CallableField {
    pub dim: usize,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub support: Option<AaBox>,
    pub sup_abs: f64,
}

impl fmt::Debug for CallableField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallableField")
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("sup_abs", &self.sup_abs)
            .finish()
    }
}

/// A function on ℝ^N in one of the supported backends.
#[derive(Debug, Clone)]
pub enum ScalarField {
    Mixture(GaussianMixture),
    Grid(GridField),
    Indicator(RegionSet),
    Callable(CallableField),
}

impl ScalarField {
    pub fn dim(&self) -> usize {
        match self {
            ScalarField::Mixture(m) => m.dim,
            ScalarField::Grid(g) => g.dim(),
            ScalarField::Indicator(r) => r.dim,
            ScalarField::Callable(c) => c.dim,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Mixture(m) => m.eval(x),
            ScalarField::Grid(g) => g.eval(x),
            ScalarField::Indicator(r) => {
                if r.contains(x) {
                    1.0
                } else {
                    0.0
                }
            }
            ScalarField::Callable(c) => (c.f)(x),
        }
    }

    /// Bounding box of the support, `None` when unbounded.
    pub fn support(&self) -> Option<AaBox> {
        match self {
            ScalarField::Mixture(_) => None,
            ScalarField::Grid(g) => Some(g.domain.clone()),
            ScalarField::Indicator(r) => r.bounding_box(),
            ScalarField::Callable(c) => c.support.clone(),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        match self {
            ScalarField::Mixture(m) => m.sup_bound(),
            ScalarField::Grid(g) => g.values.iter().fold(0.0, |a, v| a.max(v.abs())),
            ScalarField::Indicator(r) => {
                if r.is_empty() {
                    0.0
                } else {
                    1.0
                }
            }
            ScalarField::Callable(c) => c.sup_abs,
        }
    }

    /// Grid view for level-set computations: grids as is, indicators of box
    /// unions as a 0/1 grid aligned with the box corners.
    pub fn as_grid(&self) -> Result<GridField> {
        match self {
            ScalarField::Grid(g) => Ok(g.clone()),
            ScalarField::Indicator(r) => indicator_grid(r),
            _ => Err(KfpError::UnsupportedBackend("level sets need a grid or indicator field")),
        }
    }
}

/// Exact 0/1 grid for a union of boxes whose corners lie on a common lattice.
fn indicator_grid(r: &RegionSet) -> Result<GridField> {
    let bb = r.bounding_box().ok_or(KfpError::UnboundedSupport)?;
    let boxes = r.boxes().ok_or(KfpError::UnsupportedBackend("ball indicators have no exact grid"))?;
    let mut shape = Vec::with_capacity(r.dim);
    for k in 0..r.dim {
        let width = bb.hi[k] - bb.lo[k];
        let mut h = width;
        for b in boxes {
            for v in [b.lo[k] - bb.lo[k], b.hi[k] - bb.lo[k]] {
                if v > 1e-12 * width {
                    h = gcd_f64(h, v, 1e-9 * width);
                }
            }
        }
        shape.push(((width / h).round() as usize).max(2));
    }
    GridField::from_fn(bb, shape, |x| if r.contains(x) { 1.0 } else { 0.0 })
}

fn gcd_f64(mut a: f64, mut b: f64, tol: f64) -> f64 {
    while b > tol {
        let r = a % b;
        a = b;
        b = if r > tol && b - r > tol { r } else { 0.0 };
    }
    a
}
