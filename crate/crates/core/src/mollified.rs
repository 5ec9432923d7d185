//! `‖(−𝒜)^s P_τ 𝟏_E‖₁` for planar box unions, and the quantities built on it.
//!
//! `P_τ 𝟏_E` is smooth, so `(−𝒜)^s` of it converges pointwise. Every
//! `P_t 𝟏_E(X)` is an exact bivariate normal rectangle probability. The outer
//! integral runs in `X' = e^{τB} X`, where the smoothing layers of `P_τ 𝟏_E`
//! are axis-aligned and a tensor rule graded toward the box edges resolves them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::field::{AaBox, RegionKind, RegionSet};
use crate::nonlocal::{FractionalParams, Valued};
use crate::quadrature::{gauss_legendre, TimeQuadrature};
use crate::special::bvn_rectangle;
use crate::Spec;

/// Resolution of the mollified-indicator norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifiedRule {
    pub t_min: f64,
    pub t_max: f64,
    pub panels_per_decade: usize,
    pub t_order: usize,
    pub x_order: usize,
    /// Ratio between consecutive panel widths moving away from an edge.
    pub grading: f64,
    /// Width of the panels touching an edge, in smoothing-layer widths.
    pub finest: f64,
    /// Padding of the integration box, in smoothing-layer widths.
    pub pad: f64,
}

impl Default for MollifiedRule {
    fn default() -> Self {
        Self {
            t_min: 1e-10,
            t_max: 1e6,
            panels_per_decade: 1,
            t_order: 6,
            x_order: 6,
            grading: 6.0,
            finest: 0.25,
            pad: 8.0,
        }
    }
}

impl MollifiedRule {
    fn coarser(&self) -> Self {
        Self {
            t_order: self.t_order - 2,
            x_order: self.x_order - 2,
            ..*self
        }
    }
}

/// Law of `P_{t+τ}` seen from `X'`: mean `e^{tB} X'`, marginal deviations and correlation.
struct Slice {
    prop: [[f64; 2]; 2],
    sd: [f64; 2],
    rho: f64,
}

impl Slice {
    fn new(spec: &Spec, t: f64, total: f64) -> Result<Option<Self>> {
        let prop = match spec.propagator(t) {
            Ok(p) => p,
            Err(KfpError::OverflowRegime(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let c = match spec.gramian(total) {
            Ok(p) => p.gramian_t,
            Err(KfpError::OverflowRegime(_)) => return Ok(None),
            Err(KfpError::SingularGramian { .. }) if total > 1.0 && spec.is_hypoelliptic() => return Ok(None),
            Err(e) => return Err(e),
        };
        let sd = [(2.0 * c[(0, 0)]).sqrt(), (2.0 * c[(1, 1)]).sqrt()];
        if !(sd[0].is_finite() && sd[1].is_finite() && prop.iter().all(|v| v.is_finite())) {
            return Ok(None);
        }
        Ok(Some(Self {
            prop: [[prop[(0, 0)], prop[(0, 1)]], [prop[(1, 0)], prop[(1, 1)]]],
            sd,
            rho: (c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt()).clamp(-1.0, 1.0),
        }))
    }

    fn prob(&self, x: [f64; 2], boxes: &[AaBox]) -> f64 {
        let m0 = self.prop[0][0] * x[0] + self.prop[0][1] * x[1];
        let m1 = self.prop[1][0] * x[0] + self.prop[1][1] * x[1];
        boxes
            .iter()
            .map(|b| {
                bvn_rectangle(
                    (b.lo[0] - m0) / self.sd[0],
                    (b.hi[0] - m0) / self.sd[0],
                    (b.lo[1] - m1) / self.sd[1],
                    (b.hi[1] - m1) / self.sd[1],
                    self.rho,
                )
            })
            .sum()
    }
}

/// Panel edges on one axis: every box edge, plus geometric refinement toward it.
fn graded_breaks(edges: &[f64], layer: f64, rule: &MollifiedRule) -> Vec<f64> {
    let lo = edges.iter().cloned().fold(f64::INFINITY, f64::min) - rule.pad * layer;
    let hi = edges.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + rule.pad * layer;
    let mut out = vec![lo, hi];
    for &e in edges {
        out.push(e);
        let mut d = rule.finest * layer;
        while d < hi - lo {
            for p in [e - d, e + d] {
                if p > lo && p < hi {
                    out.push(p);
                }
            }
            d *= rule.grading;
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
    out
}

fn axis_nodes(breaks: &[f64], order: usize) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(order);
    let mut out = Vec::with_capacity(breaks.len() * order);
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, wt) in &gl {
            out.push((c + h * x, h * wt));
        }
    }
    out
}

fn boxes_of(set: &RegionSet) -> Result<&[AaBox]> {
    match (&set.kind, set.dim) {
        (RegionKind::Boxes { boxes }, 2) => Ok(boxes),
        _ => Err(KfpError::UnsupportedBackend("mollified indicator norms (planar box unions only)")),
    }
}

fn positive_part_integral(spec: &Spec, s: f64, tau: f64, boxes: &[AaBox], rule: &MollifiedRule) -> Result<f64> {
    let base = spec.gramian(tau)?.gramian_t;
    let layer = [(2.0 * base[(0, 0)]).sqrt(), (2.0 * base[(1, 1)]).sqrt()];
    let here = Slice::new(spec, 0.0, tau)?.expect("gramian at tau is finite");
    let quad = TimeQuadrature::log_spaced(rule.t_min, rule.t_max, rule.panels_per_decade, rule.t_order);
    let mut slices = Vec::with_capacity(quad.nodes.len());
    for &(t, w) in &quad.nodes {
        slices.push((w * t.powf(-1.0 - s), Slice::new(spec, t, t + tau)?));
    }
    let lo_slice = Slice::new(spec, rule.t_min, rule.t_min + tau)?;
    let hi_slice = Slice::new(spec, rule.t_max, rule.t_max + tau)?;

    let axis = |k: usize| {
        let mut edges: Vec<f64> = boxes.iter().flat_map(|b| [b.lo[k], b.hi[k]]).collect();
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup();
        axis_nodes(&graded_breaks(&edges, layer[k], rule), rule.x_order)
    };
    let (ax0, ax1) = (axis(0), axis(1));
    // Integrand of ∫ t^{-1-s} (P_τ − P_{t+τ}) dt at X', plus the two truncated ends.
    let g = |x: [f64; 2]| -> f64 {
        let p0 = here.prob(x, boxes);
        let mut acc = 0.0;
        for (w, sl) in &slices {
            let p = sl.as_ref().map_or(0.0, |sl| sl.prob(x, boxes));
            acc += w * (p0 - p);
        }
        let p_lo = lo_slice.as_ref().map_or(0.0, |sl| sl.prob(x, boxes));
        acc += (p0 - p_lo) * rule.t_min.powf(-s) / (1.0 - s);
        let p_hi = hi_slice.as_ref().map_or(0.0, |sl| sl.prob(x, boxes));
        acc + (p0 - p_hi) * rule.t_max.powf(-s) / s
    };
    let rows: Vec<f64> = ax0
        .par_iter()
        .map(|&(x0, w0)| w0 * ax1.iter().map(|&(x1, w1)| w1 * g([x0, x1]).max(0.0)).sum::<f64>())
        .collect();
    Ok(rows.iter().sum())
}

/// `‖(−𝒜)^s P_τ 𝟏_E‖₁` for a planar union of boxes.
///
/// Uses `‖g‖₁ = 2∫g₊ − ∫g` with `∫g = (tr B)^s e^{−τ tr B}|E|`; `g₊` lives
/// within a few smoothing layers of `E`. The error is the change under rules
/// two orders lower in both `t` and `X`.
pub fn mollified_norm(spec: &Spec, params: &FractionalParams, set: &RegionSet, tau: f64) -> Result<Valued> {
    mollified_norm_on(spec, params, set, tau, &MollifiedRule::default())
}

pub fn mollified_norm_on(
    spec: &Spec,
    params: &FractionalParams,
    set: &RegionSet,
    tau: f64,
    rule: &MollifiedRule,
) -> Result<Valued> {
    let tr = spec.trace_b();
    if tr < 0.0 {
        return Err(KfpError::TraceConditionViolated(tr));
    }
    if !(tau > 0.0) {
        return Err(KfpError::InvalidParameter(format!("mollification time must be positive, got {tau}")));
    }
    let boxes = boxes_of(set)?;
    if set.volume() == 0.0 {
        return Ok(Valued::exact(0.0, 0.0));
    }
    let s = params.s;
    // dX = e^{−τ tr B} dX'
    let jac = (-tau * tr).exp();
    let total = tr.powf(s) * jac * set.volume();
    let fine = positive_part_integral(spec, s, tau, boxes, rule)?;
    let coarse = positive_part_integral(spec, s, tau, boxes, &rule.coarser())?;
    let c = params.gamma_factor * jac;
    Ok(Valued::exact(2.0 * c * fine - total, 2.0 * c * (fine - coarse).abs()))
}

/// Values along a decreasing sequence of times with their extrapolated limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub limit_estimate: f64,
    pub limit_error: f64,
}

fn decreasing(t_seq: &[f64]) -> Result<()> {
    if t_seq.is_empty() || t_seq.windows(2).any(|w| !(w[1] < w[0])) || t_seq.iter().any(|&t| !(t > 0.0)) {
        return Err(KfpError::InvalidParameter("times must be positive and strictly decreasing".into()));
    }
    Ok(())
}

fn extrapolate(times: &[f64], values: Vec<f64>, errors: Vec<f64>, s: f64) -> Extrapolated {
    let (limit_estimate, limit_error) = richardson(times, &values, [0.5 - s, 1.0 - s]);
    Extrapolated {
        times: times.to_vec(),
        values,
        errors,
        limit_estimate,
        limit_error,
    }
}

/// Cross-route form of the perimeter, `(Γ(1−s)/s) ‖(−𝒜)^s P_τ 𝟏_E‖₁`, at each
/// `τ` of a decreasing sequence, extrapolated to `τ → 0`.
pub fn perimeter_via_fractional_power(
    spec: &Spec,
    params: &FractionalParams,
    set: &RegionSet,
    taus: &[f64],
) -> Result<Extrapolated> {
    decreasing(taus)?;
    let k = 1.0 / params.gamma_factor;
    let mut values = Vec::with_capacity(taus.len());
    let mut errors = Vec::with_capacity(taus.len());
    for &tau in taus {
        let v = mollified_norm(spec, params, set, tau)?;
        values.push(k * v.value);
        errors.push(k * v.error);
    }
    Ok(extrapolate(taus, values, errors, params.s))
}

/// `‖(−𝒜)^s P_t 𝟏_E‖₁` along a decreasing `t_seq`, with its limit.
///
/// `t ↦ ‖(−𝒜)^s P_t 𝟏_E‖₁` is non-increasing, so along a decreasing `t_seq`
/// the values must not drop by more than three times their combined error.
pub fn perimeter_star(spec: &Spec, params: &FractionalParams, set: &RegionSet, t_seq: &[f64]) -> Result<Extrapolated> {
    if params.s >= 0.5 {
        return Err(KfpError::InvalidParameter(format!("perimeters need s in (0, 1/2), got {}", params.s)));
    }
    decreasing(t_seq)?;
    let mut values = Vec::with_capacity(t_seq.len());
    let mut errors = Vec::with_capacity(t_seq.len());
    for &t in t_seq {
        let v = mollified_norm(spec, params, set, t)?;
        values.push(v.value);
        errors.push(v.error);
    }
    for i in 1..values.len() {
        let drop = values[i - 1] - values[i];
        let tol = 3.0 * (errors[i - 1] + errors[i]);
        if drop > tol {
            return Err(KfpError::MonotonicityViolation {
                index: i,
                detail: format!(
                    "value fell from {} at t={} to {} at t={} (tolerance {tol:e})",
                    values[i - 1],
                    t_seq[i - 1],
                    values[i],
                    t_seq[i]
                ),
            });
        }
    }
    Ok(extrapolate(t_seq, values, errors, params.s))
}

/// Limit of `v(t) = L + a t^{e₀} + b t^{e₁} + …` as `t → 0`. Flat box edges
/// perturb the norm at order `t^{1/2−s}`, corners and transported edges at
/// `t^{1−s}`. Fits through the last three points; the error is the change
/// against the previous three, or against a single-exponent fit when only
/// three points exist.
fn richardson(t: &[f64], v: &[f64], e: [f64; 2]) -> (f64, f64) {
    let n = v.len();
    match n {
        1 => (v[0], f64::INFINITY),
        2 => (one_term(&t[..2], &v[..2], e[0]), f64::INFINITY),
        _ => {
            let last = two_term(&t[n - 3..], &v[n - 3..], e);
            let other = if n >= 4 {
                two_term(&t[n - 4..n - 1], &v[n - 4..n - 1], e)
            } else {
                one_term(&t[1..], &v[1..], e[0])
            };
            (last, (last - other).abs())
        }
    }
}

fn one_term(t: &[f64], v: &[f64], e: f64) -> f64 {
    let (h0, h1) = (t[0].powf(e), t[1].powf(e));
    (v[1] * h0 - v[0] * h1) / (h0 - h1)
}

fn two_term(t: &[f64], v: &[f64], e: [f64; 2]) -> f64 {
    let m = nalgebra::Matrix3::from_fn(|i, j| if j == 0 { 1.0 } else { t[i].powf(e[j - 1]) });
    let rhs = nalgebra::Vector3::new(v[0], v[1], v[2]);
    m.lu().solve(&rhs).map_or(f64::NAN, |c| c[0])
}
