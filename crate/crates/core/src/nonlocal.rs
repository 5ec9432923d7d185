//! Fractional powers, potentials, heat-content deficits and nonlocal perimeters.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::field::{AaBox, RegionKind, RegionSet, ScalarField};
use crate::kernel::{apply_semigroup, generator_mixture, Method};
use crate::geometry::{minkowski_difference, Poly, Pt};
use crate::quadrature::{adaptive, TimeQuadrature};
use crate::sampling::{normal_expectation, SamplerState};
use crate::special::{gamma, norm_cdf, norm_interval, norm_pdf};
use crate::{Params, Spec};

/// Half-width of the standard normal window used by the exact deficit.
const Z_MAX: f64 = 9.0;

/// Monte Carlo draws for deficits without an exact backend.
pub const DEFICIT_SAMPLES: usize = 1 << 20;

/// Quadrature value with an error estimate and, for Monte Carlo, a 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valued {
    pub value: f64,
    pub error: f64,
    pub ci: Option<f64>,
}

impl Valued {
    pub fn exact(value: f64, error: f64) -> Self {
        Self { value, error, ci: None }
    }

    /// Error estimate, or the Monte Carlo half-width when that is larger.
    pub fn uncertainty(&self) -> f64 {
        self.error.max(self.ci.unwrap_or(0.0))
    }
}

/// `‖P_t 𝟏_E − 𝟏_E‖₁`.
///
/// Since `0 ≤ P_t 𝟏_E ≤ 1` and `∫ P_t 𝟏_E = e^{-t tr B}|E|`, the deficit is
/// `(e^{-t tr B} − 1)|E| + 2 E_z[|E| − h(z)]` where
/// `h(z) = |E ∩ e^{-tB}(E − Lz)|` and `LLᵀ = 2tK(t)`. For planar box unions
/// `h` is piecewise quadratic along every line, so the inner integral is
/// exact piece by piece and only the outer one is adaptive. When the support
/// of `h` is small in `z` (large `t`), `E_z h` is integrated over it directly.
pub fn heat_content_deficit(spec: &Spec, t: f64, set: &RegionSet, state: &mut SamplerState) -> Result<Valued> {
    if set.dim != spec.dim() {
        return Err(KfpError::DimensionMismatch(format!(
            "{}-dimensional set for a {}-dimensional operator",
            set.dim,
            spec.dim()
        )));
    }
    let mass = set.volume();
    if mass == 0.0 {
        return Ok(Valued::exact(0.0, 0.0));
    }
    // Past overflow P_t 𝟏_E is negligible on E and the deficit is at its limit.
    let spread = (1.0 + (-t * spec.trace_b()).exp()) * mass;
    let params = match spec.gramian(t) {
        Ok(p) => p,
        Err(KfpError::OverflowRegime(_)) => return Ok(Valued::exact(spread, 0.0)),
        Err(KfpError::SingularGramian { .. }) if t > 1.0 && spec.is_hypoelliptic() => {
            return Ok(Valued::exact(spread, 0.0))
        }
        Err(e) => return Err(e),
    };
    let loss = ((-t * spec.trace_b()).exp() - 1.0) * mass;
    match (&set.kind, spec.dim()) {
        (RegionKind::Boxes { boxes }, 2) => {
            let overlap = BoxOverlap::new(&params, boxes);
            if overlap.covers_window() {
                let u = overlap.expected_shortfall();
                Ok(Valued::exact((loss + 2.0 * u.value).max(0.0), 2.0 * u.error))
            } else {
                let h = overlap.expected_overlap();
                let full = (1.0 + (-t * spec.trace_b()).exp()) * mass;
                Ok(Valued::exact((full - 2.0 * h.value).max(0.0), 2.0 * h.error))
            }
        }
        _ => {
            let mc = shortfall_mc(&params, set, state);
            Ok(Valued {
                value: (loss + 2.0 * mc.mean).max(0.0),
                error: 0.0,
                ci: Some(2.0 * mc.half_width),
            })
        }
    }
}

/// Line `w·z = c` in the standard-normal coordinates.
#[derive(Debug, Clone, Copy)]
struct Line {
    w: Pt,
    c: f64,
}

struct BoxOverlap {
    rects: Vec<Poly>,
    /// `e^{-tB}` images of the boxes.
    images: Vec<Poly>,
    /// `M = e^{-tB} L`, row-major.
    m: [[f64; 2]; 2],
    mass: f64,
    /// Lines on which `h` changes its quadratic piece, with `w₂ ≠ 0`.
    slanted: Vec<Line>,
    /// `z₁` positions of the lines parallel to the `z₂` axis.
    vertical: Vec<f64>,
    /// Per box pair, the `z`-polygon on which that pair overlaps.
    supports: Vec<Poly>,
}

impl BoxOverlap {
    fn new(params: &Params, boxes: &[AaBox]) -> Self {
        let e = &params.propagator;
        let det = e[(0, 0)] * e[(1, 1)] - e[(0, 1)] * e[(1, 0)];
        let inv = [[e[(1, 1)] / det, -e[(0, 1)] / det], [-e[(1, 0)] / det, e[(0, 0)] / det]];
        let l = &params.chol;
        let m = [
            [inv[0][0] * l[(0, 0)] + inv[0][1] * l[(1, 0)], inv[0][0] * l[(0, 1)] + inv[0][1] * l[(1, 1)]],
            [inv[1][0] * l[(0, 0)] + inv[1][1] * l[(1, 0)], inv[1][0] * l[(0, 1)] + inv[1][1] * l[(1, 1)]],
        ];
        let rects: Vec<Poly> = boxes.iter().map(|b| Poly::rect([b.lo[0], b.lo[1]], [b.hi[0], b.hi[1]])).collect();
        let images: Vec<Poly> = rects.iter().map(|r| r.affine(inv, [0.0, 0.0])).collect();
        let mass = boxes.iter().map(AaBox::volume).sum();
        let det_m = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let m_inv = [[m[1][1] / det_m, -m[0][1] / det_m], [-m[1][0] / det_m, m[0][0] / det_m]];
        let supports = images
            .iter()
            .flat_map(|p| rects.iter().map(move |r| minkowski_difference(p, r)))
            .map(|d| d.affine(m_inv, [0.0, 0.0]))
            .collect();
        let mut out = Self {
            rects,
            images,
            m,
            mass,
            slanted: Vec::new(),
            vertical: Vec::new(),
            supports,
        };
        out.collect_lines();
        out
    }

    /// Whether the overlap support contains the whole `±Z_MAX` window,
    /// in which case the shortfall form avoids a cancellation.
    fn covers_window(&self) -> bool {
        let corners = [[-Z_MAX, -Z_MAX], [Z_MAX, -Z_MAX], [Z_MAX, Z_MAX], [-Z_MAX, Z_MAX]];
        self.supports.iter().any(|p| {
            corners
                .iter()
                .all(|c| p.vertical_section(c[0]).is_some_and(|(lo, hi)| lo <= c[1] && c[1] <= hi))
        })
    }

    /// `∫ h(z₁, z₂) φ(z₂) dz₂` restricted to the support sections.
    fn inner_overlap(&self, z1: f64) -> f64 {
        let sections: Vec<(f64, f64)> = self
            .supports
            .iter()
            .filter_map(|p| p.vertical_section(z1))
            .map(|(lo, hi)| (lo.max(-Z_MAX), hi.min(Z_MAX)))
            .filter(|(lo, hi)| lo < hi)
            .collect();
        if sections.is_empty() {
            return 0.0;
        }
        let lo = sections.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = sections.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let mut cuts: Vec<f64> = self
            .slanted
            .iter()
            .map(|l| (l.c - l.w[0] * z1) / l.w[1])
            .chain(sections.iter().flat_map(|s| [s.0, s.1]))
            .filter(|z| *z >= lo && *z <= hi)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (1.0 + b.abs()));
        let mut sum = 0.0;
        let mut f_lo = self.overlap([z1, cuts[0]]);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let f_hi = self.overlap([z1, b]);
            if sections.iter().any(|s| s.0 <= mid && mid <= s.1) {
                let f_mid = self.overlap([z1, mid]);
                sum += quadratic_normal_integral(a, b, f_lo, f_mid, f_hi);
            }
            f_lo = f_hi;
        }
        sum
    }

    /// `E_z[h(z)]` over the support polygons.
    fn expected_overlap(&self) -> crate::quadrature::Estimate {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut breaks = self.vertical.clone();
        for p in &self.supports {
            let (a, b) = p.bbox();
            lo = lo.min(a[0]);
            hi = hi.max(b[0]);
            breaks.extend(p.points().iter().map(|q| q[0]));
        }
        let (lo, hi) = (lo.max(-Z_MAX), hi.min(Z_MAX));
        if lo >= hi {
            return crate::quadrature::Estimate { value: 0.0, error: 0.0 };
        }
        // Strongly sheared images put vertices far from the boxes, and each
        // overlap then carries rounding of order eps·span·diameter.
        let span = self
            .images
            .iter()
            .flat_map(|p| p.points().iter().flat_map(|q| [q[0].abs(), q[1].abs()]))
            .fold(0.0, f64::max);
        let diam = self
            .rects
            .iter()
            .map(|r| {
                let (a, b) = r.bbox();
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .fold(0.0, f64::max);
        let floor = 64.0 * f64::EPSILON * span * diam;
        let mut est = adaptive(
            |z1| self.inner_overlap(z1) * norm_pdf(z1),
            lo,
            hi,
            &breaks,
            // The deficit is O(|E|) whenever this path is taken.
            1e-12 * self.mass + floor,
            1e-10,
            4000,
        );
        est.error += floor;
        est
    }

    /// Vertex–edge incidence lines in translation space `v = Mz`, pulled
    /// back to `z`. The overlap `|R ∩ (P − v)|` is quadratic in `v` on every
    /// cell of this arrangement.
    fn collect_lines(&mut self) {
        let mut raw: Vec<(Pt, f64)> = Vec::new();
        for r in &self.rects {
            let (lo, hi) = r.bbox();
            for p in &self.images {
                for q in p.points() {
                    for k in 0..2 {
                        let mut n = [0.0; 2];
                        n[k] = 1.0;
                        raw.push((n, q[k] - lo[k]));
                        raw.push((n, q[k] - hi[k]));
                    }
                }
                let pts = p.points();
                for i in 0..pts.len() {
                    let a = pts[i];
                    let b = pts[(i + 1) % pts.len()];
                    let n = [b[1] - a[1], a[0] - b[0]];
                    for e in r.points() {
                        raw.push((n, n[0] * (a[0] - e[0]) + n[1] * (a[1] - e[1])));
                    }
                }
            }
        }
        let m = self.m;
        for (n, c) in raw {
            // n·(Mz) = (Mᵀn)·z
            let w = [n[0] * m[0][0] + n[1] * m[1][0], n[0] * m[0][1] + n[1] * m[1][1]];
            let scale = w[0].abs().max(w[1].abs());
            if scale == 0.0 {
                continue;
            }
            if w[1].abs() <= 1e-13 * scale {
                let z1 = c / w[0];
                if z1.abs() < Z_MAX {
                    self.vertical.push(z1);
                }
            } else {
                self.slanted.push(Line { w, c });
            }
        }
    }

    fn overlap(&self, z: Pt) -> f64 {
        let v = [
            self.m[0][0] * z[0] + self.m[0][1] * z[1],
            self.m[1][0] * z[0] + self.m[1][1] * z[1],
        ];
        let mut total = 0.0;
        for p in &self.images {
            let moved = p.translate([-v[0], -v[1]]);
            let (plo, phi) = moved.bbox();
            for r in &self.rects {
                let (rlo, rhi) = r.bbox();
                if plo[0] >= rhi[0] || phi[0] <= rlo[0] || plo[1] >= rhi[1] || phi[1] <= rlo[1] {
                    continue;
                }
                total += moved.clip(r).area();
            }
        }
        total
    }

    fn shortfall(&self, z: Pt) -> f64 {
        (self.mass - self.overlap(z)).max(0.0)
    }

    /// `∫ (|E| − h(z₁, z₂)) φ(z₂) dz₂` over `ℝ`, exact up to the `±Z_MAX` truncation.
    fn inner(&self, z1: f64) -> f64 {
        let mut cuts: Vec<f64> = self
            .slanted
            .iter()
            .map(|l| (l.c - l.w[0] * z1) / l.w[1])
            .filter(|z| z.abs() < Z_MAX)
            .collect();
        cuts.push(-Z_MAX);
        cuts.push(Z_MAX);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (1.0 + b.abs()));
        let mut sum = self.mass * 2.0 * norm_cdf(-Z_MAX);
        let mut f_lo = self.shortfall([z1, cuts[0]]);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let f_hi = self.shortfall([z1, b]);
            let mid = 0.5 * (a + b);
            let f_mid = self.shortfall([z1, mid]);
            sum += quadratic_normal_integral(a, b, f_lo, f_mid, f_hi);
            f_lo = f_hi;
        }
        sum
    }

    /// `E_z[|E| − h(z)]`.
    fn expected_shortfall(&self) -> crate::quadrature::Estimate {
        let mut est = adaptive(
            |z1| self.inner(z1) * norm_pdf(z1),
            -Z_MAX,
            Z_MAX,
            &self.vertical,
            1e-15 * self.mass,
            1e-10,
            4000,
        );
        est.value += self.mass * 2.0 * norm_cdf(-Z_MAX);
        est
    }
}

/// `∫_a^b q(z) φ(z) dz` for the quadratic `q` through `(a, f_a)`, `(m, f_m)`, `(b, f_b)`, `m = (a+b)/2`.
fn quadratic_normal_integral(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    let m = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let beta = (fb - fa) / (2.0 * h);
    let gamma = (fb - 2.0 * fm + fa) / (2.0 * h * h);
    let i0 = norm_interval(a, b);
    let (pa, pb) = (norm_pdf(a), norm_pdf(b));
    let j1 = pa - pb;
    let j2 = i0 + a * pa - b * pb;
    let c1 = j1 - m * i0;
    let c2 = j2 - 2.0 * m * j1 + m * m * i0;
    fm * i0 + beta * c1 + gamma * c2
}

/// Uniform point of `set` from standard normal coordinates `u` (one extra
/// coordinate picks the box of a union, and one the radius of a ball).
fn uniform_point(set: &RegionSet, u: &[f64], out: &mut [f64]) {
    match &set.kind {
        RegionKind::Boxes { boxes } => {
            let total: f64 = boxes.iter().map(AaBox::volume).sum();
            let mut pick = norm_cdf(u[0]) * total;
            let mut chosen = boxes.last().unwrap();
            for b in boxes {
                if pick < b.volume() {
                    chosen = b;
                    break;
                }
                pick -= b.volume();
            }
            for k in 0..set.dim {
                out[k] = chosen.lo[k] + (chosen.hi[k] - chosen.lo[k]) * norm_cdf(u[1 + k]);
            }
        }
        RegionKind::Ball { center, radius } => {
            let dir = &u[1..1 + set.dim];
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let r = radius * norm_cdf(u[0]).powf(1.0 / set.dim as f64);
            for k in 0..set.dim {
                out[k] = center[k] + r * dir[k] / norm;
            }
        }
    }
}

/// `E_z[|E| − h(z)] = |E| · P(Y ∉ E)` with `X` uniform on `E` and `Y ~ N(e^{tB}X, 2tK(t))`.
fn shortfall_mc(params: &Params, set: &RegionSet, state: &mut SamplerState) -> crate::sampling::McEstimate {
    let n = set.dim;
    let mass = set.volume();
    let e = &params.propagator;
    let l = &params.chol;
    let mut est = normal_expectation(state, DEFICIT_SAMPLES, 1 + 2 * n, |u| {
        let mut x = vec![0.0; n];
        uniform_point(set, &u[..1 + n], &mut x);
        let z = &u[1 + n..];
        let y: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| e[(i, j)] * x[j] + l[(i, j)] * z[j]).sum())
            .collect();
        if set.contains(&y) {
            0.0
        } else {
            mass
        }
    });
    est.mean = est.mean.max(0.0);
    est
}

/// Order `s`, integrability `p`, and the constant `s/Γ(1−s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalParams {
    pub s: f64,
    pub p: f64,
    pub gamma_factor: f64,
}

impl FractionalParams {
    pub fn new(s: f64, p: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(KfpError::InvalidParameter(format!("order s must lie in (0, 1), got {s}")));
        }
        if !(p >= 1.0) {
            return Err(KfpError::InvalidParameter(format!("integrability p must be >= 1, got {p}")));
        }
        Ok(Self {
            s,
            p,
            gamma_factor: s / gamma(1.0 - s),
        })
    }

    fn require_perimeter(&self) -> Result<()> {
        if self.s >= 0.5 {
            return Err(KfpError::InvalidParameter(format!(
                "perimeters need s in (0, 1/2), got {}",
                self.s
            )));
        }
        Ok(())
    }
}

fn require_trace(spec: &Spec) -> Result<()> {
    let tr = spec.trace_b();
    if tr < 0.0 {
        return Err(KfpError::TraceConditionViolated(tr));
    }
    Ok(())
}

/// Time window and resolution of perimeter integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerimeterGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub panels_per_decade: usize,
    pub order: usize,
}

impl Default for PerimeterGrid {
    fn default() -> Self {
        Self {
            t_min: 1e-12,
            t_max: 1e8,
            panels_per_decade: 1,
            order: 8,
        }
    }
}

/// `∫ t^{-(1+s)} ‖P_t 𝟏_E − 𝟏_E‖₁ dt` with its pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerimeterValue {
    pub value: f64,
    /// Quadrature difference between two resolutions plus the tail uncertainties.
    pub error: f64,
    pub ci: Option<f64>,
    /// Estimated contribution of `(0, t_min)` from the fitted power law.
    pub small_time_remainder: f64,
    pub small_time_slope: f64,
    /// Estimated contribution of `(t_max, ∞)`.
    pub large_time_tail: f64,
    /// Certified bound `2|E| t_max^{-s}/s` on that contribution.
    pub large_time_bound: f64,
    /// `(t, integrand, cumulative)` on the finer rule.
    pub trace: Vec<(f64, f64, f64)>,
}

fn log_nodes(grid: &PerimeterGrid, panels_per_decade: usize) -> Vec<(f64, f64)> {
    TimeQuadrature::log_spaced(grid.t_min, grid.t_max, panels_per_decade, grid.order).nodes
}

/// Nonlocal `s`-perimeter of `set`.
pub fn perimeter(spec: &Spec, params: &FractionalParams, set: &RegionSet, state: &mut SamplerState) -> Result<PerimeterValue> {
    perimeter_on(spec, params, set, &PerimeterGrid::default(), state)
}

pub fn perimeter_on(
    spec: &Spec,
    params: &FractionalParams,
    set: &RegionSet,
    grid: &PerimeterGrid,
    state: &mut SamplerState,
) -> Result<PerimeterValue> {
    params.require_perimeter()?;
    require_trace(spec)?;
    let s = params.s;
    let mass = set.volume();
    if mass == 0.0 {
        return Ok(PerimeterValue {
            value: 0.0,
            error: 0.0,
            ci: None,
            small_time_remainder: 0.0,
            small_time_slope: f64::NAN,
            large_time_tail: 0.0,
            large_time_bound: 0.0,
            trace: Vec::new(),
        });
    }
    let exact = set.dim == 2 && matches!(set.kind, RegionKind::Boxes { .. });
    let deficit = |t: f64, label: u64| -> Result<Valued> {
        let mut st = state.fork(label);
        heat_content_deficit(spec, t, set, &mut st)
    };

    let d_lo = deficit(grid.t_min, 1)?.value;
    let d_lo10 = deficit(grid.t_min * 10.0, 2)?.value;
    let d_lo100 = deficit(grid.t_min * 100.0, 5)?.value;
    let slope = (d_lo10 / d_lo).ln() / 10f64.ln();
    let slope_drift = ((d_lo100 / d_lo10).ln() / 10f64.ln() - slope).abs();
    if !(slope > s) {
        return Err(KfpError::SlowSmallTimeDecay { slope, s });
    }
    let small = d_lo * grid.t_min.powf(-s) / (slope - s);

    let d_hi = deficit(grid.t_max, 3)?.value;
    let d_hi10 = deficit(grid.t_max / 10.0, 4)?.value;
    let large = d_hi * grid.t_max.powf(-s) / s;
    let large_bound = 2.0 * mass * grid.t_max.powf(-s) / s;

    let fine = log_nodes(grid, 2 * grid.panels_per_decade);
    let mut trace = Vec::with_capacity(fine.len());
    let mut cumulative = 0.0;
    let mut var = 0.0;
    for (i, &(t, w)) in fine.iter().enumerate() {
        let d = deficit(t, 100 + i as u64)?;
        let g = t.powf(-1.0 - s) * d.value;
        cumulative += w * g;
        if let Some(ci) = d.ci {
            var += (w * t.powf(-1.0 - s) * ci).powi(2);
        }
        trace.push((t, g, cumulative));
    }
    let fine_value = cumulative;
    let coarse_value = if exact {
        let mut sum = 0.0;
        for (i, &(t, w)) in log_nodes(grid, grid.panels_per_decade).iter().enumerate() {
            sum += w * t.powf(-1.0 - s) * deficit(t, 10_000 + i as u64)?.value;
        }
        sum
    } else {
        fine_value
    };
    let quad_err = (fine_value - coarse_value).abs();
    // Drift of the fitted small-time slope over the next decade, and the last
    // decade's change in the deficit for the large-time tail.
    let small_err = small * slope_drift / (slope - s - slope_drift).max(1e-3);
    let large_err = (d_hi - d_hi10).abs() * grid.t_max.powf(-s) / s;
    Ok(PerimeterValue {
        value: fine_value + small + large,
        error: quad_err + small_err + large_err,
        ci: (!exact).then(|| var.sqrt()),
        small_time_remainder: small,
        small_time_slope: slope,
        large_time_tail: large,
        large_time_bound: large_bound,
        trace,
    })
}

/// Value of `P_t f` far out in time: the mixture constant, or 0 for fields
/// with bounded support.
fn far_value(field: &ScalarField) -> f64 {
    match field {
        ScalarField::Mixture(m) => m.constant,
        _ => 0.0,
    }
}

/// `P_t f(X)`. Once the Gramian overflows or outgrows double precision every
/// Gaussian term has decayed below rounding and only the far value remains.
fn semigroup_at(spec: &Spec, field: &ScalarField, x: &[f64], t: f64, state: &mut SamplerState) -> Result<f64> {
    let params = match spec.gramian(t) {
        Ok(p) => p,
        Err(KfpError::OverflowRegime(_)) => return Ok(far_value(field)),
        Err(KfpError::SingularGramian { .. }) if t > 1.0 && spec.is_hypoelliptic() => return Ok(far_value(field)),
        Err(e) => return Err(e),
    };
    let method = match field {
        ScalarField::Mixture(_) => Method::Analytic,
        ScalarField::Grid(_) | ScalarField::Indicator(_) => Method::Quadrature,
        ScalarField::Callable(_) => {
            return Err(KfpError::UnsupportedBackend("fractional calculus needs a mixture, grid or indicator"))
        }
    };
    let v = apply_semigroup(spec, &params, field, x, method, state)?.value;
    if v.is_finite() {
        Ok(v)
    } else {
        Ok(far_value(field))
    }
}

/// `(−𝒜)^s f(X) = −(s/Γ(1−s)) ∫₀^∞ t^{-(1+s)} [P_t f(X) − f(X)] dt`.
///
/// Below `switch_taylor`, Gaussian mixtures use `P_t f − f ≈ t 𝒜f`, since the
/// direct difference loses every digit at very small `t`.
pub fn fractional_power(
    spec: &Spec,
    params: &FractionalParams,
    field: &ScalarField,
    x: &[f64],
    state: &mut SamplerState,
) -> Result<Valued> {
    fractional_power_on(spec, params, field, x, &TimeQuadrature::standard(), state)
}

pub fn fractional_power_on(
    spec: &Spec,
    params: &FractionalParams,
    field: &ScalarField,
    x: &[f64],
    quad: &TimeQuadrature,
    state: &mut SamplerState,
) -> Result<Valued> {
    require_trace(spec)?;
    if field.dim() != spec.dim() {
        return Err(KfpError::DimensionMismatch("field and operator dimensions differ".into()));
    }
    let bounded = match field {
        ScalarField::Mixture(_) => true,
        ScalarField::Grid(_) | ScalarField::Indicator(_) => field.support().is_some(),
        ScalarField::Callable(_) => false,
    };
    if !bounded {
        return Err(KfpError::NonIntegrableTail("field without a bounded representation".into()));
    }
    let s = params.s;
    let fx = field.eval(x);
    let generator = match field {
        ScalarField::Mixture(m) => Some(generator_mixture(spec, m, x)),
        _ => None,
    };
    let mut diff = |t: f64| -> Result<f64> {
        match generator {
            Some(g) if t < quad.switch_taylor => Ok(t * g),
            _ => Ok(semigroup_at(spec, field, x, t, state)? - fx),
        }
    };
    let mut body = 0.0;
    for &(t, w) in &quad.nodes {
        body += w * t.powf(-1.0 - s) * diff(t)?;
    }
    // (0, t_min): first-order behaviour for mixtures, negligible otherwise.
    let small = generator.map_or(0.0, |g| g * quad.t_min.powf(1.0 - s) / (1.0 - s));
    let d_max = diff(quad.t_max)?;
    let d_far = far_value(field) - fx;
    let large = d_max * quad.t_max.powf(-s) / s;
    let mut body_coarse = 0.0;
    for &(t, w) in &quad.coarser().nodes {
        body_coarse += w * t.powf(-1.0 - s) * diff(t)?;
    }
    // Second-order residual at the switch bounds what the Taylor form drops.
    let taylor_err = match generator {
        Some(g) => {
            let sw = quad.switch_taylor;
            let direct = semigroup_at(spec, field, x, sw, state)? - fx;
            (direct - sw * g).abs() * sw.powf(-s) / (2.0 - s)
        }
        None => 0.0,
    };
    let c = -params.gamma_factor;
    Ok(Valued::exact(
        c * (body + small + large),
        params.gamma_factor
            * ((body - body_coarse).abs() + (d_max - d_far).abs() * quad.t_max.powf(-s) / s + taylor_err),
    ))
}

/// Riesz potential `(1/Γ(s)) ∫₀^∞ t^{s−1} P_t f(X) dt` of order `s > 0`.
///
/// The order is not capped at 1: the integral at infinity converges exactly
/// when `D∞ > 2s`, and larger orders are how that failure is exercised.
pub fn riesz_potential(spec: &Spec, s: f64, field: &ScalarField, x: &[f64], state: &mut SamplerState) -> Result<Valued> {
    riesz_potential_on(spec, s, field, x, &TimeQuadrature::standard(), state)
}

pub fn riesz_potential_on(
    spec: &Spec,
    s: f64,
    field: &ScalarField,
    x: &[f64],
    quad: &TimeQuadrature,
    state: &mut SamplerState,
) -> Result<Valued> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(KfpError::InvalidParameter(format!("Riesz order must be positive, got {s}")));
    }
    if field.dim() != spec.dim() {
        return Err(KfpError::DimensionMismatch("field and operator dimensions differ".into()));
    }
    match field {
        ScalarField::Callable(_) => return Err(KfpError::UnsupportedBackend("Riesz potentials need a decaying field")),
        ScalarField::Mixture(m) if m.constant != 0.0 => {
            return Err(KfpError::DivergentTail(format!("field tends to the constant {}", m.constant)))
        }
        _ => {}
    }
    let d_inf = crate::dimension::dim_infinity(spec)?.estimate;
    if d_inf <= 2.0 * s {
        return Err(KfpError::DivergentTail(format!("D∞ = {d_inf} <= 2s = {}", 2.0 * s)));
    }
    let mut g = |t: f64| -> Result<f64> { Ok(t.powf(s - 1.0) * semigroup_at(spec, field, x, t, state)?) };
    let mut body = 0.0;
    for &(t, w) in &quad.nodes {
        body += w * g(t)?;
    }
    let mut body_coarse = 0.0;
    for &(t, w) in &quad.coarser().nodes {
        body_coarse += w * g(t)?;
    }
    let small = field.eval(x) * quad.t_min.powf(s) / s;
    // Power-law fit of the integrand over the last decade.
    let g_hi = g(quad.t_max)?;
    let g_prev = g(quad.t_max / 10.0)?;
    let g_prev2 = g(quad.t_max / 100.0)?;
    let (large, large_err) = if g_hi == 0.0 {
        (0.0, 0.0)
    } else {
        let slope = (g_hi / g_prev).abs().log10();
        if !(slope < -1.0) {
            return Err(KfpError::DivergentTail(format!("integrand decays like t^{slope}")));
        }
        let drift = ((g_prev / g_prev2).abs().log10() - slope).abs();
        let large = g_hi * quad.t_max / (-slope - 1.0);
        (large, large.abs() * drift / (-slope - 1.0 - drift).max(1e-3))
    };
    let c = 1.0 / gamma(s);
    let err = (body - body_coarse).abs() + large_err + small.abs() * quad.t_min;
    Ok(Valued::exact(c * (body + small + large), c * err))
}

/// Number of log-spaced `z` points in the default maximal-function grid.
pub const MAXIMAL_Z_POINTS: usize = 60;

pub fn default_z_grid() -> Vec<f64> {
    crate::dimension::log_grid(1e-3, 1e3, MAXIMAL_Z_POINTS)
}

/// Subordinated maximal function `sup_z |∫₀^∞ (z/√4π) t^{-3/2} e^{-z²/4t} P_t f(X) dt|`.
///
/// With `u = z/(2√t)` the subordinator becomes the half-normal density
/// `(2/√π) e^{-u²}`, integrated on log-spaced panels in `u`; the two ends carry
/// their exact masses at `f(X)` and at the far value.
pub fn maximal_function(
    spec: &Spec,
    field: &ScalarField,
    x: &[f64],
    z_grid: &[f64],
    state: &mut SamplerState,
) -> Result<f64> {
    if field.dim() != spec.dim() {
        return Err(KfpError::DimensionMismatch("field and operator dimensions differ".into()));
    }
    const U_LO: f64 = 1e-6;
    const U_HI: f64 = 6.5;
    let rule = TimeQuadrature::log_spaced(U_LO, U_HI, 3, 8);
    let fx = field.eval(x);
    let density = |u: f64| 2.0 / std::f64::consts::PI.sqrt() * (-u * u).exp();
    let mut best: f64 = 0.0;
    for &z in z_grid {
        let mut sum = libm::erfc(U_HI) * fx;
        let t_far = z * z / (4.0 * U_LO * U_LO);
        sum += libm::erf(U_LO) * semigroup_at(spec, field, x, t_far, state)?;
        for &(u, w) in &rule.nodes {
            let t = z * z / (4.0 * u * u);
            sum += w * density(u) * semigroup_at(spec, field, x, t, state)?;
        }
        best = best.max(sum.abs());
    }
    Ok(best)
}
