//! Semigroup Besov seminorms `𝒩_{2s,p}(f)` by Monte Carlo in `(X, Y)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::field::{AaBox, GaussianMixture, ScalarField};
use crate::nonlocal::FractionalParams;
use crate::quadrature::TimeQuadrature;
use crate::sampling::{normal_expectation, McEstimate, SamplerState};
use crate::special::norm_cdf;
use crate::{Params, Spec};

/// Time window, resolution and sample budget of the seminorm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesovGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub panels_per_decade: usize,
    pub order: usize,
    /// Monte Carlo pairs per time node.
    pub samples: usize,
}

impl Default for BesovGrid {
    fn default() -> Self {
        Self {
            t_min: 1e-10,
            t_max: 1e8,
            panels_per_decade: 1,
            order: 8,
            samples: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovValue {
    /// `𝒩_{2s,p}(f)`.
    pub value: f64,
    /// Deterministic part of the uncertainty: truncated ends.
    pub error: f64,
    /// 95% half-width from sampling, propagated through the `1/p` power.
    pub ci: f64,
    /// The `t`-integral before taking the `p`-th root.
    pub integral: f64,
    pub small_time_remainder: f64,
    pub large_time_tail: f64,
    /// Certified bound `2^p ‖f‖_p^p t_max^{-sp}/(sp)` on the large-time contribution.
    pub large_time_bound: f64,
    /// `(t, t^{-sp} J(t), cumulative)` with `J(t) = ∫∫ p_t(X,Y)|f(Y) − f(X)|^p`.
    pub trace: Vec<(f64, f64, f64)>,
}

impl BesovValue {
    pub fn uncertainty(&self) -> f64 {
        self.error + self.ci
    }
}

/// `𝒩_{2s,p}(f) = (∫₀^∞ t^{-(sp+1)} ∫ P_t(|f − f(X)|^p)(X) dX dt)^{1/p}`.
pub fn besov_seminorm(
    spec: &Spec,
    params: &FractionalParams,
    field: &ScalarField,
    state: &mut SamplerState,
) -> Result<BesovValue> {
    besov_seminorm_on(spec, params, field, &BesovGrid::default(), state)
}

pub fn besov_seminorm_on(
    spec: &Spec,
    params: &FractionalParams,
    field: &ScalarField,
    grid: &BesovGrid,
    state: &mut SamplerState,
) -> Result<BesovValue> {
    let tr = spec.trace_b();
    if tr < 0.0 {
        return Err(KfpError::TraceConditionViolated(tr));
    }
    if field.dim() != spec.dim() {
        return Err(KfpError::DimensionMismatch("field and operator dimensions differ".into()));
    }
    let p = params.p;
    if p != 1.0 && p != 2.0 {
        return Err(KfpError::InvalidParameter(format!("Besov seminorms support p in {{1, 2}}, got {p}")));
    }
    let sampler = Sampler::new(field, p, state)?;
    let sp = params.s * p;
    if sampler.norm_p == 0.0 {
        return Ok(BesovValue {
            value: 0.0,
            error: 0.0,
            ci: 0.0,
            integral: 0.0,
            small_time_remainder: 0.0,
            large_time_tail: 0.0,
            large_time_bound: 0.0,
            trace: Vec::new(),
        });
    }
    // Jumps give J(t) ~ t^{1/2}; smooth mixtures J(t) ~ t^{p/2}.
    let small_slope = match field {
        ScalarField::Mixture(_) => p / 2.0,
        _ => 0.5,
    };
    if !(small_slope > sp) {
        return Err(KfpError::SlowSmallTimeDecay { slope: small_slope, s: sp });
    }
    let j = |t: f64, label: u64| -> Result<McEstimate> {
        let mut st = state.fork(label);
        sampler.inner(spec, t, grid.samples, &mut st)
    };

    let quad = TimeQuadrature::log_spaced(grid.t_min, grid.t_max, grid.panels_per_decade, grid.order);
    let mut trace = Vec::with_capacity(quad.nodes.len());
    let mut cumulative = 0.0;
    let mut var = 0.0;
    for (i, &(t, w)) in quad.nodes.iter().enumerate() {
        let est = j(t, 100 + i as u64)?;
        let k = t.powf(-1.0 - sp);
        cumulative += w * k * est.mean;
        var += (w * k * est.half_width).powi(2);
        trace.push((t, t.powf(-sp) * est.mean, cumulative));
    }
    let j_lo = j(grid.t_min, 1)?;
    let small = j_lo.mean * grid.t_min.powf(-sp) / (small_slope - sp);
    let j_hi = j(grid.t_max, 2)?;
    let j_hi10 = j(grid.t_max / 10.0, 3)?;
    let large = j_hi.mean * grid.t_max.powf(-sp) / sp;
    let large_bound = 2f64.powf(p) * sampler.norm_p * grid.t_max.powf(-sp) / sp;
    let integral = cumulative + small + large;
    let err_int = 0.5 * small + (j_hi.mean - j_hi10.mean).abs() * grid.t_max.powf(-sp) / sp;
    let ci_int = var.sqrt();
    let value = integral.max(0.0).powf(1.0 / p);
    // d(I^{1/p}) = I^{1/p − 1} dI / p
    let scale = if value > 0.0 { value / (p * integral) } else { 0.0 };
    Ok(BesovValue {
        value,
        error: scale * err_int,
        ci: scale * ci_int,
        integral,
        small_time_remainder: small,
        large_time_tail: large,
        large_time_bound: large_bound,
        trace,
    })
}

/// Draws `(X, Y)` pairs for `J(t)`.
struct Sampler<'a> {
    field: &'a ScalarField,
    /// Mixtures without their constant; the constant cancels in `f(Y) − f(X)`.
    centred: Option<GaussianMixture>,
    support: Option<AaBox>,
    p: f64,
    /// `‖f‖_p^p` (of the centred mixture for mixtures).
    norm_p: f64,
}

impl<'a> Sampler<'a> {
    fn new(field: &'a ScalarField, p: f64, state: &mut SamplerState) -> Result<Self> {
        let (centred, support, norm_p) = match field {
            ScalarField::Grid(g) => (None, Some(g.domain.clone()), g.lp_power(p)),
            ScalarField::Indicator(r) => (None, r.bounding_box(), r.volume()),
            ScalarField::Mixture(m) => {
                let mut c = m.clone();
                c.constant = 0.0;
                let norm = mixture_lp_power(&c, p, state);
                (Some(c), None, norm)
            }
            ScalarField::Callable(_) => return Err(KfpError::UnboundedSupport),
        };
        Ok(Self {
            field,
            centred,
            support,
            p,
            norm_p,
        })
    }

    fn f(&self, x: &[f64]) -> f64 {
        match &self.centred {
            Some(m) => m.eval(x),
            None => self.field.eval(x),
        }
    }

    /// Monte Carlo estimate of `J(t)`.
    fn inner(&self, spec: &Spec, t: f64, n: usize, state: &mut SamplerState) -> Result<McEstimate> {
        let far = (1.0 + (-t * spec.trace_b()).exp()) * self.norm_p;
        let params = match spec.gramian(t) {
            Ok(params) => params,
            Err(KfpError::OverflowRegime(_)) => return Ok(exact(far, n)),
            Err(KfpError::SingularGramian { .. }) if t > 1.0 && spec.is_hypoelliptic() => return Ok(exact(far, n)),
            Err(e) => return Err(e),
        };
        if params.propagator.iter().any(|v| !v.is_finite()) {
            return Ok(exact(far, n));
        }
        match (&self.support, &self.centred) {
            (Some(s), _) => Ok(self.bounded(spec, &params, s, n, state)),
            (None, Some(m)) => Ok(self.gaussian(&params, m, n, state)),
            (None, None) => Ok(exact(0.0, n)),
        }
    }

    fn bounded(&self, spec: &Spec, params: &Params, s: &AaBox, n: usize, state: &mut SamplerState) -> McEstimate {
        let dim = s.dim();
        let pow = |v: f64| if self.p == 1.0 { v.abs() } else { v * v };
        // Points X that can reach the support: e^{-tB}(S ⊕ 8 marginal deviations).
        let e_inv = params.propagator.clone().try_inverse();
        let padded = e_inv.as_ref().map(|inv| {
            let sd: Vec<f64> = (0..dim).map(|k| 8.0 * (2.0 * params.gramian_t[(k, k)]).sqrt()).collect();
            let grown = AaBox {
                lo: s.lo.iter().zip(&sd).map(|(a, d)| a - d).collect(),
                hi: s.hi.iter().zip(&sd).map(|(b, d)| b + d).collect(),
            };
            image_bbox(inv, &grown).hull(s)
        });
        let move_x = |x: &[f64], z: &[f64], y: &mut [f64]| {
            for i in 0..dim {
                y[i] = (0..dim).map(|j| params.propagator[(i, j)] * x[j] + params.chol[(i, j)] * z[j]).sum();
            }
        };
        match padded {
            Some(d) if d.volume() <= 4.0 * s.volume() => {
                let vol = d.volume();
                normal_expectation(state, n, 2 * dim, |u| {
                    let x = uniform_in(&d, &u[..dim]);
                    let mut y = vec![0.0; dim];
                    move_x(&x, &u[dim..], &mut y);
                    vol * pow(self.f(&y) - self.f(&x))
                })
            }
            _ => {
                // Outside S only P_t|f|^p survives, and it integrates to e^{-t tr B}‖f‖_p^p.
                let vol = s.volume();
                let outside = (-params.t * spec.trace_b()).exp() * self.norm_p;
                let mut est = normal_expectation(state, n, 2 * dim, |u| {
                    let x = uniform_in(s, &u[..dim]);
                    let mut y = vec![0.0; dim];
                    move_x(&x, &u[dim..], &mut y);
                    let fy = self.f(&y);
                    vol * (pow(fy - self.f(&x)) - pow(fy))
                });
                est.mean += outside;
                est
            }
        }
    }

    /// Importance sampling of `X` from a Gaussian covering both the bump and
    /// the points the semigroup carries onto it.
    fn gaussian(&self, params: &Params, m: &GaussianMixture, n: usize, state: &mut SamplerState) -> McEstimate {
        let dim = m.dim;
        let (mean, cov) = mixture_cover(m);
        let c2 = &params.gramian_t * 2.0;
        let pulled = match params.propagator.clone().try_inverse() {
            Some(inv) => &inv * (&cov + &c2) * inv.transpose(),
            None => DMatrix::zeros(dim, dim),
        };
        let q_cov = &cov * 2.0 + pulled * 2.0;
        let Some(chol) = q_cov.clone().cholesky() else {
            return exact(0.0, n);
        };
        let l = chol.l();
        let log_norm = 0.5 * (dim as f64) * (2.0 * std::f64::consts::PI).ln() + l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let pow = |v: f64| if self.p == 1.0 { v.abs() } else { v * v };
        normal_expectation(state, n, 2 * dim, |u| {
            let w = DVector::from_column_slice(&u[..dim]);
            let x = &mean + &l * &w;
            let z = DVector::from_column_slice(&u[dim..]);
            let y = &params.propagator * &x + &params.chol * &z;
            // 1/q(X) = exp(|w|²/2 + log_norm)
            let inv_q = (0.5 * w.norm_squared() + log_norm).exp();
            inv_q * pow(self.f(y.as_slice()) - self.f(x.as_slice()))
        })
    }
}

fn exact(v: f64, n: usize) -> McEstimate {
    McEstimate {
        mean: v,
        half_width: 0.0,
        n,
    }
}

fn uniform_in(b: &AaBox, u: &[f64]) -> Vec<f64> {
    (0..b.dim()).map(|k| b.lo[k] + (b.hi[k] - b.lo[k]) * norm_cdf(u[k])).collect()
}

/// Bounding box of the linear image of a box.
fn image_bbox(m: &DMatrix<f64>, b: &AaBox) -> AaBox {
    let dim = b.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for corner in 0..(1usize << dim) {
        let c: Vec<f64> = (0..dim).map(|k| if corner >> k & 1 == 1 { b.hi[k] } else { b.lo[k] }).collect();
        for i in 0..dim {
            let v: f64 = (0..dim).map(|j| m[(i, j)] * c[j]).sum();
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    AaBox { lo, hi }
}

/// Weighted centre and a covariance covering every term of a mixture.
fn mixture_cover(m: &GaussianMixture) -> (DVector<f64>, DMatrix<f64>) {
    let dim = m.dim;
    let total: f64 = m.terms.iter().map(|t| t.weight.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut mean = DVector::zeros(dim);
    for t in &m.terms {
        mean += &t.mean * (t.weight.abs() / total);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for t in &m.terms {
        let d = &t.mean - &mean;
        cov += (&t.cov + &d * d.transpose()) * (t.weight.abs() / total);
    }
    (mean, cov)
}

/// `‖f‖_p^p` for a mixture: exact for `p = 2` and for nonnegative weights at
/// `p = 1`, sampled otherwise.
fn mixture_lp_power(m: &GaussianMixture, p: f64, state: &mut SamplerState) -> f64 {
    if m.terms.is_empty() {
        return 0.0;
    }
    if p == 1.0 && m.terms.iter().all(|t| t.weight >= 0.0) {
        return m.terms.iter().map(|t| t.integral()).sum();
    }
    if p == 2.0 {
        // ∫ g_i g_j = w_i w_j (2π)^{N/2} √(det Σ_i det Σ_j / det(Σ_i + Σ_j)) e^{−½ dᵀ(Σ_i+Σ_j)⁻¹d}
        let n = m.dim as f64;
        let mut sum = 0.0;
        for a in &m.terms {
            for b in &m.terms {
                let s = &a.cov + &b.cov;
                let Some(ch) = s.clone().cholesky() else { continue };
                let det: f64 = ch.l().diagonal().iter().map(|d| d * d).product();
                let d = &a.mean - &b.mean;
                let q = d.dot(&(ch.inverse() * &d));
                sum += a.weight * b.weight * (2.0 * std::f64::consts::PI).powf(n / 2.0) * (a.det_cov * b.det_cov / det).sqrt() * (-0.5 * q).exp();
            }
        }
        return sum;
    }
    let (mean, cov) = mixture_cover(m);
    let q = cov * 2.0;
    let l = q.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(m.dim, m.dim));
    let dim = m.dim;
    let log_norm = 0.5 * (dim as f64) * (2.0 * std::f64::consts::PI).ln() + l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    normal_expectation(state, 1 << 18, dim, |u| {
        let w = DVector::from_column_slice(u);
        let x = &mean + &l * &w;
        (0.5 * w.norm_squared() + log_norm).exp() * m.eval(x.as_slice()).abs().powf(p)
    })
    .mean
}
