//! Intrinsic dimensions at zero and at infinity from the volume function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::report::{lenient_f64, Num};
use crate::Spec;

/// Least-squares slope of `2 log V` against `log t` over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    #[serde(with = "lenient_f64")]
    pub estimate: f64,
    pub residual_rms: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
    /// Local slope at each end of the window.
    pub slope_lo: f64,
    pub slope_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
}

impl Window {
    pub const ZERO: Window = Window {
        t_lo: 1e-8,
        t_hi: 1e-4,
        points: 40,
    };
    pub const INFINITY: Window = Window {
        t_lo: 1e3,
        t_hi: 1e7,
        points: 40,
    };

    pub fn grid(&self) -> Vec<f64> {
        log_grid(self.t_lo, self.t_hi, self.points)
    }
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// Threshold above which a growing local slope is read as super-polynomial growth.
pub const SUPERPOLY_SLOPE: f64 = 100.0;

/// Ratio of end to middle local slope that marks super-polynomial growth on a
/// window shortened by overflow.
pub const SUPERPOLY_GROWTH: f64 = 1.5;

/// `log V(t)`. A Gramian that loses definiteness at large `t` for a
/// hypoelliptic operator has outgrown double precision and is reported like
/// an overflow.
fn log_volume(spec: &Spec, t: f64) -> Result<f64> {
    let lv = match spec.log_volume(t) {
        Err(KfpError::SingularGramian { .. }) if t > 1.0 && spec.is_hypoelliptic() => {
            return Err(KfpError::OverflowRegime(t));
        }
        r => r?,
    };
    if !lv.is_finite() {
        return Err(KfpError::OverflowRegime(t));
    }
    Ok(lv)
}

/// `2 d log V / d log t` by a central difference in `log t`.
pub fn local_slope(spec: &Spec, t: f64) -> Result<f64> {
    let h = 1e-3_f64;
    let up = log_volume(spec, t * h.exp())?;
    let dn = log_volume(spec, t * (-h).exp())?;
    Ok((up - dn) / h)
}

fn fit(spec: &Spec, grid: &[f64]) -> Result<SlopeFit> {
    let mut xs = Vec::with_capacity(grid.len());
    let mut ys = Vec::with_capacity(grid.len());
    for &t in grid {
        xs.push(t.ln());
        ys.push(2.0 * log_volume(spec, t)?);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (my + slope * (x - mx));
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(SlopeFit {
        estimate: slope,
        residual_rms: rms,
        t_lo: grid[0],
        t_hi: *grid.last().unwrap(),
        points: grid.len(),
        slope_lo: local_slope(spec, grid[0])?,
        slope_hi: local_slope(spec, *grid.last().unwrap())?,
    })
}

/// `D₀`: twice the log-log slope of `V` on a small-time window.
pub fn dim_zero(spec: &Spec) -> Result<SlopeFit> {
    dim_zero_on(spec, Window::ZERO)
}

pub fn dim_zero_on(spec: &Spec, w: Window) -> Result<SlopeFit> {
    fit(spec, &w.grid())
}

/// Estimate of `D∞` with the cross-check from the integral test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinityEstimate {
    #[serde(with = "lenient_f64")]
    pub estimate: f64,
    pub fit: SlopeFit,
    /// The window was shortened because `V` overflowed.
    pub overflow: bool,
    /// Result of the integral-convergence bisection.
    #[serde(with = "lenient_f64")]
    pub integral_test: f64,
    pub inconclusive: bool,
    pub flags: Vec<String>,
}

/// Largest `t` in `[lo, hi]` at which `V(t)` is finite (bisection in `log t`).
fn last_finite_time(spec: &Spec, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        // Leave headroom for the central difference in `local_slope`.
        if log_volume(spec, (m + 0.01).exp()).is_ok() {
            a = m;
        } else {
            b = m;
        }
    }
    a.exp()
}

/// `D∞`: twice the log-log slope of `V` on a large-time window, `+∞` when the
/// local slope exceeds [`SUPERPOLY_SLOPE`] and keeps increasing.
pub fn dim_infinity(spec: &Spec) -> Result<InfinityEstimate> {
    dim_infinity_on(spec, Window::INFINITY)
}

pub fn dim_infinity_on(spec: &Spec, w: Window) -> Result<InfinityEstimate> {
    let mut flags = Vec::new();
    let mut window = w;
    let mut overflow = false;
    if log_volume(spec, w.t_hi * 1.01).is_err() {
        overflow = true;
        // Step back from the threshold: near it the Gramian is already inaccurate.
        let t_end = 0.5 * last_finite_time(spec, 1e-3, w.t_hi);
        let t_start = (t_end / 10.0).min(w.t_lo);
        window = Window {
            t_lo: t_start,
            t_hi: t_end,
            points: w.points,
        };
        flags.push(format!(
            "V(t) not representable in double precision beyond t≈{:.4e}; window shortened",
            2.0 * t_end
        ));
    }
    let fit = fit(spec, &window.grid())?;
    let mid = (window.t_lo * window.t_hi).sqrt();
    let slope_mid = local_slope(spec, mid)?;
    // A polynomial volume has a settled local slope. On a shortened window
    // the threshold cannot be reached, so sustained growth of the slope over
    // the last decade is taken as the sign of super-polynomial growth.
    let superpoly = (fit.slope_hi > SUPERPOLY_SLOPE && fit.slope_hi > slope_mid * 1.01)
        || (overflow && fit.slope_hi > SUPERPOLY_GROWTH * slope_mid);
    let estimate = if superpoly {
        flags.push(format!(
            "local slope rises from {slope_mid:.1} to {:.1}: classified +∞ (review)",
            fit.slope_hi
        ));
        f64::INFINITY
    } else {
        fit.estimate
    };
    let integral_test = integral_test(spec, if overflow { window.t_hi } else { 1e8 });
    let inconclusive = match (estimate.is_finite(), integral_test.is_finite()) {
        (true, true) => (estimate - integral_test).abs() > 0.2,
        (false, false) => false,
        _ => true,
    };
    if inconclusive {
        flags.push(format!(
            "slope estimate {estimate} and integral test {integral_test} disagree by more than 0.2"
        ));
    }
    Ok(InfinityEstimate {
        estimate,
        fit,
        overflow,
        integral_test,
        inconclusive,
        flags,
    })
}

/// Bisection on `α` for convergence of `∫₁^∞ t^{α/2−1} / V(t) dt`, judged by
/// the log-slope of `t·g(t)` over the last decade before `t_end`. Returns
/// `+∞` when every `α` up to 400 converges.
fn integral_test(spec: &Spec, t_end: f64) -> f64 {
    let a = t_end / 10.0;
    let (la, lb) = match (log_volume(spec, a), log_volume(spec, t_end)) {
        (Ok(x), Ok(y)) => (x, y),
        _ => return f64::INFINITY,
    };
    let dlog = (t_end / a).ln();
    // log(t g(t)) = (α/2) log t − log V(t).
    let converges = |alpha: f64| ((alpha / 2.0) * dlog - (lb - la)) / dlog < -1e-3;
    let (mut lo, mut hi) = (0.0, 400.0);
    if converges(hi) {
        return f64::INFINITY;
    }
    if !converges(lo) {
        return 0.0;
    }
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        if converges(m) {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

/// `inf_t V(t) / min{t^{a/2}, t^{b/2}}` over the grid, or 0 when the ratio
/// trends to zero at either end of the grid.
pub fn volume_lower_constant(spec: &Spec, a: f64, b: f64, t_grid: &[f64]) -> Result<f64> {
    let decades = (t_grid.last().unwrap() / t_grid[0]).log10();
    if decades < 10.0 - 1e-9 {
        return Err(KfpError::InvalidParameter(format!(
            "volume_lower_constant needs a grid spanning ≥ 10 decades, got {decades:.2}"
        )));
    }
    let mut logs: Vec<(f64, f64)> = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let lt = t.ln();
        // log min{t^{a/2}, t^{b/2}}
        let log_min = if lt >= 0.0 { 0.5 * a.min(b) * lt } else { 0.5 * a.max(b) * lt };
        let lr = match log_volume(spec, t) {
            Ok(lv) => lv - log_min,
            Err(KfpError::OverflowRegime(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        logs.push((lt, lr));
    }
    let tol = 0.02;
    let finite: Vec<(f64, f64)> = logs.iter().copied().filter(|p| p.1.is_finite()).collect();
    if finite.len() < 4 {
        return Ok(0.0);
    }
    let end_slope = |pts: &[(f64, f64)]| (pts[pts.len() - 1].1 - pts[0].1) / (pts[pts.len() - 1].0 - pts[0].0);
    let k = (finite.len() / 10).max(2);
    let lo_slope = end_slope(&finite[..k]);
    let hi_slope = end_slope(&finite[finite.len() - k..]);
    // Ratio → 0 as t → 0 means a positive slope at the small end, and vice versa.
    if lo_slope > tol || hi_slope < -tol {
        return Ok(0.0);
    }
    Ok(finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    UniformGrowth { d: f64, gamma: f64 },
    MixedGrowth { d_zero: f64, d_infinity: f64, gamma: f64 },
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionProfile {
    pub d_zero: f64,
    #[serde(with = "lenient_f64")]
    pub d_infinity: f64,
    pub regime: Regime,
    pub zero_fit: SlopeFit,
    pub infinity: InfinityEstimate,
    pub diagnostics: BTreeMap<String, Num>,
    pub flags: Vec<String>,
}

/// Relative tolerance within which fitted dimensions are identified with
/// the nearest integer before the growth constant is computed.
pub const FIT_TOLERANCE: f64 = 0.02;

fn snap(d: f64) -> f64 {
    if !d.is_finite() {
        return d;
    }
    let r = d.round();
    if (d - r).abs() <= FIT_TOLERANCE * r.abs().max(1.0) {
        r
    } else {
        d
    }
}

/// Grid for growth constants: 1e−6 … 1e6, 8 points per decade.
pub fn gamma_grid() -> Vec<f64> {
    log_grid(1e-6, 1e6, 97)
}

/// Decides between the uniform (`D₀ ≤ D∞`) and mixed (`D₀ > D∞`) regimes.
pub fn classify_regime(spec: &Spec, d_request: Option<f64>) -> Result<DimensionProfile> {
    let zero_fit = dim_zero(spec)?;
    let infinity = dim_infinity(spec)?;
    let d0 = snap(zero_fit.estimate);
    let dinf = snap(infinity.estimate);
    let mut flags = infinity.flags.clone();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("d_zero_raw".into(), Num(zero_fit.estimate));
    diagnostics.insert("d_infinity_raw".into(), Num(infinity.estimate));
    let grid = gamma_grid();
    let regime = if d0 <= dinf {
        let d = match d_request {
            Some(d) if d < d0 || d > dinf => {
                return Err(KfpError::InvalidDRequest { d, lo: d0, hi: dinf });
            }
            Some(d) => d,
            None => d0,
        };
        let gamma = volume_lower_constant(spec, d, d, &grid)?;
        if gamma > 0.0 {
            Regime::UniformGrowth { d, gamma }
        } else {
            flags.push("no positive lower volume constant".into());
            Regime::Unsupported
        }
    } else {
        if let Some(d) = d_request {
            return Err(KfpError::InvalidDRequest { d, lo: d0, hi: dinf });
        }
        let gamma = volume_lower_constant(spec, d0, dinf, &grid)?;
        if gamma > 0.0 {
            Regime::MixedGrowth {
                d_zero: d0,
                d_infinity: dinf,
                gamma,
            }
        } else {
            flags.push("no positive lower volume constant".into());
            Regime::Unsupported
        }
    };
    if infinity.inconclusive {
        flags.push("inconclusive".into());
    }
    Ok(DimensionProfile {
        d_zero: d0,
        d_infinity: dinf,
        regime,
        zero_fit,
        infinity,
        diagnostics,
        flags,
    })
}

/// Rows `(t, V(t), local slope)` for the volume CSV.
pub fn volume_table(spec: &Spec, t_grid: &[f64]) -> Vec<(f64, f64, f64)> {
    t_grid
        .iter()
        .map(|&t| {
            let v = spec.volume(t).unwrap_or(f64::INFINITY);
            let s = local_slope(spec, t).unwrap_or(f64::NAN);
            (t, v, s)
        })
        .collect()
}
