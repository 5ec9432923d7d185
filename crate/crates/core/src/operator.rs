//! Operator specification `(Q, B)`, the covariance Gramian and the volume function.
//!
//! The operator is `A u = tr(Q ∇²u) + <BX, ∇u>` on `R^N`. Everything downstream
//! is driven by the Gramian `C(t) = ∫_0^t e^{sB} Q e^{sBᵀ} ds = t K(t)`, which we
//! obtain from one block matrix exponential (Van Loan) followed by doubling.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{KfpError, Result};
use crate::linalg::{self, expm, norm1, numerical_rank, psd_sqrt, symmetrize};
use crate::report::VerificationReport;
use crate::scalar::{lit, to_f64, Real};

/// Validated pair `(Q, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec<T: Real> {
    dim: usize,
    q: DMatrix<T>,
    b: DMatrix<T>,
    trace_b: T,
    kalman_rank: usize,
}

/// Per-time data for the heat kernel at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams<T: Real> {
    pub t: T,
    /// `e^{tB}`
    pub propagator: DMatrix<T>,
    /// `t K(t)`, the integrated covariance `C(t)`.
    pub gramian_t: DMatrix<T>,
    /// Lower Cholesky factor of `2 t K(t)`, the transition covariance.
    pub chol: DMatrix<T>,
    /// `log det(t K(t))`
    pub log_det: T,
    /// `V(t) = ω_N det(tK(t))^{1/2}`
    pub volume: T,
}

/// Lebesgue measure of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..=64).map(unit_ball_volume_uncached).collect());
    table
        .get(n)
        .copied()
        .unwrap_or_else(|| unit_ball_volume_uncached(n))
}

fn unit_ball_volume_uncached(n: usize) -> f64 {
    let half = n as f64 / 2.0;
    std::f64::consts::PI.powf(half) / crate::special::gamma(half + 1.0)
}

fn sym_tolerance<T: Real>(q: &DMatrix<T>) -> T {
    let scale = norm1(q).max(T::min_value().unwrap_or(T::zero()));
    scale * (lit::<T>(1e-10)).max(T::unit_roundoff() * lit(10.0))
}

impl<T: Real> OperatorSpec<T> {
    /// Validate `(Q, B)`: square, same size `N >= 2`, `Q` symmetric PSD.
    pub fn new(q: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        let n = q.nrows();
        if !q.is_square() || !b.is_square() || b.nrows() != n {
            return Err(KfpError::DimensionMismatch(format!(
                "Q is {}x{}, B is {}x{}",
                q.nrows(),
                q.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if n < 2 {
            return Err(KfpError::DimensionMismatch(format!("N = {n}, need N >= 2")));
        }
        let tol = sym_tolerance(&q);
        let asym = (&q - q.transpose()).amax();
        if asym > tol {
            return Err(KfpError::NonSymmetricQ(to_f64(asym)));
        }
        let q = symmetrize(&q);
        let min_eig = linalg::min_eigenvalue(&q);
        if min_eig < -tol {
            return Err(KfpError::NegativeEigenvalueQ(to_f64(min_eig)));
        }
        let trace_b = b.trace();
        let kalman_rank = controllability_rank(&q, &b);
        Ok(Self {
            dim: n,
            q,
            b,
            trace_b,
            kalman_rank,
        })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_rows(n: usize, q: &[T], b: &[T]) -> Result<Self> {
        if q.len() != n * n || b.len() != n * n {
            return Err(KfpError::DimensionMismatch(format!(
                "expected {} entries per matrix, got {} and {}",
                n * n,
                q.len(),
                b.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, q), DMatrix::from_row_slice(n, n, b))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    pub fn trace_b(&self) -> T {
        self.trace_b
    }
    pub fn kalman_rank(&self) -> usize {
        self.kalman_rank
    }
    /// Hörmander's condition, via the Kalman rank test.
    pub fn is_hypoelliptic(&self) -> bool {
        self.kalman_rank == self.dim
    }
    /// `tr B >= 0`; required by the Besov/embedding machinery, not by the kernel.
    pub fn trace_nonnegative(&self) -> bool {
        self.trace_b >= T::zero()
    }

    /// `e^{tB}` for any real `t`.
    pub fn propagator(&self, t: T) -> Result<DMatrix<T>> {
        expm(&(&self.b * t)).ok_or(KfpError::OverflowRegime(to_f64(t)))
    }

    /// `C(t) = t K(t)` and `e^{tB}` together.
    ///
    /// The block exponential of `τ [[-B, Q], [0, Bᵀ]]` yields `F12` and
    /// `F22 = e^{τBᵀ}`, with `C(τ) = F22ᵀ F12`. When `t‖B‖` is large we run it
    /// at `τ = t / 2^k` and double with `C(2τ) = C(τ) + e^{τB} C(τ) e^{τBᵀ}`,
    /// which never forms the decaying factor `e^{-tB}`.
    pub fn gramian_and_propagator(&self, t: T) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let n = self.dim;
        let bt = to_f64(norm1(&self.b)) * to_f64(t).abs();
        let mut k = 0u32;
        if bt > 0.5 {
            k = (bt / 0.5).log2().ceil() as u32;
        }
        let tau = t * lit::<T>(2f64.powi(-(k as i32)));
        let mut block = DMatrix::<T>::zeros(2 * n, 2 * n);
        block.view_mut((0, 0), (n, n)).copy_from(&(-&self.b * tau));
        block.view_mut((0, n), (n, n)).copy_from(&(&self.q * tau));
        block
            .view_mut((n, n), (n, n))
            .copy_from(&(self.b.transpose() * tau));
        let f = expm(&block).ok_or(KfpError::OverflowRegime(to_f64(t)))?;
        let f12 = f.view((0, n), (n, n)).into_owned();
        let f22 = f.view((n, n), (n, n)).into_owned();
        let mut c = symmetrize(&(f22.transpose() * f12));
        let mut e = f22.transpose();
        for _ in 0..k {
            c = symmetrize(&(&c + &e * &c * e.transpose()));
            e = &e * &e;
            if !c.iter().chain(e.iter()).all(|x| x.is_finite()) {
                return Err(KfpError::OverflowRegime(to_f64(t)));
            }
        }
        Ok((c, e))
    }

    /// Gramian `t K(t)` with its Cholesky factorization and the volume `V(t)`.
    pub fn gramian(&self, t: T) -> Result<KernelParams<T>> {
        if !(t > T::zero()) {
            return Err(KfpError::InvalidParameter(format!(
                "gramian needs t > 0, got {}",
                to_f64(t)
            )));
        }
        let (c, e) = self.gramian_and_propagator(t)?;
        let singular = || KfpError::SingularGramian {
            t: to_f64(t),
            min_eig: to_f64(linalg::min_eigenvalue(&c)),
        };
        let chol_c = c.clone().cholesky().ok_or_else(singular)?;
        let l = chol_c.l();
        let mut log_det = T::zero();
        for i in 0..self.dim {
            let d = l[(i, i)];
            if !(d > T::zero()) {
                return Err(singular());
            }
            log_det += d.ln();
        }
        log_det *= lit(2.0);
        if !log_det.is_finite() {
            return Err(singular());
        }
        let chol = l * lit::<T>(2f64.sqrt());
        let omega: T = lit(unit_ball_volume(self.dim));
        let volume = omega * (log_det * lit(0.5)).exp();
        Ok(KernelParams {
            t,
            propagator: e,
            gramian_t: c,
            chol,
            log_det,
            volume,
        })
    }

    /// Same diffusion with the drift reversed; its Gramian is the backward
    /// Gramian `W(t)` of `self`, congruent to `C(t)` via `e^{tB}`.
    fn reversed(&self) -> Self {
        OperatorSpec {
            dim: self.dim,
            q: self.q.clone(),
            b: -&self.b,
            trace_b: -self.trace_b,
            kalman_rank: self.kalman_rank,
        }
    }

    /// `V(t) = ω_N det(tK(t))^{1/2}`.
    pub fn volume(&self, t: T) -> Result<T> {
        let lv = self.log_volume(t)?;
        let v = lv.exp();
        if !v.is_finite() {
            return Err(KfpError::OverflowRegime(to_f64(t)));
        }
        Ok(v)
    }

    /// `log V(t)`, finite well past the point where `V` itself overflows.
    ///
    /// With growing modes the forward Gramian `C(t)` has a condition number
    /// that grows exponentially and its determinant is lost in rounding. Then
    /// `det C(t) = e^{2t tr B} det W(t)` with the backward Gramian
    /// `W(t) = ∫₀ᵗ e^{-sB} Q e^{-sBᵀ} ds` is used when `W` is better conditioned.
    pub fn log_volume(&self, t: T) -> Result<T> {
        let log_omega: T = lit(unit_ball_volume(self.dim).ln());
        let forward = self.gramian(t);
        let cond_f = match &forward {
            Ok(p) => condition(&p.gramian_t),
            Err(_) => f64::INFINITY,
        };
        if cond_f <= 1e6 {
            return Ok(log_omega + forward?.log_det * lit(0.5));
        }
        let backward = self.reversed().gramian(t);
        let cond_b = match &backward {
            Ok(p) => condition(&p.gramian_t),
            Err(_) => f64::INFINITY,
        };
        if cond_b < cond_f {
            let w = backward?;
            Ok(log_omega + t * self.trace_b() + w.log_det * lit(0.5))
        } else {
            Ok(log_omega + forward?.log_det * lit(0.5))
        }
    }

    /// Checks positivity of `K(t)` on a time grid.
    pub fn hormander_grid_check(&self, t_grid: &[T]) -> VerificationReport {
        let mut report = VerificationReport::new("hormander_grid");
        let mut all_positive = true;
        let mut worst = f64::INFINITY;
        for &t in t_grid {
            let min_eig = |spec: &Self| match spec.gramian_and_propagator(t) {
                Ok((c, _)) => to_f64(linalg::min_eigenvalue(&c)) / to_f64(t),
                Err(_) => f64::NAN,
            };
            // Cholesky is the definiteness test; the eigenvalue is diagnostic.
            // With growing modes C(t) loses its small eigenvalues to rounding,
            // so the congruent backward Gramian is tried as well.
            let positive = |spec: &Self| {
                let e = min_eig(spec);
                (spec.gramian(t).is_ok() && e.is_finite() && e > 0.0, e)
            };
            let (mut ok, mut min_eig) = positive(self);
            if !ok {
                let (ok_b, eig_b) = positive(&self.reversed());
                if ok_b {
                    ok = true;
                    min_eig = eig_b;
                }
            }
            if !ok {
                all_positive = false;
            }
            worst = worst.min(if min_eig.is_nan() { f64::NEG_INFINITY } else { min_eig });
            report.push_row(to_f64(t), min_eig, ok);
        }
        let consistent = all_positive == self.is_hypoelliptic();
        report.lhs = worst;
        report.rhs = 0.0;
        report.ratio = f64::NAN;
        report.pass = all_positive && consistent;
        report.note("kalman_rank", self.kalman_rank as f64);
        report.note("consistent_with_kalman", if consistent { 1.0 } else { 0.0 });
        report
    }

    /// `m_t(X, Y) = |K(t)^{-1/2}(Y - e^{tB}X)|` using the factor of `2tK(t)`.
    pub fn mt_distance(&self, params: &KernelParams<T>, x: &DVector<T>, y: &DVector<T>) -> T {
        let v = y - &params.propagator * x;
        let w = params
            .chol
            .solve_lower_triangular(&v)
            .expect("Cholesky factor has nonzero diagonal");
        // |L^{-1} v|^2 = <(2C)^{-1} v, v>, and m_t^2 = t <C^{-1} v, v>.
        (w.norm_squared() * params.t * lit(2.0)).sqrt()
    }

    /// Heat kernel `p(X, Y, t) = ω_N (4π)^{-N/2} / V(t) · exp(-m_t² / 4t)`.
    pub fn kernel_eval(&self, params: &KernelParams<T>, x: &DVector<T>, y: &DVector<T>) -> T {
        let m = self.mt_distance(params, x, y);
        let omega: T = lit(unit_ball_volume(self.dim));
        let four_pi: T = lit(4.0 * std::f64::consts::PI);
        let pref = omega * four_pi.powf(lit(-(self.dim as f64) / 2.0)) / params.volume;
        pref * (-(m * m) / (params.t * lit(4.0))).exp()
    }
}

/// Numerical rank of `[Q^{1/2}, B Q^{1/2}, …, B^{N-1} Q^{1/2}]`.
/// `‖C‖₁ / λ_min(C)` for a symmetric positive definite `C`.
fn condition<T: Real>(c: &DMatrix<T>) -> f64 {
    let lo = to_f64(linalg::min_eigenvalue(c));
    if lo > 0.0 {
        to_f64(norm1(c)) / lo
    } else {
        f64::INFINITY
    }
}

pub fn controllability_rank<T: Real>(q: &DMatrix<T>, b: &DMatrix<T>) -> usize {
    let n = q.nrows();
    let root = psd_sqrt(q);
    let mut blocks = DMatrix::<T>::zeros(n, n * n);
    let mut cur = root;
    for k in 0..n {
        blocks.view_mut((0, k * n), (n, n)).copy_from(&cur);
        cur = b * cur;
    }
    numerical_rank(&blocks)
}

/// Serializable summary of a spec.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SpecSummary {
    pub dim: usize,
    pub q: Vec<f64>,
    pub b: Vec<f64>,
    pub trace_b: f64,
    pub kalman_rank: usize,
    pub hypoelliptic: bool,
    pub trace_nonnegative: bool,
}

impl<T: Real> OperatorSpec<T> {
    pub fn summary(&self) -> SpecSummary {
        let rows = |m: &DMatrix<T>| {
            let mut out = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(to_f64(m[(i, j)]));
                }
            }
            out
        };
        SpecSummary {
            dim: self.dim,
            q: rows(&self.q),
            b: rows(&self.b),
            trace_b: to_f64(self.trace_b),
            kalman_rank: self.kalman_rank,
            hypoelliptic: self.is_hypoelliptic(),
            trace_nonnegative: self.trace_nonnegative(),
        }
    }
}
