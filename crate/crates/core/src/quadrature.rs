//! Quadrature rules: Gauss–Legendre, adaptive Gauss–Kronrod, log-spaced time
//! grids and whitened rules for Gaussian expectations.

use std::f64::consts::PI;

use crate::special::norm_pdf;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, via Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = vec![(0.0, 0.0); n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        out[n / 2].0 = 0.0;
    }
    out
}

/// A fixed rule on `[-1, 1]` that can be mapped to any interval.
#[derive(Debug, Clone)]
pub struct FixedRule {
    pub points: Vec<(f64, f64)>,
}

impl FixedRule {
    pub fn legendre(n: usize) -> Self {
        Self { points: gauss_legendre(n) }
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
        self.points.iter().map(move |&(x, w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = (a + b) / 2.0;
    let h = (b - a) / 2.0;
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive 15-point Gauss–Kronrod on `[a, b]` with user breakpoints
/// (QUADPACK QAGP style: always bisect the interval with the worst error).
pub fn adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Estimate {
    let mut cuts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(b);
    let mut pieces: Vec<(f64, f64, f64, f64)> = cuts
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk15(&mut f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || pieces.len() >= max_intervals {
            return Estimate { value: total, error: err };
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, _, _) = pieces[idx];
        let mid = (lo + hi) / 2.0;
        if mid <= lo || mid >= hi {
            return Estimate { value: total, error: err };
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        pieces[idx] = (lo, mid, v1, e1);
        pieces.push((mid, hi, v2, e2));
    }
}

/// Log-spaced time quadrature on `[t_min, t_max]`: Gauss–Legendre panels in
/// `u = ln t`, `panels_per_decade` panels per decade.
#[derive(Debug, Clone)]
pub struct TimeQuadrature {
    pub t_min: f64,
    pub t_max: f64,
    /// Below this time, Gaussian integrands switch to their first-order Taylor form.
    pub switch_taylor: f64,
    pub panels_per_decade: usize,
    pub order: usize,
    /// `(t, w)` with `Σ w g(t) ≈ ∫ g(t) dt`.
    pub nodes: Vec<(f64, f64)>,
}

impl TimeQuadrature {
    pub fn log_spaced(t_min: f64, t_max: f64, panels_per_decade: usize, order: usize) -> Self {
        assert!(t_min > 0.0 && t_max > t_min);
        let rule = FixedRule::legendre(order);
        let (u0, u1) = (t_min.ln(), t_max.ln());
        let decades = (t_max / t_min).log10();
        let panels = ((decades * panels_per_decade as f64).ceil() as usize).max(1);
        let du = (u1 - u0) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        for k in 0..panels {
            let a = u0 + k as f64 * du;
            for (u, w) in rule.mapped(a, a + du) {
                let t = u.exp();
                nodes.push((t, w * t));
            }
        }
        Self {
            t_min,
            t_max,
            switch_taylor: 1e-6,
            panels_per_decade,
            order,
            nodes,
        }
    }

    /// Same window with half the panels (at least one per decade), for error estimates.
    pub fn coarser(&self) -> Self {
        let ppd = self.panels_per_decade / 2;
        let (ppd, order) = if ppd >= 1 { (ppd, self.order) } else { (1, (self.order * 2 / 3).max(2)) };
        Self::log_spaced(self.t_min, self.t_max, ppd, order).with_switch(self.switch_taylor)
    }

    /// Grid used by the singular integrals of the fractional calculus.
    pub fn standard() -> Self {
        Self::log_spaced(1e-12, 1e8, 2, 10)
    }

    pub fn with_switch(mut self, switch_taylor: f64) -> Self {
        self.switch_taylor = switch_taylor;
        self
    }

    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().map(|&(t, w)| w * g(t)).sum()
    }

    /// Certified bound for `∫_{t_max}^∞ t^{-(1+s)} h(t) dt` when `|h| ≤ 2·mass`.
    pub fn tail_bound_large(&self, mass: f64, s: f64) -> f64 {
        2.0 * mass * self.t_max.powf(-s) / s
    }
}

/// Rule for `E[g(Z)]`, `Z ~ N(0,1)`: Gauss–Legendre on `[-half_width, half_width]`
/// with the density folded into the weights.
pub fn normal_rule(n: usize, half_width: f64) -> Vec<(f64, f64)> {
    FixedRule::legendre(n)
        .mapped(-half_width, half_width)
        .map(|(z, w)| (z, w * norm_pdf(z)))
        .collect()
}
