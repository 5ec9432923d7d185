//! Level-set norms (`L^q`, weak `L^q`, `L^{q₀} + L^{q∞}`) and the
//! verification suites built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::besov_seminorm;
use crate::dimension::{classify_regime, Regime};
use crate::error::{KfpError, Result};
use crate::field::{AaBox, GaussianMixture, GridField, RegionSet, ScalarField};
use crate::kernel::box_probability;
use crate::nonlocal::{fractional_power, perimeter, FractionalParams};
use crate::report::{EmbeddingReport, ReportRow, VerificationReport};
use crate::sampling::SamplerState;
use crate::Spec;

/// Largest max/min ratio spread accepted across a uniform-regime family.
pub const UNIFORM_SPREAD: f64 = 1.5;
/// Band for the mixed regime, where a single power cannot fit all scales.
pub const MIXED_SPREAD: f64 = 2.0;
/// Relative gap accepted between the two sides of the coarea identity.
pub const COAREA_TOLERANCE: f64 = 0.03;
/// Fraction of `|E|` the blow-up sets must recover.
pub const BLOWUP_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetProfile {
    pub sigmas: Vec<f64>,
    /// `G(σ) = |{|f| > σ}|` at each sigma.
    pub g: Vec<f64>,
    /// `sup{σ : G(σ) > 1}`, 0 when no level set is that large.
    pub sigma_f: f64,
}

/// Exact layer structure of a piecewise-constant field: `levels` are the
/// distinct positive values of `|f|` ascending, and `measure[k]` is
/// `G(σ)` for `σ ∈ [levels[k−1], levels[k])`.
struct Layers {
    levels: Vec<f64>,
    measure: Vec<f64>,
}

impl Layers {
    fn of(grid: &GridField) -> Self {
        let cv = grid.cell_volume();
        let mut abs: Vec<f64> = grid.values.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
        abs.sort_by(f64::total_cmp);
        let n = abs.len();
        let mut levels = Vec::new();
        let mut measure = Vec::new();
        let mut i = 0;
        while i < n {
            let v = abs[i];
            levels.push(v);
            measure.push((n - i) as f64 * cv);
            while i < n && abs[i] == v {
                i += 1;
            }
        }
        Self { levels, measure }
    }

    /// `G(σ)`, right-continuous in σ.
    fn g(&self, sigma: f64) -> f64 {
        let k = self.levels.partition_point(|&l| l <= sigma);
        self.measure.get(k).copied().unwrap_or(0.0)
    }

    fn sigma_f(&self) -> f64 {
        // G drops through 1 at the first level whose set above is ≤ 1.
        let mut out = 0.0;
        for (l, m) in self.levels.iter().zip(&self.measure) {
            if *m > 1.0 {
                out = *l;
            }
        }
        out
    }

    /// `∫₀^∞ h(σ, G(σ)) dσ` for `h` constant in σ on each layer up to a
    /// weight: sums `h(G_k) (w(l_k) − w(l_{k−1}))`.
    fn integrate(&self, w: impl Fn(f64) -> f64, h: impl Fn(f64) -> f64) -> f64 {
        let mut prev = w(0.0);
        let mut acc = 0.0;
        for (l, m) in self.levels.iter().zip(&self.measure) {
            let cur = w(*l);
            acc += h(*m) * (cur - prev);
            prev = cur;
        }
        acc
    }
}

fn grid_of(field: &ScalarField) -> Result<GridField> {
    match field {
        ScalarField::Mixture(_) | ScalarField::Callable(_) if field.support().is_none() => {
            Err(KfpError::UnboundedSupport)
        }
        _ => field.as_grid(),
    }
}

pub fn level_profile(field: &ScalarField, sigma_grid: &[f64]) -> Result<LevelSetProfile> {
    if sigma_grid.iter().any(|s| !(*s > 0.0)) || sigma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KfpError::InvalidParameter("sigma grid must be positive and increasing".into()));
    }
    let layers = Layers::of(&grid_of(field)?);
    Ok(LevelSetProfile {
        sigmas: sigma_grid.to_vec(),
        g: sigma_grid.iter().map(|&s| layers.g(s)).collect(),
        sigma_f: layers.sigma_f(),
    })
}

/// `n` log-spaced levels spanning the nonzero values of `|f|`.
pub fn sigma_grid_for(field: &ScalarField, n: usize) -> Result<Vec<f64>> {
    let layers = Layers::of(&grid_of(field)?);
    let (Some(lo), Some(hi)) = (layers.levels.first(), layers.levels.last()) else {
        return Ok(Vec::new());
    };
    let (a, b) = ((lo / 2.0).ln(), (hi * 1.01).ln());
    let n = n.max(2);
    Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect())
}

/// Layer-cake `(q ∫σ^{q−1} G(σ) dσ)^{1/q}`, exact on piecewise-constant fields.
pub fn lq_norm(field: &ScalarField, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(KfpError::InvalidParameter(format!("L^q needs q ≥ 1, got {q}")));
    }
    let layers = Layers::of(&grid_of(field)?);
    Ok(layers.integrate(|s| s.powf(q), |g| g).powf(1.0 / q))
}

/// `sup_σ σ G(σ)^{1/q}`. On a piecewise-constant field the supremum is
/// approached from below each level, so the candidates are `l_k G_k^{1/q}`.
pub fn weak_lq_norm(field: &ScalarField, q: f64) -> Result<f64> {
    if !(q > 1.0) {
        return Err(KfpError::InvalidParameter(format!("weak L^q needs q > 1, got {q}")));
    }
    let layers = Layers::of(&grid_of(field)?);
    Ok(layers
        .levels
        .iter()
        .zip(&layers.measure)
        .map(|(l, m)| l * m.powf(1.0 / q))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumSplit {
    /// `f 𝟏_{E_{σ_f}}`.
    pub f1: GridField,
    /// `f (1 − 𝟏_{E_{σ_f}})`.
    pub f2: GridField,
    pub sigma_f: f64,
    /// `‖f₁‖_{q₀} + ‖f₂‖_{q∞}`.
    pub bound: f64,
    /// `2 ∫ min{G^{1/q₀}, G^{1/q∞}} dσ`.
    pub level_bound: f64,
    /// `|f| = |f₁| + |f₂|` and `f₁ f₂ = 0` at every cell.
    pub disjoint: bool,
}

pub fn sum_space_split(field: &ScalarField, q0: f64, q_inf: f64) -> Result<SumSplit> {
    if !(q_inf > q0 && q0 > 1.0) {
        return Err(KfpError::BadExponents(format!("need q∞ > q₀ > 1, got q₀={q0}, q∞={q_inf}")));
    }
    let grid = grid_of(field)?;
    let layers = Layers::of(&grid);
    let sigma_f = layers.sigma_f();
    let f1 = grid.map_values(|v| if v.abs() > sigma_f { v } else { 0.0 });
    let f2 = grid.map_values(|v| if v.abs() > sigma_f { 0.0 } else { v });
    let disjoint = grid
        .values
        .iter()
        .zip(f1.values.iter().zip(&f2.values))
        .all(|(f, (a, b))| f.abs() == a.abs() + b.abs() && a * b == 0.0);
    let bound = f1.lp_power(q0).powf(1.0 / q0) + f2.lp_power(q_inf).powf(1.0 / q_inf);
    let level_bound = 2.0 * layers.integrate(|s| s, |g| g.powf(1.0 / q0).min(g.powf(1.0 / q_inf)));
    Ok(SumSplit {
        f1,
        f2,
        sigma_f,
        bound,
        level_bound,
        disjoint,
    })
}

/// `min{x^{1/q₀} + (1−x)^{1/q∞} : x ∈ [0,1]}` by golden-section search,
/// compared against both endpoints since the objective is concave.
pub fn split_min_constant(q0: f64, q_inf: f64) -> Result<f64> {
    if !(q_inf >= q0 && q0 >= 1.0) {
        return Err(KfpError::BadExponents(format!("need q∞ ≥ q₀ ≥ 1, got q₀={q0}, q∞={q_inf}")));
    }
    let h = |x: f64| x.powf(1.0 / q0) + (1.0 - x).powf(1.0 / q_inf);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    while b - a > 1e-12 {
        if hc < hd {
            b = d;
            d = c;
            hd = hc;
            c = b - r * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + r * (b - a);
            hd = h(d);
        }
    }
    Ok(h(0.5 * (a + b)).min(h(0.0)).min(h(1.0)))
}

/// Coarea identity `𝒩_{2s,1}(f) = ∫₀^∞ 𝔓_s({f > σ}) dσ` on a nonnegative grid
/// field. Both sides see the same piecewise-constant field, so the σ-integral
/// is a finite sum over its distinct levels.
pub fn check_coarea(
    spec: &Spec,
    params: &FractionalParams,
    field: &GridField,
    state: &mut SamplerState,
) -> Result<VerificationReport> {
    if field.values.iter().any(|v| *v < 0.0) {
        return Err(KfpError::InvalidParameter("coarea check needs a nonnegative field".into()));
    }
    if !(params.s < 0.5) || params.p != 1.0 {
        return Err(KfpError::InvalidParameter("coarea check needs p = 1 and s < 1/2".into()));
    }
    let lhs = besov_seminorm(spec, params, &ScalarField::Grid(field.clone()), state)?;
    let mut rows = Vec::new();
    let mut rhs = 0.0;
    let mut rhs_err = 0.0;
    let mut prev = 0.0;
    for v in field.levels().into_iter().filter(|v| *v > 0.0) {
        let set = field.superlevel_set(v);
        let per = perimeter(spec, params, &set, state)?;
        rhs += (v - prev) * per.value;
        rhs_err += (v - prev) * (per.error + per.ci.unwrap_or(0.0));
        rows.push(ReportRow {
            param: v,
            lhs: v - prev,
            rhs: per.value,
            ratio: set.volume(),
            pass: per.value.is_finite(),
        });
        prev = v;
    }
    let mut rep = VerificationReport::relative("coarea", lhs.value, rhs, COAREA_TOLERANCE);
    rep.rows = rows;
    rep.note("lhs_uncertainty", lhs.uncertainty());
    rep.note("rhs_uncertainty", rhs_err);
    rep.note("levels", rep.rows.len() as f64);
    rep.text("rows: level, level step, perimeter of {f ≥ level}, its measure");
    Ok(rep)
}

/// Cells per axis across the set's bounding box in [`check_blowup`].
pub const BLOWUP_CELLS: usize = 200;

/// `|{P_t 𝟏_E > ½}|` along a decreasing time sequence, by cell-centre counting
/// on a grid aligned with the set's bounding box.
pub fn check_blowup(spec: &Spec, set: &RegionSet, t_seq: &[f64]) -> Result<VerificationReport> {
    if t_seq.is_empty() || t_seq.iter().any(|t| !(*t > 0.0)) || t_seq.windows(2).any(|w| w[1] >= w[0]) {
        return Err(KfpError::InvalidParameter("blow-up times must be positive and decreasing".into()));
    }
    let target = set.volume() * BLOWUP_FRACTION;
    let mut rep = VerificationReport::new("blowup");
    rep.rhs = target;
    rep.tolerance = 1.0 - BLOWUP_FRACTION;
    let mut state = SamplerState::new(0);
    let mut last = 0.0;
    for &t in t_seq {
        let measure = match set.bounding_box() {
            None => 0.0,
            Some(bb) => superlevel_measure(spec, set, &bb, t, &mut state)?,
        };
        rep.push_cmp(t, measure, set.volume(), measure >= target);
        last = measure;
    }
    rep.lhs = last;
    rep.ratio = if set.volume() > 0.0 { last / set.volume() } else { 1.0 };
    rep.pass = last >= target;
    rep.text("rows: t, |{P_t 1_E > 1/2}|, |E|; monotonicity in t is not expected");
    Ok(rep)
}

fn superlevel_measure(spec: &Spec, set: &RegionSet, bb: &AaBox, t: f64, state: &mut SamplerState) -> Result<f64> {
    let params = spec.gramian(t)?;
    let dim = spec.dim();
    // Points with P_t 1_E > ½ have e^{tB}X within a few deviations of E.
    let back = spec.propagator(-t)?;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let sd: Vec<f64> = (0..dim).map(|k| (2.0 * params.gramian_t[(k, k)]).sqrt()).collect();
    for corner in 0..(1usize << dim) {
        let y: Vec<f64> = (0..dim)
            .map(|k| if corner >> k & 1 == 1 { bb.hi[k] + 8.0 * sd[k] } else { bb.lo[k] - 8.0 * sd[k] })
            .collect();
        for k in 0..dim {
            let x: f64 = (0..dim).map(|j| back[(k, j)] * y[j]).sum();
            lo[k] = lo[k].min(x);
            hi[k] = hi[k].max(x);
        }
    }
    // Snap the window to the lattice of the bounding box so its faces are cell faces.
    let mut shape = Vec::with_capacity(dim);
    for k in 0..dim {
        let h = (bb.hi[k] - bb.lo[k]) / BLOWUP_CELLS as f64;
        let below = ((bb.lo[k] - lo[k]) / h).ceil().max(1.0);
        let above = ((hi[k] - bb.hi[k]) / h).ceil().max(1.0);
        lo[k] = bb.lo[k] - below * h;
        hi[k] = bb.hi[k] + above * h;
        shape.push(BLOWUP_CELLS + below as usize + above as usize);
    }
    let window = GridField::new(AaBox::new(lo, hi)?, shape.clone(), vec![0.0; shape.iter().product()])?;
    let cv = window.cell_volume();
    let total = window.values.len();
    let seed = state.clone();
    let count = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut st = seed.fork(i as u64);
            box_probability(spec, &params, &window.cell_center(i), set, &mut st).map(|p| (p.value > 0.5) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(count as f64 * cv)
}

/// `𝒩_{2s,1}(f)`, using the perimeter for indicators.
fn seminorm(spec: &Spec, params: &FractionalParams, f: &ScalarField, state: &mut SamplerState) -> Result<f64> {
    match f {
        ScalarField::Indicator(set) => Ok(perimeter(spec, params, set, state)?.value),
        _ => Ok(besov_seminorm(spec, params, f, state)?.value),
    }
}

/// Ratios `‖f‖_{D/(D−2s)} / 𝒩_{2s,1}(f)` across a family, in the uniform regime.
pub fn check_embedding_uniform(
    spec: &Spec,
    params: &FractionalParams,
    family: &[ScalarField],
    d: f64,
    state: &mut SamplerState,
) -> Result<EmbeddingReport> {
    let profile = classify_regime(spec, Some(d)).map_err(|e| match e {
        KfpError::InvalidDRequest { .. } => KfpError::RegimeMismatch(e.to_string()),
        other => other,
    })?;
    if !matches!(profile.regime, Regime::UniformGrowth { .. }) {
        return Err(KfpError::RegimeMismatch(format!("expected uniform growth, got {:?}", profile.regime)));
    }
    let s = params.s;
    let q = d / (d - 2.0 * s);
    let mut rows = Vec::with_capacity(family.len());
    let mut weak = Vec::new();
    for (i, f) in family.iter().enumerate() {
        let norm = lq_norm(f, q)?;
        let n = seminorm(spec, params, f, state)?;
        rows.push(ReportRow {
            param: i as f64,
            lhs: norm,
            rhs: n,
            ratio: norm / n,
            pass: (norm / n).is_finite(),
        });
        if let ScalarField::Indicator(_) = f {
            // ‖(−𝒜)^s 𝟏_E‖₁ = (s/Γ(1−s)) 𝔓_s(E).
            weak.push(weak_lq_norm(f, q)? / (params.gamma_factor * n));
        }
    }
    let mut rep = EmbeddingReport::from_rows(
        "embedding-uniform",
        "1/c in ‖f‖_{D/(D−2s)} ≤ (1/c) 𝒩_{2s,1}(f)",
        rows,
        UNIFORM_SPREAD,
    );
    rep.note("d", d);
    rep.note("q", q);
    note_spread(&mut rep, "weak", &weak);
    let iso: Vec<f64> = rep.rows.iter().map(|r| 1.0 / r.ratio).collect();
    if family.iter().all(|f| matches!(f, ScalarField::Indicator(_))) {
        rep.note("isoperimetric_min", iso.iter().copied().fold(f64::INFINITY, f64::min));
    }
    Ok(rep)
}

/// Sum-space ratios `‖f‖_{L^{q₀}+L^{q∞}} / 𝒩_{2s,1}(f)` in the mixed regime, with
/// `q₀ = D₀/(D₀−2s)` and `q∞ = D∞/(D∞−2s)`. The numerator is the constructive
/// upper bound from [`sum_space_split`]; on indicators it equals
/// `min{|E|^{1/q₀}, |E|^{1/q∞}}`.
pub fn check_embedding_mixed(
    spec: &Spec,
    params: &FractionalParams,
    family: &[ScalarField],
    state: &mut SamplerState,
) -> Result<EmbeddingReport> {
    let profile = classify_regime(spec, None)?;
    let Regime::MixedGrowth { d_zero, d_infinity, .. } = profile.regime else {
        return Err(KfpError::RegimeMismatch(format!("expected mixed growth, got {:?}", profile.regime)));
    };
    let s = params.s;
    let q0 = d_zero / (d_zero - 2.0 * s);
    let q_inf = d_infinity / (d_infinity - 2.0 * s);
    let mut rows = Vec::with_capacity(family.len());
    for (i, f) in family.iter().enumerate() {
        let split = sum_space_split(f, q0, q_inf)?;
        let n = seminorm(spec, params, f, state)?;
        rows.push(ReportRow {
            param: i as f64,
            lhs: split.bound,
            rhs: n,
            ratio: split.bound / n,
            pass: (split.bound / n).is_finite() && split.disjoint,
        });
    }
    let mut rep = EmbeddingReport::from_rows(
        "embedding-mixed",
        "1/c in ‖f‖_{L^{q₀}+L^{q∞}} ≤ (1/c) 𝒩_{2s,1}(f)",
        rows,
        MIXED_SPREAD,
    );
    rep.pass &= rep.rows.iter().all(|r| r.pass);
    rep.note("d_zero", d_zero);
    rep.note("d_infinity", d_infinity);
    rep.note("q_zero", q0);
    rep.note("q_infinity", q_inf);
    Ok(rep)
}

/// Nodes per axis of the quadrature in [`check_embedding_strong`].
pub const STRONG_NODES: usize = 64;

/// Ratios `‖f‖_{pD/(D−2sp)} / ‖(−𝒜)^s f‖_p` for Gaussian mixtures, both norms
/// by midpoint quadrature on a window of ±`half_width` around the origin.
/// Only finiteness is asserted; the window truncates the slowly decaying
/// tail of `(−𝒜)^s f`, which biases the denominator low.
pub fn check_embedding_strong(
    spec: &Spec,
    params: &FractionalParams,
    family: &[GaussianMixture],
    d: f64,
    half_width: f64,
    state: &mut SamplerState,
) -> Result<EmbeddingReport> {
    let (s, p) = (params.s, params.p);
    if !(d > 2.0 * s * p) {
        return Err(KfpError::BadExponents(format!("need D > 2sp, got D={d}, s={s}, p={p}")));
    }
    let r = p * d / (d - 2.0 * s * p);
    let dim = spec.dim();
    let window = AaBox::new(vec![-half_width; dim], vec![half_width; dim])?;
    let mut rows = Vec::with_capacity(family.len());
    for (i, m) in family.iter().enumerate() {
        let f = ScalarField::Mixture(m.clone());
        let grid = GridField::from_fn(window.clone(), vec![STRONG_NODES; dim], |x| m.eval(x))?;
        let cv = grid.cell_volume();
        let seed = state.fork(i as u64);
        let g = (0..grid.values.len())
            .into_par_iter()
            .map(|k| {
                let mut st = seed.fork(k as u64);
                fractional_power(spec, params, &f, &grid.cell_center(k), &mut st).map(|v| v.value.abs().powf(p))
            })
            .collect::<Result<Vec<_>>>()?;
        let lhs = grid.lp_power(r).powf(1.0 / r);
        let rhs = (cv * g.iter().sum::<f64>()).powf(1.0 / p);
        rows.push(ReportRow {
            param: i as f64,
            lhs,
            rhs,
            ratio: lhs / rhs,
            pass: (lhs / rhs).is_finite(),
        });
    }
    let mut rep = EmbeddingReport::from_rows(
        "embedding-strong",
        "S in ‖f‖_{pD/(D−2sp)} ≤ S ‖(−𝒜)^s f‖_p",
        rows,
        f64::INFINITY,
    );
    rep.note("r", r);
    Ok(rep)
}

fn note_spread(rep: &mut EmbeddingReport, key: &str, ratios: &[f64]) {
    if ratios.is_empty() {
        return;
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    rep.note(&format!("{key}_ratio_min"), lo);
    rep.note(&format!("{key}_spread"), hi / lo);
}
