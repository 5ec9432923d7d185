//! Runs the fifteen acceptance criteria and prints one line per criterion.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use kfp_core::dimension::{dim_infinity, dim_zero};
use kfp_core::embedding::{
    check_blowup, check_coarea, check_embedding_mixed, check_embedding_uniform, lq_norm, sum_space_split,
    weak_lq_norm,
};
use kfp_core::kernel::{chapman_kolmogorov_check, x_normalization, y_normalization, Method};
use kfp_core::mollified::{perimeter_star, perimeter_via_fractional_power};
use kfp_core::nonlocal::{fractional_power, perimeter, FractionalParams};
use kfp_core::{AaBox, GaussianMixture, GridField, RegionSet, SamplerState, ScalarField, Spec};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};

type Outcome = Result<(bool, String), String>;

fn heat() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 1.0], &[0.0; 4]).unwrap()
}

fn kolmogorov() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]).unwrap()
}

fn ou() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).unwrap()
}

fn rotation() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[0.0, -1.0, 1.0, 0.0]).unwrap()
}

fn all() -> [(&'static str, Spec); 4] {
    [("heat", heat()), ("kolmogorov", kolmogorov()), ("ou", ou()), ("rotation", rotation())]
}

fn quarter() -> FractionalParams {
    FractionalParams::new(0.25, 1.0).unwrap()
}

fn square(side: f64) -> RegionSet {
    RegionSet::from_box(AaBox::cube(2, side))
}

fn e<T: std::fmt::Debug>(x: T) -> String {
    format!("{x:?}")
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn gramian_exactness() -> Outcome {
    let k = kolmogorov();
    let mut worst = 0.0f64;
    for t in [0.1, 1.0, 10.0] {
        let g = k.gramian(t).map_err(e)?.gramian_t / t;
        let want = [1.0, t / 2.0, t / 2.0, t * t / 3.0];
        for (got, w) in g.iter().zip(want) {
            worst = worst.max(rel(*got, w));
        }
    }
    Ok((worst <= 1e-10, format!("max relative error {worst:.1e}")))
}

/// det(tK(t)) of the degenerate OU operator as a positive series for small t.
fn ou_det(t: f64) -> f64 {
    if t > 2.0 {
        return 2.0 * t.exp() - t / 2.0 - 1.0 + (t / 2.0) * (2.0 * t).exp() - (2.0 * t).exp();
    }
    let mut sum = 0.0;
    let mut term = t.powi(4) / 24.0;
    for k in 4..80 {
        sum += (2.0 + 2f64.powi(k - 2) * (k as f64 - 4.0)) * term;
        term *= t / (k as f64 + 1.0);
    }
    sum
}

/// det(tK(t)) = t²/4 + (cos 2t − 1)/8 of the rotation operator, by series when small.
fn rotation_det(t: f64) -> f64 {
    if t > 1.0 {
        return t * t / 4.0 + ((2.0 * t).cos() - 1.0) / 8.0;
    }
    let x2 = 4.0 * t * t;
    let mut term = x2 * x2 / 24.0;
    let mut sum = 0.0;
    for k in 2..40 {
        sum += if k % 2 == 0 { term } else { -term } / 8.0;
        term *= x2 / ((2 * k + 1) as f64 * (2 * k + 2) as f64);
    }
    sum
}

fn volume_formulas() -> Outcome {
    let (k, o, r) = (kolmogorov(), ou(), rotation());
    let mut worst = 0.0f64;
    let mut t = 1e-4;
    while t <= 10.0 {
        worst = worst.max(rel(k.volume(t).map_err(e)?, PI / 12f64.sqrt() * t * t));
        worst = worst.max(rel(o.volume(t).map_err(e)?, PI * ou_det(t).sqrt()));
        worst = worst.max(rel(r.volume(t).map_err(e)?, PI * rotation_det(t).sqrt()));
        t *= 1.25;
    }
    Ok((worst <= 1e-8, format!("max relative error {worst:.1e} over t ∈ [1e-4, 10]")))
}

fn kernel_normalization() -> Outcome {
    let (mut wy, mut wx) = (0.0f64, 0.0f64);
    for (_, spec) in all() {
        for t in [0.5, 1.0, 3.0] {
            let p = spec.gramian(t).map_err(e)?;
            for x in [[0.3, -0.2], [-1.0, 0.7]] {
                wy = wy.max((y_normalization(&spec, &p, &x).map_err(e)? - 1.0).abs());
                let want = (-t * spec.trace_b()).exp();
                wx = wx.max((x_normalization(&spec, &p, &x).map_err(e)? - want).abs());
            }
        }
    }
    Ok((wy < 1e-6 && wx < 1e-4, format!("|∫dY − 1| ≤ {wy:.1e}, |∫dX − e^(−t trB)| ≤ {wx:.1e}")))
}

fn classical_reduction() -> Outcome {
    let spec = heat();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t: f64 = 10f64.powf(rng.gen_range(-3.0..2.0));
        let x: DVector<f64> = DVector::from_vec(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let y: DVector<f64> = DVector::from_vec(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let p = spec.gramian(t).map_err(e)?;
        let want = (-(&x - &y).norm_squared() / (4.0 * t)).exp() / (4.0 * PI * t);
        worst = worst.max(rel(spec.kernel_eval(&p, &x, &y), want));
    }
    Ok((worst <= 1e-12, format!("max relative error {worst:.1e} at 100 points")))
}

fn dimension_estimates() -> Outcome {
    let want = [2.0, 4.0, 4.0, 4.0];
    let mut ok = true;
    let mut parts = Vec::new();
    for ((name, spec), d0) in all().into_iter().zip(want) {
        let z = dim_zero(&spec).map_err(e)?.estimate;
        ok &= rel(z, d0) <= 0.02;
        parts.push(format!("{name} D0={z:.4}"));
    }
    let rot = dim_infinity(&rotation()).map_err(e)?.estimate;
    ok &= rel(rot, 2.0) <= 0.025;
    let o = dim_infinity(&ou()).map_err(e)?;
    ok &= o.estimate.is_infinite();
    parts.push(format!("rotation D∞={rot:.4}, ou D∞={}", o.estimate));
    Ok((ok, parts.join(", ")))
}

fn chapman_kolmogorov() -> Outcome {
    let mut st = SamplerState::new(6);
    let q = chapman_kolmogorov_check(&heat(), 0.5, 0.5, &[0.0, 0.0], &[0.4, -0.3], Method::Quadrature, &mut st)
        .map_err(e)?;
    let gap = rel(q.lhs, q.rhs);
    let m = chapman_kolmogorov_check(&kolmogorov(), 0.3, 0.7, &[0.0, 0.0], &[1.0, 1.0], Method::MonteCarlo, &mut st)
        .map_err(e)?;
    let sigma = m.diag("mc_sigma").unwrap_or(f64::NAN);
    let dev = (m.lhs - m.rhs).abs();
    Ok((
        gap < 1e-3 && dev <= 3.0 * sigma,
        format!("heat defect {gap:.1e}; kolmogorov |Δ| {dev:.2e} vs 3σ {:.2e}", 3.0 * sigma),
    ))
}

/// `(−Δ)^s e^{−|X|²/2}` at radius r: `∫₀^∞ ρ^{1+2s} e^{−ρ²/2} J₀(ρr) dρ`, by
/// composite Simpson on [0, 40].
fn fourier_oracle(s: f64, r: f64) -> f64 {
    let n = 40_000;
    let h = 40.0 / n as f64;
    let g = |rho: f64| rho.powf(1.0 + 2.0 * s) * (-0.5 * rho * rho).exp() * libm::j0(rho * r);
    let mut acc = g(0.0) + g(40.0);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    acc * h / 3.0
}

fn fractional_power_oracle() -> Outcome {
    let mut st = SamplerState::new(7);
    let half = FractionalParams::new(0.5, 1.0).map_err(e)?;
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    let mut worst = 0.0f64;
    for x in [[0.0, 0.0], [0.5, 0.0], [1.0, 1.0], [0.0, 2.0], [-1.5, 0.3]] {
        let got = fractional_power(&heat(), &half, &f, &x, &mut st).map_err(e)?.value;
        worst = worst.max(rel(got, fourier_oracle(0.5, x[0].hypot(x[1]))));
    }
    let one = ScalarField::Mixture(GaussianMixture::constant(2, 1.0));
    let mut c = 0.0f64;
    for (_, spec) in all() {
        for x in [[0.0, 0.0], [0.3, -1.2]] {
            c = c.max(fractional_power(&spec, &quarter(), &one, &x, &mut st).map_err(e)?.value.abs());
        }
    }
    Ok((worst < 1e-3 && c < 1e-8, format!("Fourier relative error {worst:.1e}; |(−A)^s 1| ≤ {c:.1e}")))
}

fn perimeter_scaling() -> Outcome {
    let mut st = SamplerState::new(8);
    let base = perimeter(&heat(), &quarter(), &square(1.0), &mut st).map_err(e)?.value;
    let mut worst = 0.0f64;
    for l in [2.0f64, 4.0] {
        let p = perimeter(&heat(), &quarter(), &square(l), &mut st).map_err(e)?.value;
        worst = worst.max(rel(p / base, l.powf(1.5)));
    }
    Ok((worst < 0.01, format!("max deviation from λ^(3/2) {worst:.1e}")))
}

fn cross_route() -> Outcome {
    let k = kolmogorov();
    let set = square(1.0);
    let p = perimeter(&k, &quarter(), &set, &mut SamplerState::new(9)).map_err(e)?.value;
    let via = perimeter_via_fractional_power(&k, &quarter(), &set, &[1e-4, 1e-5, 1e-6]).map_err(e)?;
    let gap = rel(via.limit_estimate, p);
    let raw: Vec<String> = via.times.iter().zip(&via.values).map(|(t, v)| format!("τ={t:.0e}:{v:.3}")).collect();
    Ok((gap < 0.02, format!("perimeter {p:.4} vs extrapolated {:.4} (gap {gap:.1e}; {})", via.limit_estimate, raw.join(" "))))
}

fn coarea() -> Outcome {
    let mut st = SamplerState::new(10);
    let b = |h: f64| AaBox::new(vec![-h, -h], vec![h, h]).unwrap();
    let stair = GridField::staircase(b(1.5), &[b(1.5), b(1.0), b(0.5)], 6).map_err(e)?;
    let tent = GridField::tent(AaBox::cube(2, 1.0), 16).map_err(e)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (sname, spec) in [("heat", heat()), ("kolmogorov", kolmogorov())] {
        for (fname, f) in [("staircase", &stair), ("tent", &tent)] {
            let r = check_coarea(&spec, &quarter(), f, &mut st).map_err(e)?;
            let gap = rel(r.lhs, r.rhs);
            ok &= gap < 0.03;
            parts.push(format!("{sname}/{fname} {gap:.1e}"));
        }
    }
    Ok((ok, format!("gaps {}", parts.join(", "))))
}

fn blowup() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, spec) in [("heat", heat()), ("kolmogorov", kolmogorov())] {
        let r = check_blowup(&spec, &RegionSet::unit_square(), &[1e-2, 1e-3, 1e-4]).map_err(e)?;
        ok &= r.lhs >= 0.99;
        parts.push(format!("{name} |E_t|={:.4}", r.lhs));
    }
    Ok((ok, format!("t=1e-4: {}", parts.join(", "))))
}

fn monotonicity() -> Outcome {
    let k = kolmogorov();
    let set = square(1.0);
    let seq = perimeter_star(&k, &quarter(), &set, &[0.1, 0.05, 0.025, 0.0125]).map_err(e)?;
    let mut monotone = true;
    for i in 1..seq.values.len() {
        monotone &= seq.values[i] >= seq.values[i - 1] - 3.0 * (seq.errors[i] + seq.errors[i - 1]);
    }
    let p = perimeter(&k, &quarter(), &set, &mut SamplerState::new(12)).map_err(e)?.value;
    let want = quarter().gamma_factor * p;
    let gap = rel(seq.limit_estimate, want);
    Ok((monotone && gap < 0.03, format!("monotone={monotone}, limit {:.4} vs {want:.4} (gap {gap:.1e})", seq.limit_estimate)))
}

fn embedding_boundedness() -> Outcome {
    let mut st = SamplerState::new(13);
    let fam: Vec<ScalarField> = [1.0, 2.0, 4.0].iter().map(|&l| ScalarField::Indicator(square(l))).collect();
    let u = check_embedding_uniform(&kolmogorov(), &quarter(), &fam, 4.0, &mut st).map_err(e)?;
    let fam: Vec<ScalarField> = [0.5, 1.0, 4.0].iter().map(|&l| ScalarField::Indicator(square(l))).collect();
    let m = check_embedding_mixed(&rotation(), &quarter(), &fam, &mut st).map_err(e)?;
    Ok((
        u.spread < 1.5 && m.spread < 2.0 && u.pass && m.pass,
        format!("kolmogorov spread {:.3}, rotation band {:.3}", u.spread, m.spread),
    ))
}

fn bundled_fields() -> Vec<ScalarField> {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios"].iter().collect();
    let mut out = Vec::new();
    for name in ["heat", "kolmogorov", "ou", "rotation"] {
        let sc = kfp_cli::load_config(&dir.join(format!("{name}.scenario"))).unwrap();
        for (_, f) in sc.resolve().unwrap().fields {
            match f {
                // Level sets need a grid; sample mixtures on ±8.
                ScalarField::Mixture(m) => {
                    let window = AaBox::new(vec![-8.0, -8.0], vec![8.0, 8.0]).unwrap();
                    out.push(ScalarField::Grid(GridField::from_fn(window, vec![256, 256], |x| m.eval(x)).unwrap()));
                }
                other => out.push(other),
            }
        }
    }
    out
}

fn weak_vs_strong() -> Outcome {
    let fields = bundled_fields();
    let mut ok = true;
    let mut worst_split = 0.0f64;
    for f in &fields {
        for q in [8.0 / 7.0, 4.0 / 3.0, 2.0] {
            ok &= weak_lq_norm(f, q).map_err(e)? <= lq_norm(f, q).map_err(e)? * (1.0 + 1e-12);
        }
        let sp = sum_space_split(f, 8.0 / 7.0, 4.0 / 3.0).map_err(e)?;
        let grid = f.as_grid().map_err(e)?;
        for ((v, a), b) in grid.values.iter().zip(&sp.f1.values).zip(&sp.f2.values) {
            ok &= v.abs() == a.abs() + b.abs() && a * b == 0.0;
        }
        worst_split = worst_split.max(sp.bound / sp.level_bound);
        ok &= sp.bound <= sp.level_bound * (1.0 + 1e-12);
    }
    Ok((ok, format!("{} fields; max split bound / level bound {worst_split:.3}", fields.len())))
}

fn determinism() -> Outcome {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", "kolmogorov.scenario"].iter().collect();
    let path = dir.to_string_lossy().into_owned();
    let argv = ["kfp", "verify", "--target", "coarea", "--config", &path];
    let a = kfp_cli::run_command(&argv).map_err(e)?.to_json();
    let b = kfp_cli::run_command(&argv).map_err(e)?.to_json();
    Ok((a == b, format!("{} bytes, identical={}", a.len(), a == b)))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 15] = [
        ("Gramian exactness", gramian_exactness),
        ("volume formulas", volume_formulas),
        ("kernel normalization", kernel_normalization),
        ("classical reduction", classical_reduction),
        ("dimension estimates", dimension_estimates),
        ("Chapman-Kolmogorov", chapman_kolmogorov),
        ("fractional-power oracle", fractional_power_oracle),
        ("perimeter scaling", perimeter_scaling),
        ("cross-route identity", cross_route),
        ("coarea", coarea),
        ("blow-up lemma", blowup),
        ("monotonicity", monotonicity),
        ("embedding boundedness", embedding_boundedness),
        ("weak vs strong", weak_vs_strong),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(msg) => (false, format!("error: {msg}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<24} {}  {detail} [{:.1}s]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
