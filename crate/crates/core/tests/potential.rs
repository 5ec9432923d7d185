mod common;

use kfp_core::nonlocal::{default_z_grid, maximal_function, riesz_potential};
use kfp_core::quadrature::adaptive;
use kfp_core::special::gamma;
use kfp_core::{GaussianMixture, GaussianTerm, KfpError, SamplerState, ScalarField};

use common::*;

/// Classical Riesz potential of `e^{−|Y|²/2}` in the plane by direct
/// convolution with `Γ(1−s)/(4^s π Γ(s)) |Z|^{2s−2}`, in polar coordinates
/// around `x` so the kernel singularity is absorbed by the Jacobian.
fn riesz_by_convolution(s: f64, x: [f64; 2]) -> f64 {
    let c = gamma(1.0 - s) / (4f64.powf(s) * std::f64::consts::PI * gamma(s));
    let n_theta = 256;
    let ring = |r: f64| {
        let mut acc = 0.0;
        for k in 0..n_theta {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n_theta as f64;
            let (y0, y1) = (x[0] + r * th.cos(), x[1] + r * th.sin());
            acc += (-0.5 * (y0 * y0 + y1 * y1)).exp();
        }
        acc * 2.0 * std::f64::consts::PI / n_theta as f64
    };
    let r_max = x[0].hypot(x[1]) + 12.0;
    let breaks: Vec<f64> = (1..(r_max as usize)).map(|k| k as f64).collect();
    c * adaptive(|r| r.powf(2.0 * s - 1.0) * ring(r), 0.0, r_max, &breaks, 1e-14, 1e-12, 4000).value
}

#[test]
fn heat_riesz_potential_matches_direct_convolution() {
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    let mut st = SamplerState::new(20);
    for s in [0.5, 0.75] {
        for x in [[0.0, 0.0], [1.0, 0.5], [-2.0, 1.5]] {
            let got = riesz_potential(&heat(), s, &f, &x, &mut st).unwrap();
            let want = riesz_by_convolution(s, x);
            println!("s={s} {x:?}: {} ± {:.1e} vs {want}", got.value, got.error);
            assert!((got.value / want - 1.0).abs() < 1e-5, "s={s} {x:?}: {} vs {want}", got.value);
        }
    }
}

#[test]
fn riesz_potential_tail_divergence() {
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    let mut st = SamplerState::new(21);
    for s in [1.0, 1.5] {
        assert!(matches!(
            riesz_potential(&rotation(), s, &f, &[0.0, 0.0], &mut st),
            Err(KfpError::DivergentTail(_))
        ));
        assert!(matches!(riesz_potential(&heat(), s, &f, &[0.0, 0.0], &mut st), Err(KfpError::DivergentTail(_))));
    }
    // D∞ = 4 leaves room for order 1 under the Kolmogorov operator.
    let v = riesz_potential(&kolmogorov(), 1.0, &f, &[0.0, 0.0], &mut st).unwrap();
    assert!(v.value.is_finite() && v.value > 0.0);
    let with_constant = ScalarField::Mixture(GaussianMixture::new(2, 0.5, GaussianMixture::standard(2, 1.0).terms).unwrap());
    assert!(matches!(
        riesz_potential(&heat(), 0.5, &with_constant, &[0.0, 0.0], &mut st),
        Err(KfpError::DivergentTail(_))
    ));
}

#[test]
fn riesz_potential_is_homogeneous_in_the_field() {
    let mut st = SamplerState::new(22);
    let base = GaussianMixture::new(2, 0.0, vec![GaussianTerm::isotropic(1.3, vec![0.2, -0.4], 0.6).unwrap()]).unwrap();
    for (name, spec) in [("kolmogorov", kolmogorov()), ("ou", ou()), ("rotation", rotation())] {
        let a = riesz_potential(&spec, 0.25, &ScalarField::Mixture(base.clone()), &[0.1, 0.3], &mut st).unwrap().value;
        let b = riesz_potential(&spec, 0.25, &ScalarField::Mixture(base.scaled(2.0)), &[0.1, 0.3], &mut st).unwrap().value;
        assert!((b - 2.0 * a).abs() < 1e-12 * b.abs(), "{name}: {a} {b}");
        assert!(a > 0.0, "{name}");
    }
}

#[test]
fn maximal_function_of_constants_is_the_constant() {
    let one = ScalarField::Mixture(GaussianMixture::constant(2, 1.0));
    let mut st = SamplerState::new(23);
    for (name, spec) in all() {
        for x in [[0.0, 0.0], [2.0, -1.0]] {
            let m = maximal_function(&spec, &one, &x, &default_z_grid(), &mut st).unwrap();
            assert!((m - 1.0).abs() < 1e-10, "{name}: {m}");
        }
    }
}

#[test]
fn maximal_function_brackets_a_gaussian_bump() {
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    let mut st = SamplerState::new(24);
    let at_peak = maximal_function(&heat(), &f, &[0.0, 0.0], &default_z_grid(), &mut st).unwrap();
    assert!(at_peak >= 1.0 - 1e-2 && at_peak <= 1.0 + 1e-12, "{at_peak}");
    for (name, spec) in all() {
        for x in [[0.0, 0.0], [1.0, 1.0], [-3.0, 0.5]] {
            let m = maximal_function(&spec, &f, &x, &default_z_grid(), &mut st).unwrap();
            let fx = f.eval(&x);
            assert!(m <= 1.0 + 1e-12, "{name} {x:?}: {m}");
            assert!(m >= fx * (1.0 - 1e-2), "{name} {x:?}: {m} < {fx}");
        }
    }
}
