mod common;

use std::f64::consts::PI;

use kfp_core::field::{AaBox, GaussianMixture, GaussianTerm, GridField, RegionSet, ScalarField};
use kfp_core::kernel::{
    apply_semigroup, box_probability, chapman_kolmogorov_check, evolve_mixture, generator_mixture,
    sample_transition, x_normalization, y_normalization, Method,
};
use kfp_core::SamplerState;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use common::*;

#[test]
fn classical_kernel_matches_gaussian_formula() {
    let spec = heat();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let t: f64 = 10f64.powf(rng.gen_range(-3.0..2.0));
        let x = DVector::from_vec(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let y = DVector::from_vec(vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
        let p = spec.gramian(t).unwrap();
        let got = spec.kernel_eval(&p, &x, &y);
        let want = (-(&x - &y).norm_squared() / (4.0 * t)).exp() / (4.0 * PI * t);
        assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "t={t} got={got} want={want}");
    }
}

#[test]
fn kernel_integrates_to_one_in_y_and_to_decay_in_x() {
    for (name, spec) in all() {
        for &t in &[0.5, 1.0] {
            let p = spec.gramian(t).unwrap();
            let y_mass = y_normalization(&spec, &p, &[0.3, -0.2]).unwrap();
            assert!((y_mass - 1.0).abs() < 1e-6, "{name} t={t} ∫dY={y_mass}");
            let x_mass = x_normalization(&spec, &p, &[0.3, -0.2]).unwrap();
            let want = (-t * spec.trace_b()).exp();
            assert!((x_mass - want).abs() < 1e-4, "{name} t={t} ∫dX={x_mass} want {want}");
        }
    }
}

#[test]
fn kernel_is_positive_far_out() {
    for (_, spec) in all() {
        let p = spec.gramian(0.7).unwrap();
        let v = spec.kernel_eval(&p, &DVector::from_vec(vec![0.0, 0.0]), &DVector::from_vec(vec![3.0, -2.0]));
        assert!(v > 0.0);
    }
}

fn sample_cov(samples: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = samples.len() / 2;
    let mut mean = [0.0; 2];
    for s in samples.chunks(2) {
        mean[0] += s[0];
        mean[1] += s[1];
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    let mut c = DMatrix::zeros(2, 2);
    for s in samples.chunks(2) {
        let d = [s[0] - mean[0], s[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[(i, j)] += d[i] * d[j];
            }
        }
    }
    (mean.to_vec(), c / (n as f64 - 1.0))
}

#[test]
fn transition_samples_have_doubled_gramian_covariance() {
    let mut st = SamplerState::new(2024);
    let heat_p = heat().gramian(1.0).unwrap();
    let (m, c) = sample_cov(&sample_transition(&heat_p, &[0.0, 0.0], 1_000_000, &mut st));
    assert!(m[0].abs() < 5e-3 && m[1].abs() < 5e-3);
    for (got, want) in c.iter().zip([2.0, 0.0, 0.0, 2.0]) {
        assert!((got - want).abs() < 1e-2, "{c}");
    }
    let kol = kolmogorov().gramian(1.0).unwrap();
    let (_, c) = sample_cov(&sample_transition(&kol, &[0.0, 0.0], 1_000_000, &mut st));
    for (got, want) in c.iter().zip([2.0, 1.0, 1.0, 2.0 / 3.0]) {
        assert!((got - want).abs() < 1e-2, "{c}");
    }
}

#[test]
fn sampling_replays_exactly() {
    let p = kolmogorov().gramian(1.0).unwrap();
    let a = sample_transition(&p, &[1.0, 2.0], 5, &mut SamplerState::new(9));
    let b = sample_transition(&p, &[1.0, 2.0], 5, &mut SamplerState::new(9));
    assert_eq!(a[..2], b[..2]);
}

#[test]
fn constants_are_fixed_by_the_semigroup() {
    let one = ScalarField::Mixture(GaussianMixture::constant(2, 1.0));
    let mut st = SamplerState::new(1);
    for (_, spec) in all() {
        let p = spec.gramian(0.8).unwrap();
        let v = apply_semigroup(&spec, &p, &one, &[1.0, -2.0], Method::Analytic, &mut st).unwrap();
        assert_eq!(v.value, 1.0);
    }
}

#[test]
fn heat_on_standard_gaussian_matches_convolution() {
    let spec = heat();
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    let mut st = SamplerState::new(1);
    for &t in &[0.1, 1.0, 3.0] {
        let p = spec.gramian(t).unwrap();
        let v = apply_semigroup(&spec, &p, &f, &[0.0, 0.0], Method::Analytic, &mut st).unwrap();
        assert!((v.value - 1.0 / (1.0 + 2.0 * t)).abs() < 1e-14);
        // Independent 2-D Simpson convolution.
        let conv = simpson_2d(
            |a, b| {
                let k = (-(a * a + b * b) / (4.0 * t)).exp() / (4.0 * PI * t);
                k * (-(a * a + b * b) / 2.0).exp()
            },
            -12.0,
            12.0,
            -12.0,
            12.0,
            600,
        );
        assert!((conv - v.value).abs() < 1e-8, "t={t}: {conv} vs {}", v.value);
    }
}

#[test]
fn analytic_matches_monte_carlo_for_kolmogorov() {
    let spec = kolmogorov();
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    let p = spec.gramian(1.0).unwrap();
    let mut st = SamplerState::new(77);
    let a = apply_semigroup(&spec, &p, &f, &[1.0, 1.0], Method::Analytic, &mut st).unwrap();
    let mc = apply_semigroup(&spec, &p, &f, &[1.0, 1.0], Method::MonteCarlo, &mut st).unwrap();
    let hw = mc.ci.unwrap();
    assert!((a.value - mc.value).abs() < hw * 1.5, "{} vs {} ± {hw}", a.value, mc.value);
}

#[test]
fn analytic_matches_monte_carlo_for_anisotropic_rotation() {
    let spec = rotation();
    let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 1.5]);
    let mix = GaussianMixture::new(
        2,
        0.3,
        vec![
            GaussianTerm::new(2.0, vec![0.5, -1.0], cov).unwrap(),
            GaussianTerm::isotropic(-0.7, vec![-1.0, 0.0], 0.3).unwrap(),
        ],
    )
    .unwrap();
    let f = ScalarField::Mixture(mix);
    let p = spec.gramian(0.6).unwrap();
    let mut st = SamplerState::new(5);
    let a = apply_semigroup(&spec, &p, &f, &[0.2, 0.4], Method::Analytic, &mut st).unwrap();
    let mc = apply_semigroup(&spec, &p, &f, &[0.2, 0.4], Method::MonteCarlo, &mut st).unwrap();
    let sigma = mc.ci.unwrap() / 1.96;
    assert!((a.value - mc.value).abs() < 4.0 * sigma, "{} vs {}", a.value, mc.value);
}

#[test]
fn semigroup_law_on_mixtures() {
    let f = GaussianMixture::new(
        2,
        0.1,
        vec![GaussianTerm::new(1.5, vec![0.3, -0.4], DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap()],
    )
    .unwrap();
    let mut st = SamplerState::new(0);
    for (name, spec) in all() {
        let (t, tau) = (0.4, 0.9);
        let pt = spec.gramian(t).unwrap();
        let ptau = spec.gramian(tau).unwrap();
        let pfull = spec.gramian(t + tau).unwrap();
        let inner = ScalarField::Mixture(evolve_mixture(&spec, &ptau, &f).unwrap());
        for x in [[0.0, 0.0], [1.0, -0.5], [-2.0, 1.0]] {
            let two_step = apply_semigroup(&spec, &pt, &inner, &x, Method::Analytic, &mut st).unwrap().value;
            let one_step = apply_semigroup(&spec, &pfull, &ScalarField::Mixture(f.clone()), &x, Method::Analytic, &mut st)
                .unwrap()
                .value;
            assert!((two_step - one_step).abs() < 1e-10, "{name}: {two_step} vs {one_step}");
        }
    }
}

#[test]
fn small_time_recovers_the_field() {
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    let mut st = SamplerState::new(0);
    for (_, spec) in all() {
        let p = spec.gramian(1e-6).unwrap();
        for x in [[0.0, 0.0], [0.7, -1.2]] {
            let v = apply_semigroup(&spec, &p, &f, &x, Method::Analytic, &mut st).unwrap().value;
            assert!((v - f.eval(&x)).abs() < 1e-3);
        }
    }
}

#[test]
fn generator_matches_difference_quotient() {
    let mix = GaussianMixture::new(
        2,
        0.0,
        vec![GaussianTerm::new(1.0, vec![0.4, -0.3], DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.1, 0.6])).unwrap()],
    )
    .unwrap();
    let f = ScalarField::Mixture(mix.clone());
    let mut st = SamplerState::new(0);
    for (name, spec) in all() {
        let x = [0.9, 0.2];
        let h = 1e-4;
        let ph = apply_semigroup(&spec, &spec.gramian(h).unwrap(), &f, &x, Method::Analytic, &mut st).unwrap().value;
        let p2h =
            apply_semigroup(&spec, &spec.gramian(2.0 * h).unwrap(), &f, &x, Method::Analytic, &mut st).unwrap().value;
        let f0 = f.eval(&x);
        // Second-order one-sided difference.
        let fd = (-3.0 * f0 + 4.0 * ph - p2h) / (2.0 * h);
        let g = generator_mixture(&spec, &mix, &x);
        assert!((fd - g).abs() < 1e-5, "{name}: fd={fd} closed={g}");
    }
}

#[test]
fn quadrant_probability_is_one_quarter() {
    let spec = heat();
    let t = 0.3;
    let p = spec.gramian(t).unwrap();
    let l = 20.0 * t.sqrt();
    let set = RegionSet::from_box(AaBox::new(vec![0.0, 0.0], vec![l, l]).unwrap());
    let v = box_probability(&spec, &p, &[0.0, 0.0], &set, &mut SamplerState::new(0)).unwrap();
    assert!((v.value - 0.25).abs() < 1e-14);
}

#[test]
fn mass_concentrates_at_small_time() {
    let spec = kolmogorov();
    let p = spec.gramian(1e-4).unwrap();
    let set = RegionSet::from_box(AaBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap());
    let v = box_probability(&spec, &p, &[0.0, 0.0], &set, &mut SamplerState::new(0)).unwrap();
    assert!(v.value >= 0.999);
    let big = RegionSet::from_box(AaBox::new(vec![-1e3, -1e3], vec![1e3, 1e3]).unwrap());
    let v = box_probability(&spec, &spec.gramian(1.0).unwrap(), &[0.5, 0.5], &big, &mut SamplerState::new(0)).unwrap();
    assert!((v.value - 1.0).abs() < 1e-14);
}

#[test]
fn rectangle_probability_matches_brute_force() {
    let set = RegionSet::from_box(AaBox::new(vec![-0.3, 0.1], vec![0.8, 0.9]).unwrap());
    for (name, spec) in all() {
        for &t in &[0.05, 0.5, 2.0] {
            let p = spec.gramian(t).unwrap();
            let x = [0.2, 0.3];
            let got = box_probability(&spec, &p, &x, &set, &mut SamplerState::new(0)).unwrap().value;
            let xv = DVector::from_vec(x.to_vec());
            let want = simpson_2d(
                |a, b| spec.kernel_eval(&p, &xv, &DVector::from_vec(vec![a, b])),
                -0.3,
                0.8,
                0.1,
                0.9,
                1200,
            );
            assert!((got - want).abs() < 1e-7, "{name} t={t}: {got} vs {want}");
        }
    }
}

#[test]
fn ball_and_three_dimensional_boxes_match_monte_carlo() {
    let spec = rotation();
    let p = spec.gramian(0.4).unwrap();
    let ball = RegionSet::ball(vec![0.3, 0.1], 0.7).unwrap();
    let mut st = SamplerState::new(4);
    let exact = box_probability(&spec, &p, &[0.0, 0.0], &ball, &mut st).unwrap().value;
    let f = ScalarField::Indicator(ball);
    let mc = apply_semigroup(&spec, &p, &f, &[0.0, 0.0], Method::MonteCarlo, &mut st).unwrap();
    assert!((exact - mc.value).abs() < 2.0 * mc.ci.unwrap(), "{exact} vs {}", mc.value);

    let spec3 = kfp_core::Spec::from_rows(
        3,
        &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    )
    .unwrap();
    assert!(spec3.is_hypoelliptic());
    let p3 = spec3.gramian(1.0).unwrap();
    let cube = RegionSet::from_box(AaBox::new(vec![-0.5, -0.2, -0.1], vec![1.0, 0.6, 0.4]).unwrap());
    let exact = box_probability(&spec3, &p3, &[0.1, 0.0, 0.0], &cube, &mut st).unwrap().value;
    let mc = apply_semigroup(&spec3, &p3, &ScalarField::Indicator(cube), &[0.1, 0.0, 0.0], Method::MonteCarlo, &mut st)
        .unwrap();
    assert!((exact - mc.value).abs() < 2.0 * mc.ci.unwrap(), "{exact} vs {}", mc.value);
}

#[test]
fn grid_quadrature_matches_cellwise_monte_carlo() {
    let spec = kolmogorov();
    let p = spec.gramian(0.2).unwrap();
    let g = GridField::tent(AaBox::cube(2, 1.0), 16).unwrap();
    let f = ScalarField::Grid(g);
    let mut st = SamplerState::new(8);
    let q = apply_semigroup(&spec, &p, &f, &[0.5, 0.4], Method::Quadrature, &mut st).unwrap().value;
    let mc = apply_semigroup(&spec, &p, &f, &[0.5, 0.4], Method::MonteCarlo, &mut st).unwrap();
    assert!((q - mc.value).abs() < 2.0 * mc.ci.unwrap(), "{q} vs {}", mc.value);
    let mix = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    assert!(apply_semigroup(&spec, &p, &mix, &[0.0, 0.0], Method::Quadrature, &mut st).is_err());
}

#[test]
fn chapman_kolmogorov_holds() {
    let mut st = SamplerState::new(3);
    let r = chapman_kolmogorov_check(&heat(), 0.5, 0.5, &[0.0, 0.0], &[0.4, -0.3], Method::Quadrature, &mut st).unwrap();
    assert!(r.pass && r.diag("relative_defect").unwrap() < 1e-3, "{r:?}");
    let r =
        chapman_kolmogorov_check(&kolmogorov(), 0.3, 0.7, &[0.0, 0.0], &[1.0, 1.0], Method::MonteCarlo, &mut st).unwrap();
    assert!(r.pass, "{r:?}");
    let r = chapman_kolmogorov_check(&heat(), 0.5, 1e-12, &[0.0, 0.0], &[1.0, 1.0], Method::Quadrature, &mut st).unwrap();
    assert!(r.notes.iter().any(|n| n.starts_with("skip")));
}

#[test]
fn l_infinity_and_l1_contraction() {
    let g = GridField::tent(AaBox::cube(2, 1.0), 8).unwrap();
    let sup = 1.0;
    let f = ScalarField::Grid(g.clone());
    let mut st = SamplerState::new(0);
    for (name, spec) in all() {
        if spec.trace_b() < 0.0 {
            continue;
        }
        let t = 0.3;
        let p = spec.gramian(t).unwrap();
        // ‖P_t f‖₁ by Simpson over a window holding the mass.
        let mass = simpson_2d(
            |a, b| {
                let v = apply_semigroup(&spec, &p, &f, &[a, b], Method::Quadrature, &mut SamplerState::new(0)).unwrap().value;
                assert!(v >= -1e-15 && v <= sup + 1e-12);
                v
            },
            -4.0,
            5.0,
            -5.0,
            6.0,
            120,
        );
        let l1 = g.lp_power(1.0);
        assert!(mass <= l1 * (1.0 + 1e-3), "{name}: {mass} vs {l1}");
        let _ = &mut st;
    }
}
