mod common;

use std::f64::consts::PI;

use kfp_core::{KfpError, Spec, SpecF32};
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;

/// det(tK(t)) for the degenerate OU operator, summed as a series of positive
/// terms: Σ_{k≥4} (2 + 2^{k−2}(k−4)) t^k / k!. The closed form
/// 2e^t − t/2 − 1 + (t/2)e^{2t} − e^{2t} cancels badly for small t.
fn ou_det(t: f64) -> f64 {
    if t > 2.0 {
        return 2.0 * t.exp() - t / 2.0 - 1.0 + (t / 2.0) * (2.0 * t).exp() - (2.0 * t).exp();
    }
    let mut sum = 0.0;
    let mut tk_over_fact = t.powi(4) / 24.0;
    for k in 4..80 {
        let c = 2.0 + 2f64.powi(k - 2) * (k as f64 - 4.0);
        sum += c * tk_over_fact;
        tk_over_fact *= t / (k as f64 + 1.0);
    }
    sum
}

/// det(tK(t)) = t²/4 + (cos 2t − 1)/8 for the rotation operator, via the
/// alternating series Σ_{k≥2} (−1)^k (2t)^{2k} / (8 (2k)!) when t is small.
fn rotation_det(t: f64) -> f64 {
    if t > 1.0 {
        return t * t / 4.0 + ((2.0 * t).cos() - 1.0) / 8.0;
    }
    let mut sum = 0.0;
    let x2 = 4.0 * t * t;
    let mut term = x2 * x2 / 24.0; // (2t)^4 / 4!
    for k in 2..40 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * term / 8.0;
        term *= x2 / ((2 * k + 1) as f64 * (2 * k + 2) as f64);
    }
    sum
}

#[test]
fn validation_examples() {
    let k = kolmogorov();
    assert!(k.is_hypoelliptic());
    assert_eq!(k.kalman_rank(), 2);
    assert_eq!(k.trace_b(), 0.0);
    assert!(heat().is_hypoelliptic());
    let degenerate = Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap();
    assert!(!degenerate.is_hypoelliptic());
    assert_eq!(degenerate.kalman_rank(), 1);
    let zero = Spec::from_rows(2, &[0.0; 4], &[0.3, 1.0, -2.0, 0.5]).unwrap();
    assert_eq!(zero.kalman_rank(), 0);
    assert!(matches!(
        Spec::from_rows(2, &[1.0, 0.5, 0.0, 1.0], &[0.0; 4]),
        Err(KfpError::NonSymmetricQ(_))
    ));
    assert!(matches!(
        Spec::from_rows(2, &[1.0, 0.0, 0.0, -1.0], &[0.0; 4]),
        Err(KfpError::NegativeEigenvalueQ(_))
    ));
    assert!(matches!(
        Spec::new(DMatrix::identity(2, 2), DMatrix::zeros(3, 3)),
        Err(KfpError::DimensionMismatch(_))
    ));
}

#[test]
fn propagator_examples() {
    let k = kolmogorov();
    let e = k.propagator(2.5).unwrap();
    assert_eq!(e, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.5, 1.0]));
    let r = rotation().propagator(PI / 2.0).unwrap();
    let want = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    assert!((r - want).abs().max() < 1e-15);
}

#[test]
fn kolmogorov_gramian_closed_form() {
    let k = kolmogorov();
    for &t in &[0.1, 1.0, 10.0] {
        let g = k.gramian(t).unwrap().gramian_t / t;
        let want = [1.0, t / 2.0, t / 2.0, t * t / 3.0];
        for (got, w) in g.iter().zip(want) {
            assert!((got - w).abs() <= 1e-10 * w.abs(), "t={t}: {got} vs {w}");
        }
    }
}

#[test]
fn volume_closed_forms() {
    let k = kolmogorov();
    let o = ou();
    let r = rotation();
    let h = heat();
    let mut t = 1e-4;
    while t <= 10.0 {
        let vk = k.volume(t).unwrap();
        let want = PI / 12f64.sqrt() * t * t;
        assert!((vk / want - 1.0).abs() < 1e-8, "kolmogorov t={t}");
        let vo = o.volume(t).unwrap();
        let want = PI * ou_det(t).sqrt();
        assert!((vo / want - 1.0).abs() < 1e-8, "ou t={t}: {vo} vs {want}");
        let vr = r.volume(t).unwrap();
        let want = PI * rotation_det(t).sqrt();
        assert!((vr / want - 1.0).abs() < 1e-8, "rotation t={t}: {vr} vs {want}");
        assert!((h.volume(t).unwrap() / (PI * t) - 1.0).abs() < 1e-13);
        t *= 1.37;
    }
    assert!((h.gramian(1.0).unwrap().gramian_t - DMatrix::identity(2, 2)).abs().max() < 1e-15);
    let v1 = r.volume(1.0).unwrap();
    assert!((v1 - PI * (0.25 + ((2.0f64).cos() - 1.0) / 8.0).sqrt()).abs() < 1e-12);
}

#[test]
fn oracle_series_agree_with_closed_forms_where_both_are_accurate() {
    for &t in &[0.5_f64, 1.0, 1.9] {
        let closed = 2.0 * t.exp() - t / 2.0 - 1.0 + (t / 2.0) * (2.0 * t).exp() - (2.0 * t).exp();
        assert!((ou_det(t) / closed - 1.0).abs() < 1e-9);
    }
    for &t in &[0.6_f64, 0.9] {
        let closed = t * t / 4.0 + ((2.0 * t).cos() - 1.0) / 8.0;
        assert!((rotation_det(t) / closed - 1.0).abs() < 1e-9);
    }
}

#[test]
fn gramian_tends_to_q_at_small_time() {
    for (name, spec) in all() {
        let t = 1e-8;
        let k = spec.gramian(t).unwrap().gramian_t / t;
        let q = spec.q();
        for (a, b) in k.iter().zip(q.iter()) {
            assert!((a - b).abs() <= 1e-6 * q.abs().max(), "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn singular_gramian_is_reported() {
    let degenerate = Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap();
    assert!(matches!(degenerate.gramian(1.0), Err(KfpError::SingularGramian { .. })));
}

#[test]
fn hormander_grid_examples() {
    let grid: Vec<f64> = (0..=36).map(|i| 10f64.powf(-6.0 + 0.25 * i as f64)).collect();
    assert!(kolmogorov().hormander_grid_check(&grid).pass);
    let zero = Spec::from_rows(2, &[0.0; 4], &[0.0; 4]).unwrap();
    let rep = zero.hormander_grid_check(&[0.1, 1.0, 10.0]);
    assert!(!rep.pass && rep.rows.iter().all(|r| !r.pass));
    let with_pi = [0.5, PI, 4.0];
    assert!(rotation().hormander_grid_check(&with_pi).pass);
    assert!(rotation().volume(PI).unwrap() > 0.0);
}

#[test]
fn overflow_is_reported() {
    assert!(matches!(ou().gramian(2000.0), Err(KfpError::OverflowRegime(_))));
}

#[test]
fn single_precision_operator() {
    let k = SpecF32::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]).unwrap();
    let v = k.volume(2.0).unwrap();
    let want = std::f32::consts::PI / 12f32.sqrt() * 4.0;
    assert!((v / want - 1.0).abs() < 1e-5);
}

#[test]
fn mt_distance_examples() {
    use nalgebra::DVector;
    let k = kolmogorov();
    let p = k.gramian(1.0).unwrap();
    let d = k.mt_distance(&p, &DVector::from_vec(vec![0.0, 0.0]), &DVector::from_vec(vec![1.0, 0.0]));
    assert!((d - 2.0).abs() < 1e-12);
    let x = DVector::from_vec(vec![0.4, -1.1]);
    let y = &p.propagator * &x;
    assert!(k.mt_distance(&p, &x, &y).abs() < 1e-12);
    let h = heat();
    let ph = h.gramian(0.3).unwrap();
    let y = DVector::from_vec(vec![1.0, 2.0]);
    assert!((h.mt_distance(&ph, &x, &y) - (&y - &x).norm()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gramian_is_additive(t in 0.01f64..3.0, tau in 0.01f64..3.0, which in 0usize..4) {
        let spec = all()[which].1.clone();
        let ct = spec.gramian(t).unwrap();
        let ctau = spec.gramian(tau).unwrap();
        let full = spec.gramian(t + tau).unwrap().gramian_t;
        let e = &ct.propagator;
        let sum = &ct.gramian_t + e * &ctau.gramian_t * e.transpose();
        let scale = full.abs().max();
        prop_assert!((sum - &full).abs().max() <= 1e-10 * scale);
    }

    #[test]
    fn propagator_group_law(s in -2.0f64..2.0, t in -2.0f64..2.0, which in 0usize..4) {
        let spec = all()[which].1.clone();
        let a = spec.propagator(s).unwrap() * spec.propagator(t).unwrap();
        let b = spec.propagator(s + t).unwrap();
        prop_assert!((a - &b).abs().max() <= 1e-12 * b.abs().max().max(1.0));
    }

    #[test]
    fn volume_positive_iff_kalman(q11 in 0.0f64..2.0, q22 in 0.0f64..2.0, b21 in -1.0f64..1.0) {
        let spec = Spec::from_rows(2, &[q11, 0.0, 0.0, q22], &[0.0, 0.0, b21, 0.0]).unwrap();
        let full = spec.kalman_rank() == 2;
        let v = spec.volume(0.7);
        prop_assert_eq!(v.map(|v| v > 0.0).unwrap_or(false), full);
    }
}

#[test]
fn log_volume_survives_growing_modes() {
    let o = ou();
    for &t in &[20.0_f64, 50.0, 300.0, 1e4] {
        // log det(tK(t)) = 2t + log(t/2 − 1 + (2e^t − t/2 − 1) e^{−2t})
        let log_det = 2.0 * t + (t / 2.0 - 1.0 + (2.0 * (-t).exp() - (t / 2.0 + 1.0) * (-2.0 * t).exp())).ln();
        let want = PI.ln() + 0.5 * log_det;
        let got = o.log_volume(t).unwrap();
        assert!((got - want).abs() < 1e-9 * want.abs(), "t={t}: {got} vs {want}");
    }
    assert!(matches!(o.volume(2000.0), Err(KfpError::OverflowRegime(_))));
    let k = kolmogorov();
    let t = 1e6_f64;
    assert!((k.log_volume(t).unwrap() - (PI / 12f64.sqrt() * t * t).ln()).abs() < 1e-9);
}
