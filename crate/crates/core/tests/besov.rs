mod common;

use kfp_core::besov::{besov_seminorm, besov_seminorm_on, BesovGrid};
use kfp_core::nonlocal::{perimeter, FractionalParams};
use kfp_core::{AaBox, GaussianMixture, GridField, KfpError, RegionSet, SamplerState, ScalarField, Spec};

use common::*;

#[test]
fn indicator_seminorm_is_the_perimeter() {
    let fp = FractionalParams::new(0.25, 1.0).unwrap();
    let set = RegionSet::from_box(AaBox::new(vec![-0.5, 0.0], vec![1.0, 1.0]).unwrap());
    let f = ScalarField::Indicator(set.clone());
    for (name, spec) in all() {
        let p = perimeter(&spec, &fp, &set, &mut SamplerState::new(40)).unwrap();
        let b = besov_seminorm(&spec, &fp, &f, &mut SamplerState::new(41)).unwrap();
        println!("{name}: {} vs {} (± {:.1e} / ci {:.1e})", b.value, p.value, b.error, b.ci);
        assert!((b.value / p.value - 1.0).abs() < 0.02, "{name}");
        assert!((b.value - p.value).abs() <= 2.0 * (b.uncertainty() + p.error), "{name}");
    }
}

#[test]
fn gaussian_seminorm_of_order_two_matches_closed_form() {
    // Heat, f = e^{−|X|²/2}: J(t) = 2π t/(1+t), so 𝒩² = 2π ∫ t^{−2s}/(1+t) dt = 2π²/sin(2πs).
    let f = ScalarField::Mixture(GaussianMixture::standard(2, 1.0));
    for s in [0.2, 0.3] {
        let fp = FractionalParams::new(s, 2.0).unwrap();
        let grid = BesovGrid { samples: 1 << 18, ..BesovGrid::default() };
        let b = besov_seminorm_on(&heat(), &fp, &f, &grid, &mut SamplerState::new(42)).unwrap();
        let pi = std::f64::consts::PI;
        let want = (2.0 * pi * pi / (2.0 * pi * s).sin()).sqrt();
        println!("s={s}: {} ± {:.1e} ci {:.1e} vs {want}", b.value, b.error, b.ci);
        assert!((b.value - want).abs() < 3.0 * b.uncertainty());
        assert!((b.value / want - 1.0).abs() < 0.02);
    }
}

#[test]
fn indicator_of_order_two_is_a_root_of_a_perimeter() {
    // (𝟏_E(Y) − 𝟏_E(X))² = |𝟏_E(Y) − 𝟏_E(X)|, so 𝒩_{2s,2}(𝟏_E)² is the perimeter of order 2s.
    let set = RegionSet::unit_square();
    let b = besov_seminorm(&kolmogorov(), &FractionalParams::new(0.125, 2.0).unwrap(), &ScalarField::Indicator(set.clone()), &mut SamplerState::new(43)).unwrap();
    let p = perimeter(&kolmogorov(), &FractionalParams::new(0.25, 1.0).unwrap(), &set, &mut SamplerState::new(44)).unwrap();
    println!("{} vs {}", b.value * b.value, p.value);
    assert!((b.value * b.value / p.value - 1.0).abs() < 0.02);
    // Order 2s = 1/2 at p = 2 is where indicators stop being integrable near t = 0.
    assert!(matches!(
        besov_seminorm(&heat(), &FractionalParams::new(0.25, 2.0).unwrap(), &ScalarField::Indicator(set), &mut SamplerState::new(45)),
        Err(KfpError::SlowSmallTimeDecay { .. })
    ));
}

#[test]
fn zero_and_constant_fields() {
    let fp = FractionalParams::new(0.25, 1.0).unwrap();
    let mut st = SamplerState::new(46);
    let zero = ScalarField::Grid(GridField::from_fn(AaBox::cube(2, 1.0), vec![4, 4], |_| 0.0).unwrap());
    assert_eq!(besov_seminorm(&kolmogorov(), &fp, &zero, &mut st).unwrap().value, 0.0);
    let constant = ScalarField::Mixture(GaussianMixture::constant(2, 3.0));
    assert_eq!(besov_seminorm(&rotation(), &fp, &constant, &mut st).unwrap().value, 0.0);
    assert_eq!(besov_seminorm(&heat(), &fp, &ScalarField::Indicator(RegionSet::empty(2)), &mut st).unwrap().value, 0.0);
}

#[test]
fn rejections_and_replay() {
    let set = ScalarField::Indicator(RegionSet::unit_square());
    let fp = FractionalParams::new(0.25, 1.0).unwrap();
    let shrinking = Spec::from_rows(2, &[1.0, 0.0, 0.0, 1.0], &[-1.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(matches!(
        besov_seminorm(&shrinking, &fp, &set, &mut SamplerState::new(1)),
        Err(KfpError::TraceConditionViolated(_))
    ));
    let odd = FractionalParams::new(0.25, 1.5).unwrap();
    assert!(matches!(besov_seminorm(&heat(), &odd, &set, &mut SamplerState::new(1)), Err(KfpError::InvalidParameter(_))));
    let a = besov_seminorm(&kolmogorov(), &fp, &set, &mut SamplerState::new(9)).unwrap();
    let b = besov_seminorm(&kolmogorov(), &fp, &set, &mut SamplerState::new(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seminorm_is_homogeneous_on_grids() {
    let fp = FractionalParams::new(0.25, 1.0).unwrap();
    let g = GridField::tent(AaBox::cube(2, 1.0), 8).unwrap();
    let a = besov_seminorm(&heat(), &fp, &ScalarField::Grid(g.clone()), &mut SamplerState::new(47)).unwrap();
    let b = besov_seminorm(&heat(), &fp, &ScalarField::Grid(g.map_values(|v| 2.5 * v)), &mut SamplerState::new(47)).unwrap();
    // Same samples, scaled integrand.
    assert!((b.value / a.value - 2.5).abs() < 1e-9);
}
