#![allow(dead_code)]

use kfp_core::Spec;

pub fn heat() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 1.0], &[0.0; 4]).unwrap()
}

pub fn kolmogorov() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]).unwrap()
}

pub fn ou() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 1.0, 0.0]).unwrap()
}

pub fn rotation() -> Spec {
    Spec::from_rows(2, &[1.0, 0.0, 0.0, 0.0], &[0.0, -1.0, 1.0, 0.0]).unwrap()
}

pub fn all() -> Vec<(&'static str, Spec)> {
    vec![
        ("heat", heat()),
        ("kolmogorov", kolmogorov()),
        ("ou", ou()),
        ("rotation", rotation()),
    ]
}

/// Plain tensor midpoint-free Simpson rule on a rectangle, used as a
/// brute-force oracle independent of the library's quadrature.
pub fn simpson_2d(f: impl Fn(f64, f64) -> f64, x0: f64, x1: f64, y0: f64, y1: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let hx = (x1 - x0) / n as f64;
    let hy = (y1 - y0) / n as f64;
    let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    let mut acc = 0.0;
    for i in 0..=n {
        let x = x0 + i as f64 * hx;
        let wi = w(i);
        for j in 0..=n {
            acc += wi * w(j) * f(x, y0 + j as f64 * hy);
        }
    }
    acc * hx * hy / 9.0
}
