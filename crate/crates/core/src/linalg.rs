//! Dense linear-algebra helpers: matrix exponential, PSD square roots, ranks.

use nalgebra::DMatrix;

use crate::scalar::{lit, to_f64, Real};

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Backward-error bounds for degree 3, 5, 7, 9, 13 in double precision.
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068,
    5.371920351148152,
];

/// Maximum absolute column sum.
pub fn norm1<T: Real>(a: &DMatrix<T>) -> T {
    let mut best = T::zero();
    for col in a.column_iter() {
        let s = col.iter().fold(T::zero(), |acc, v| acc + v.abs());
        if s > best {
            best = s;
        }
    }
    best
}

fn pade_uv<T: Real>(a: &DMatrix<T>, coeffs: &[f64]) -> (DMatrix<T>, DMatrix<T>) {
    let n = a.nrows();
    let id = DMatrix::<T>::identity(n, n);
    let a2 = a * a;
    // Even powers I, A^2, A^4, ...
    let m = coeffs.len() - 1;
    let mut powers = vec![id.clone(), a2.clone()];
    while 2 * (powers.len() - 1) < m {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u = DMatrix::<T>::zeros(n, n);
    let mut v = DMatrix::<T>::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k + 1 <= m {
            u += p * lit::<T>(coeffs[2 * k + 1]);
        }
        if 2 * k <= m {
            v += p * lit::<T>(coeffs[2 * k]);
        }
    }
    (a * u, v)
}

fn pade13_uv<T: Real>(a: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    let b: Vec<T> = PADE13.iter().map(|&x| lit(x)).collect();
    let n = a.nrows();
    let id = DMatrix::<T>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant
/// (Higham 2005). Returns `None` when the result is not finite.
pub fn expm<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return Some(a.clone());
    }
    let norm = to_f64(norm1(a));
    if !norm.is_finite() {
        return None;
    }
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_uv(a, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_uv(a, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_uv(a, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_uv(a, &PADE9);
        (u, v, 0)
    } else {
        let s = (norm / THETA[4]).log2().ceil().max(0.0) as i32;
        let scaled = a * lit::<T>(2f64.powi(-s));
        let (u, v) = pade13_uv(&scaled);
        (u, v, s as u32)
    };
    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom.lu().solve(&numer)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().all(|x| x.is_finite()) {
        Some(r)
    } else {
        None
    }
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn symmetrize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * lit::<T>(0.5)
}

/// Square root of a symmetric positive semidefinite matrix; negative
/// eigenvalues (roundoff) are clamped to zero.
pub fn psd_sqrt<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let eig = symmetrize(a).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| if l > T::zero() { l.sqrt() } else { T::zero() });
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&d) * v.transpose()
}

pub fn min_eigenvalue<T: Real>(a: &DMatrix<T>) -> T {
    symmetrize(a).symmetric_eigen().eigenvalues.min()
}

/// Numerical rank: singular values below `smax * n * 1e-12` count as zero.
pub fn numerical_rank<T: Real>(a: &DMatrix<T>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= T::zero() {
        return 0;
    }
    let n = a.nrows().max(a.ncols());
    let tol = smax * lit::<T>(n as f64 * 1e-12);
    sv.iter().filter(|&&s| s > tol).count()
}
