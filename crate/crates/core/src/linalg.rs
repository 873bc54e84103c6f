//! Complex dense helpers shared by the statistics, surrogate and gradient code.
//!
//! All matrices are `nalgebra::DMatrix<Complex64>`. The problem sizes here are
//! small (N and K in the tens), so dense column-major storage with direct
//! factorizations is the right tool.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `(m + mᴴ)/2`, used to scrub rounding asymmetry from products of
/// commuting Hermitian matrices.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hpd_inverse(m: &CMat, what: &str) -> Result<CMat> {
    match m.clone().cholesky() {
        Some(ch) => Ok(hermitize(&ch.inverse())),
        None => Err(Error::IllConditioned {
            what: format!("{what} is not positive definite"),
            condition: f64::INFINITY,
        }),
    }
}

/// `tr(A B) = Σ_ij A_ij B_ji` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Real part of `tr(A B)`; exact (up to rounding) when both are Hermitian.
pub fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    trace_product(a, b).re
}

pub fn re_trace(a: &CMat) -> f64 {
    a.diagonal().iter().map(|z| z.re).sum()
}

/// `xᴴ A y`.
pub fn quad_form(x: &CVec, a: &CMat, y: &CVec) -> Complex64 {
    x.dotc(&(a * y))
}

/// `x yᴴ`.
pub fn outer(x: &CVec, y: &CVec) -> CMat {
    x * y.adjoint()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Columns of the returned matrix are the eigenvectors.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// 2-norm condition number of a Hermitian matrix (ratio of extreme
/// eigenvalue magnitudes); infinite when the smallest is zero.
pub fn hermitian_condition(m: &CMat) -> f64 {
    let (values, _) = hermitian_eigen(m);
    let max = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = values.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Frobenius norm of `a - b` relative to the Frobenius norm of `b`
/// (absolute when `b` vanishes).
pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Copy of `m` with row and column `k` removed.
pub fn remove_index(m: &CMat, k: usize) -> CMat {
    m.clone().remove_row(k).remove_column(k)
}
