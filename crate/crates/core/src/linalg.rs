//! Dense complex linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::Float;

pub type CMat = DMatrix<Complex64>;

/// Replaces `m` by its Hermitian part `(m + m^H) / 2`.
pub fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in i + 1..n {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

/// Squared Frobenius norm.
pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Lower factor `L` with `L L^H = m` for a Hermitian PSD matrix.
///
/// Tries a Cholesky factorization first; when that fails (semidefinite or
/// slightly indefinite input) the eigen-decomposition is used with negative
/// eigenvalues clipped to zero. The flag reports whether clipping was used.
pub fn psd_factor(m: &CMat) -> (CMat, bool) {
    let n = m.nrows();
    if m.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return (CMat::zeros(n, n), false);
    }
    if let Some(ch) = m.clone().cholesky() {
        return (ch.unpack(), false);
    }
    let eig = m.clone().symmetric_eigen();
    let mut v = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            v[(i, j)] *= s;
        }
    }
    (v, true)
}

/// Inverse and log-determinant of a Hermitian positive-definite matrix.
pub fn hpd_inverse_logdet(m: &CMat) -> Option<(CMat, f64)> {
    let ch = m.clone().cholesky()?;
    let l = ch.l_dirty();
    let mut logdet = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)].re;
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        logdet += 2.0 * d.ln();
    }
    Some((ch.inverse(), logdet))
}

/// Solves the real symmetric system `a x = b`, falling back to LU when
/// `a` is not positive definite.
pub fn solve_sym(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

/// `tr(a b)` without forming the product.
pub fn trace_prod(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// Descending singular values.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}
