//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative eigenvalue floor (times N) tolerated before a matrix is rejected as
/// not positive semi-definite.
pub const PSD_TOLERANCE: f64 = 1e-9;

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Hermitian eigendecomposition with eigenvalues clipped at zero.
///
/// Fails when the most negative eigenvalue is below `-PSD_TOLERANCE * N` times
/// `scale` (pass 1.0 for unit-diagonal correlation matrices).
pub fn psd_eigen(m: &CMat, scale: f64) -> Result<(DVector<f64>, CMat)> {
    let n = m.nrows();
    let eig = hermitize(m).symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE * n as f64 * scale {
        return Err(Error::Numeric(format!(
            "matrix is not positive semi-definite (min eigenvalue {min:.3e})"
        )));
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    Ok((vals, eig.eigenvectors))
}

pub fn psd_repair(m: &CMat, scale: f64) -> Result<CMat> {
    let (vals, vecs) = psd_eigen(m, scale)?;
    let d = CMat::from_diagonal(&vals.map(|v| Complex64::new(v, 0.0)));
    Ok(hermitize(&(&vecs * d * vecs.adjoint())))
}

/// Principal square root of a Hermitian PSD matrix.
pub fn hermitian_sqrt(m: &CMat, scale: f64) -> Result<CMat> {
    let (vals, vecs) = psd_eigen(m, scale)?;
    let d = CMat::from_diagonal(&vals.map(|v| Complex64::new(v.sqrt(), 0.0)));
    Ok(&vecs * d * vecs.adjoint())
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_hpd(m: &CMat) -> Result<CMat> {
    let h = hermitize(m);
    match h.clone().cholesky() {
        Some(c) => Ok(hermitize(&c.inverse())),
        None => h
            .try_inverse()
            .ok_or_else(|| Error::Numeric("matrix is singular".into())),
    }
}

/// tr(A B) without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// x^H A y
pub fn quad_form(x: &CVec, a: &CMat, y: &CVec) -> Complex64 {
    x.dotc(&(a * y))
}

/// x^H y over plain slices.
#[inline]
pub fn dotc(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    let (mut rr, mut ii, mut ri, mut ir) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        rr += a.re * b.re;
        ii += a.im * b.im;
        ri += a.re * b.im;
        ir += a.im * b.re;
    }
    Complex64::new(rr + ii, ri - ir)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn real_trace(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}
