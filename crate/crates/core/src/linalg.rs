//! Small dense linear-algebra helpers shared by the filter and the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Number of diagonal jitter escalations tried before a factorization is
/// declared failed.
pub const JITTER_ESCALATIONS: usize = 3;

const JITTER_BASE: f64 = 1e-10;
const JITTER_GROWTH: f64 = 100.0;

/// Replaces `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// The first attempt uses `m` as given; each escalation adds
/// `1e-10 · trace/dim · 100^k` to the diagonal.
pub fn cholesky_jittered(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let dim = m.nrows().max(1) as f64;
    let scale = (m.trace().abs() / dim).max(f64::MIN_POSITIVE);
    let mut jitter = JITTER_BASE * scale;
    for _ in 0..JITTER_ESCALATIONS {
        let mut bumped = m.clone();
        for i in 0..m.nrows() {
            bumped[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(bumped) {
            return Ok(chol);
        }
        jitter *= JITTER_GROWTH;
    }
    Err(Error::NotPositiveDefinite(what.to_string()))
}

/// Strict Cholesky: no jitter.
pub fn cholesky_strict(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `log |A|` from a Cholesky factor of `A`.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Lower-triangular `S` with `S Sᵀ = m` for a positive semidefinite `m`.
///
/// Diagonal inputs (the common case for state noise and diffuse priors) are
/// handled exactly, zeros included; anything else goes through a jittered
/// Cholesky.
pub fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if is_diagonal(m) {
        let mut s = DMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            let v = m[(i, i)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NotPositiveDefinite(format!("{what}: diagonal entry {i} = {v}")));
            }
            s[(i, i)] = v.sqrt();
        }
        return Ok(s);
    }
    Ok(cholesky_jittered(m, what)?.l())
}

/// Draws `n` independent standard normals into a vector.
pub fn standard_normal_vector<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Inverse of a lower-triangular matrix with a nonzero diagonal.
pub fn lower_triangular_inverse(l: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = l.nrows();
    let mut inv = DMatrix::identity(n, n);
    if l.solve_lower_triangular_mut(&mut inv) {
        Some(inv)
    } else {
        None
    }
}
