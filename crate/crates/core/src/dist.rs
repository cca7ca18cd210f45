//! Samplers for the conjugate families used by the Gibbs steps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_jittered};

/// Draw from the inverse-gamma distribution with the given shape and scale
/// (density ∝ x^(-shape-1) exp(-scale/x)).
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) || !shape.is_finite() || !scale.is_finite() {
        return Err(Error::NonFinite(format!(
            "inverse-gamma parameters (shape {shape}, scale {scale})"
        )));
    }
    let precision = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::NonFinite(format!("inverse-gamma: {e}")))?
        .sample(rng);
    Ok(1.0 / precision)
}

/// Draw from the inverse Wishart `IW(df, scale)` whose mean is
/// `scale / (df - p - 1)`.
///
/// Uses the Bartlett factor of a standard Wishart: with `scale = C Cᵀ` and
/// `W = A Aᵀ ~ W(df, I)`, the draw is `(C A⁻ᵀ)(C A⁻ᵀ)ᵀ`.
pub fn inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p as f64) - 1.0 {
        return Err(Error::Config(format!(
            "inverse Wishart degrees of freedom {df} too small for dimension {p}"
        )));
    }
    let mut sym = scale.clone();
    linalg::symmetrize(&mut sym);
    let c = cholesky_jittered(&sym, "inverse Wishart scale matrix")?.l();

    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::NonFinite(format!("Bartlett chi-square: {e}")))?
            .sample(rng);
        a[(i, i)] = chi.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let a_inv = linalg::lower_triangular_inverse(&a)
        .ok_or_else(|| Error::NotPositiveDefinite("Bartlett factor".into()))?;
    let factor = c * a_inv.transpose();
    let mut draw = &factor * factor.transpose();
    linalg::symmetrize(&mut draw);
    Ok(draw)
}

/// Draw from `N(mean, P⁻¹)` given the lower Cholesky factor `L` of the
/// precision `P = L Lᵀ`.
pub fn normal_from_precision_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision_factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mut z = linalg::standard_normal_vector(rng, mean.len());
    // Lᵀ x = z gives Cov(x) = (L Lᵀ)⁻¹
    precision_factor.tr_solve_lower_triangular_mut(&mut z);
    z + mean
}

/// Draw from `N(mean, S Sᵀ)` given a square root `S` of the covariance.
pub fn normal_from_sqrt<R: Rng + ?Sized>(mean: &DVector<f64>, sqrt_cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = linalg::standard_normal_vector(rng, sqrt_cov.ncols());
    mean + sqrt_cov * z
}
