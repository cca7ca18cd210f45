//! Posterior-predictive simulation.
//!
//! Every retained draw contributes one sample path: the state equations are
//! rolled forward from that draw's final state with fresh component and
//! observation noise, and the draw's regression term is added. Averaging
//! over draws integrates over parameters and inclusion vectors alike.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{Draw, PosteriorDraws};
use crate::linalg::{self, cholesky_strict};
use crate::regression::{PredictorLayout, RegressionDesign};
use crate::rng::stream_rng;
use crate::statespace::{build_state_space, ModelSpec};

/// A central band `(lower, upper)` at quantiles `(1-level)/2` and
/// `(1+level)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub level: f64,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    /// One horizon × m matrix per retained draw.
    pub samples: Vec<DMatrix<f64>>,
    pub mean: DMatrix<f64>,
    pub bands: Vec<Band>,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.mean.nrows()
    }

    pub fn m(&self) -> usize {
        self.mean.ncols()
    }

    /// All draws of one cell.
    pub fn cell(&self, step: usize, series: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[(step, series)]).collect()
    }
}

fn sample_path<R: Rng + ?Sized>(
    draw: &Draw,
    spec: &ModelSpec,
    layout: &PredictorLayout,
    x_future: &[DMatrix<f64>],
    horizon: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let m = spec.m();
    let ss = build_state_space(spec, &draw.theta)?;
    let q_sqrt = linalg::psd_sqrt(&ss.q, "state disturbance covariance")?;
    let h_sqrt = cholesky_strict(&draw.sigma_eps, "observation covariance")?.l();
    if draw.final_state.len() != ss.state_dim() {
        return Err(Error::Dimension(format!(
            "draw carries {} final states, spec has {}",
            draw.final_state.len(),
            ss.state_dim()
        )));
    }
    let mut out = DMatrix::zeros(horizon, m);
    let mut alpha = draw.final_state.clone();
    for h in 0..horizon {
        let eta = &q_sqrt * linalg::standard_normal_vector(rng, ss.disturbance_dim());
        alpha = &ss.t * &alpha + &ss.intercept + &ss.r * eta;
        let rows: Vec<DVector<f64>> = x_future.iter().map(|x| x.row(h).transpose()).collect();
        let reg = RegressionDesign::row_contribution(&rows, &draw.beta, layout);
        let eps = &h_sqrt * linalg::standard_normal_vector(rng, m);
        let y = ss.z.tr_mul(&alpha) + reg + eps;
        out.set_row(h, &y.transpose());
    }
    Ok(out)
}

/// One predictive path per retained draw, `horizon` steps past the end of
/// training. `x_future[i]` holds at least `horizon` rows of series `i`'s
/// predictors.
pub fn predict<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    x_future: &[DMatrix<f64>],
    horizon: usize,
    rng: &mut R,
) -> Result<ForecastResult> {
    let m = spec.m();
    spec.validate()?;
    if x_future.len() != m {
        return Err(Error::Dimension(format!("{} future predictor blocks for {m} series", x_future.len())));
    }
    for (i, (x, &k)) in x_future.iter().zip(&spec.predictor_counts).enumerate() {
        if x.ncols() != k {
            return Err(Error::Dimension(format!(
                "series {}: future predictors have {} columns, expected {k}",
                i + 1,
                x.ncols()
            )));
        }
        if x.nrows() < horizon {
            return Err(Error::Dimension(format!(
                "series {}: {} future predictor rows for a horizon of {horizon}",
                i + 1,
                x.nrows()
            )));
        }
        if x.rows(0, horizon).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("future predictors of series {}", i + 1)));
        }
    }
    if horizon == 0 {
        return Ok(ForecastResult {
            samples: Vec::new(),
            mean: DMatrix::zeros(0, m),
            bands: Vec::new(),
        });
    }
    if draws.is_empty() {
        return Err(Error::Config("no posterior draws to forecast from".into()));
    }
    let layout = PredictorLayout::new(&spec.predictor_counts);
    let base: u64 = rng.random();
    let all: Vec<&Draw> = draws.iter().collect();
    let samples = all
        .par_iter()
        .enumerate()
        .map(|(k, d)| sample_path(d, spec, &layout, x_future, horizon, &mut stream_rng(base, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mean = samples.iter().fold(DMatrix::zeros(horizon, m), |acc, s| acc + s) / samples.len() as f64;
    Ok(ForecastResult {
        samples,
        mean,
        bands: Vec::new(),
    })
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Recomputes the mean and fills central bands for each level in `levels`.
pub fn summarize(result: &ForecastResult, levels: &[f64]) -> Result<ForecastResult> {
    if result.samples.is_empty() {
        return Err(Error::Config("cannot summarize an empty forecast".into()));
    }
    if let Some(l) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Config(format!("band level {l} outside [0, 1]")));
    }
    let (h, m) = result.samples[0].shape();
    let mean = result.samples.iter().fold(DMatrix::zeros(h, m), |acc, s| acc + s) / result.samples.len() as f64;
    let mut lowers = vec![DMatrix::zeros(h, m); levels.len()];
    let mut uppers = vec![DMatrix::zeros(h, m); levels.len()];
    for step in 0..h {
        for series in 0..m {
            let mut cell = result.cell(step, series);
            cell.sort_by(f64::total_cmp);
            for (k, &level) in levels.iter().enumerate() {
                lowers[k][(step, series)] = quantile_sorted(&cell, (1.0 - level) / 2.0);
                uppers[k][(step, series)] = quantile_sorted(&cell, (1.0 + level) / 2.0);
            }
        }
    }
    let bands = levels
        .iter()
        .zip(lowers.into_iter().zip(uppers))
        .map(|(&level, (lower, upper))| Band { level, lower, upper })
        .collect();
    Ok(ForecastResult {
        samples: result.samples.clone(),
        mean,
        bands,
    })
}

/// `PE_t = Σ_i |y_t⁽ⁱ⁾ - ŷ_t⁽ⁱ⁾|`.
pub fn one_step_error(y_true: &DVector<f64>, forecast_mean: &DVector<f64>) -> Result<f64> {
    if y_true.len() != forecast_mean.len() {
        return Err(Error::Dimension(format!(
            "observed row has {} series, forecast has {}",
            y_true.len(),
            forecast_mean.len()
        )));
    }
    Ok(y_true.iter().zip(forecast_mean.iter()).map(|(a, b)| (a - b).abs()).sum())
}
