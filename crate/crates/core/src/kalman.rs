//! Gaussian filtering, smoothing and posterior simulation of state paths.
//!
//! The covariance recursion of a time-invariant system does not depend on
//! the observations, so it is computed once per system as a
//! [`CovarianceSchedule`] and shared by every mean pass over data. Once the
//! predicted covariance stops changing (to 1e-13 relative) the schedule
//! freezes and later time steps reuse the steady-state entry.
//!
//! Smoothing uses the backward disturbance recursion
//! `r_{t-1} = Z F⁻¹ v_t + Lᵀ r_t`, `α̂_t = a_t + P_t r_{t-1}`, which never
//! inverts a predicted covariance. Posterior path draws use the mean
//! correction identity `α̃ = α⁺ + E[α | y - y⁺]` for an unconditional
//! pseudo-draw `(α⁺, y⁺)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_jittered, cholesky_strict, log_det};
use crate::statespace::StateSpaceSystem;

const STEADY_STATE_TOL: f64 = 1e-13;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Debug)]
pub struct FilterResult {
    /// `a_t = E[α_t | y_1..y_{t-1}]`.
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    /// `E[α_t | y_1..y_t]`.
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
    /// One-step prediction errors `v_t = y_t - Zᵀ a_t`.
    pub innovations: Vec<DVector<f64>>,
    /// `F_t⁻¹`.
    pub innovation_precisions: Vec<DMatrix<f64>>,
    /// Prediction-form gains `K_t = T P_t Z F_t⁻¹`.
    pub gains: Vec<DMatrix<f64>>,
}

impl FilterResult {
    pub fn len(&self) -> usize {
        self.predicted_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted_means.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct StatePathDraw {
    pub states: Vec<DVector<f64>>,
}

#[derive(Clone, Debug)]
struct CovarianceStep {
    predicted: DMatrix<f64>,
    filtered: DMatrix<f64>,
    f_inv: DMatrix<f64>,
    f_log_det: f64,
    /// `P Z F⁻¹`.
    filter_gain: DMatrix<f64>,
    /// `T P Z F⁻¹`.
    gain: DMatrix<f64>,
}

/// Data-independent part of the filter for `n` time steps.
#[derive(Clone, Debug)]
pub struct CovarianceSchedule {
    steps: Vec<CovarianceStep>,
    n: usize,
}

impl CovarianceSchedule {
    pub fn new(ss: &StateSpaceSystem, sigma_eps: &DMatrix<f64>, n: usize) -> Result<Self> {
        let m = ss.m();
        if sigma_eps.nrows() != m || sigma_eps.ncols() != m {
            return Err(Error::Dimension(format!(
                "observation covariance is {}x{}, system has {m} series",
                sigma_eps.nrows(),
                sigma_eps.ncols()
            )));
        }
        cholesky_strict(sigma_eps, "observation covariance")?;

        let mut steps: Vec<CovarianceStep> = Vec::with_capacity(n.min(64));
        let mut p = ss.initial_cov.clone();
        linalg::symmetrize(&mut p);
        for t in 0..n {
            let pz = &p * &ss.z;
            let mut f = ss.z.tr_mul(&pz) + sigma_eps;
            linalg::symmetrize(&mut f);
            let chol = cholesky_jittered(&f, &format!("innovation covariance at t={}", t + 1))?;
            let f_log_det = log_det(&chol);
            let f_inv = chol.inverse();
            let filter_gain = &pz * &f_inv;
            let mut filtered = &p - &filter_gain * pz.transpose();
            linalg::symmetrize(&mut filtered);
            let gain = &ss.t * &filter_gain;
            let mut next = &ss.t * &filtered * ss.t.transpose() + &ss.state_noise_cov;
            linalg::symmetrize(&mut next);
            debug_assert!(linalg::max_asymmetry(&next) < 1e-10);

            let scale = p.amax().max(1.0);
            let converged = t > 0 && (&next - &p).amax() <= STEADY_STATE_TOL * scale;
            steps.push(CovarianceStep {
                predicted: std::mem::replace(&mut p, next),
                filtered,
                f_inv,
                f_log_det,
                filter_gain,
                gain,
            });
            if converged {
                break;
            }
        }
        Ok(Self { steps, n })
    }

    fn at(&self, t: usize) -> &CovarianceStep {
        &self.steps[t.min(self.steps.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of distinct covariance steps computed before freezing.
    pub fn distinct_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Output of a mean pass: predicted means, innovations and log-likelihood.
struct MeanPass {
    predicted: Vec<DVector<f64>>,
    filtered: Vec<DVector<f64>>,
    innovations: Vec<DVector<f64>>,
    log_likelihood: f64,
}

fn check_observations(ss: &StateSpaceSystem, y: &DMatrix<f64>) -> Result<()> {
    if y.ncols() != ss.m() {
        return Err(Error::Dimension(format!(
            "observations have {} columns, system has {} series",
            y.ncols(),
            ss.m()
        )));
    }
    if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
        let (row, col) = (pos % y.nrows(), pos / y.nrows());
        return Err(Error::NonFinite(format!("observations at row {}, series {}", row + 1, col + 1)));
    }
    Ok(())
}

fn mean_pass(
    ss: &StateSpaceSystem,
    sched: &CovarianceSchedule,
    y: &DMatrix<f64>,
    initial_mean: &DVector<f64>,
    intercept: &DVector<f64>,
) -> MeanPass {
    let n = y.nrows();
    let m = ss.m();
    let mut predicted = Vec::with_capacity(n);
    let mut filtered = Vec::with_capacity(n);
    let mut innovations = Vec::with_capacity(n);
    let mut log_likelihood = 0.0;
    let mut a = initial_mean.clone();
    for t in 0..n {
        let step = sched.at(t);
        let v = DVector::from_iterator(m, y.row(t).iter().copied()) - ss.z.tr_mul(&a);
        let quad = v.dot(&(&step.f_inv * &v));
        log_likelihood -= 0.5 * (m as f64 * LN_2PI + step.f_log_det + quad);
        let a_f = &a + &step.filter_gain * &v;
        let next = &ss.t * &a_f + intercept;
        predicted.push(std::mem::replace(&mut a, next));
        filtered.push(a_f);
        innovations.push(v);
    }
    MeanPass {
        predicted,
        filtered,
        innovations,
        log_likelihood,
    }
}

/// Backward pass for smoothed means only.
fn smoothed_means_from(
    ss: &StateSpaceSystem,
    sched: &CovarianceSchedule,
    predicted: &[DVector<f64>],
    innovations: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let n = predicted.len();
    let d = ss.state_dim();
    let mut out = vec![DVector::zeros(d); n];
    let mut r = DVector::zeros(d);
    for t in (0..n).rev() {
        let step = sched.at(t);
        let u = &step.f_inv * &innovations[t] - step.gain.tr_mul(&r);
        r = &ss.z * u + ss.t.tr_mul(&r);
        out[t] = &predicted[t] + &step.predicted * &r;
    }
    out
}

/// Forward Kalman filter over `y` (n × m) with the regression contribution
/// already removed.
pub fn kalman_filter(ss: &StateSpaceSystem, sigma_eps: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<FilterResult> {
    check_observations(ss, y)?;
    let sched = CovarianceSchedule::new(ss, sigma_eps, y.nrows())?;
    let pass = mean_pass(ss, &sched, y, &ss.initial_mean, &ss.intercept);
    let n = y.nrows();
    let pick = |f: &dyn Fn(&CovarianceStep) -> DMatrix<f64>| (0..n).map(|t| f(sched.at(t))).collect::<Vec<_>>();
    Ok(FilterResult {
        predicted_covs: pick(&|s| s.predicted.clone()),
        filtered_covs: pick(&|s| s.filtered.clone()),
        innovation_precisions: pick(&|s| s.f_inv.clone()),
        gains: pick(&|s| s.gain.clone()),
        predicted_means: pass.predicted,
        filtered_means: pass.filtered,
        innovations: pass.innovations,
        log_likelihood: pass.log_likelihood,
    })
}

/// Fixed-interval smoothed means and covariances `(E[α_t | y], Var[α_t | y])`.
pub fn kalman_smoother(fr: &FilterResult, ss: &StateSpaceSystem) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    let n = fr.len();
    if fr.predicted_covs.len() != n
        || fr.innovations.len() != n
        || fr.innovation_precisions.len() != n
        || fr.gains.len() != n
    {
        return Err(Error::Dimension("filter result has inconsistent lengths".into()));
    }
    let d = ss.state_dim();
    if n > 0 && fr.predicted_means[0].len() != d {
        return Err(Error::Dimension(format!(
            "filter result has {} states, system has {d}",
            fr.predicted_means[0].len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut r = DVector::zeros(d);
    let mut big_n = DMatrix::zeros(d, d);
    for t in (0..n).rev() {
        let f_inv = &fr.innovation_precisions[t];
        let k = &fr.gains[t];
        let p = &fr.predicted_covs[t];
        let u = f_inv * &fr.innovations[t] - k.tr_mul(&r);
        r = &ss.z * u + ss.t.tr_mul(&r);
        let l = &ss.t - k * ss.z.transpose();
        big_n = &ss.z * f_inv * ss.z.transpose() + l.transpose() * &big_n * &l;
        linalg::symmetrize(&mut big_n);
        let mean = &fr.predicted_means[t] + p * &r;
        let mut cov = p - p * &big_n * p;
        linalg::symmetrize(&mut cov);
        out.push((mean, cov));
    }
    out.reverse();
    Ok(out)
}

/// Smoothed means only; cheaper than [`kalman_smoother`].
pub fn smoothed_means(ss: &StateSpaceSystem, sigma_eps: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    check_observations(ss, y)?;
    let sched = CovarianceSchedule::new(ss, sigma_eps, y.nrows())?;
    let pass = mean_pass(ss, &sched, y, &ss.initial_mean, &ss.intercept);
    Ok(smoothed_means_from(ss, &sched, &pass.predicted, &pass.innovations))
}

/// Exact log-likelihood of `y` under the system; same recursion as the filter.
pub fn log_likelihood(ss: &StateSpaceSystem, sigma_eps: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_observations(ss, y)?;
    let sched = CovarianceSchedule::new(ss, sigma_eps, y.nrows())?;
    Ok(mean_pass(ss, &sched, y, &ss.initial_mean, &ss.intercept).log_likelihood)
}

/// Draw of the full state path from `p(α | y)`.
pub fn simulation_smoother<R: Rng + ?Sized>(
    ss: &StateSpaceSystem,
    sigma_eps: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rng: &mut R,
) -> Result<StatePathDraw> {
    check_observations(ss, y)?;
    let sched = CovarianceSchedule::new(ss, sigma_eps, y.nrows())?;
    simulation_smoother_with(ss, &sched, sigma_eps, y, rng)
}

/// [`simulation_smoother`] reusing a precomputed schedule for the same system.
pub fn simulation_smoother_with<R: Rng + ?Sized>(
    ss: &StateSpaceSystem,
    sched: &CovarianceSchedule,
    sigma_eps: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rng: &mut R,
) -> Result<StatePathDraw> {
    let n = y.nrows();
    let m = ss.m();
    let d = ss.state_dim();
    if sched.len() != n {
        return Err(Error::Dimension(format!("schedule covers {} steps, data has {n}", sched.len())));
    }
    if n == 0 {
        return Ok(StatePathDraw { states: Vec::new() });
    }

    let init_sqrt = linalg::psd_sqrt(&ss.initial_cov, "initial state covariance")?;
    let q_sqrt = linalg::psd_sqrt(&ss.q, "state disturbance covariance")?;
    let h_sqrt = cholesky_strict(sigma_eps, "observation covariance")?.l();

    // unconditional pseudo-draw of states and observations
    let mut plus_states = Vec::with_capacity(n);
    let mut gap = DMatrix::zeros(n, m);
    let mut alpha = &ss.initial_mean + &init_sqrt * linalg::standard_normal_vector(rng, d);
    for t in 0..n {
        let eps = &h_sqrt * linalg::standard_normal_vector(rng, m);
        let y_plus = ss.z.tr_mul(&alpha) + eps;
        for i in 0..m {
            gap[(t, i)] = y[(t, i)] - y_plus[i];
        }
        let eta = &q_sqrt * linalg::standard_normal_vector(rng, ss.disturbance_dim());
        let next = &ss.t * &alpha + &ss.intercept + &ss.r * eta;
        plus_states.push(std::mem::replace(&mut alpha, next));
    }

    // E[α | y] - E[α | y⁺] is E[α | y - y⁺] under the centered system
    let zero_mean = DVector::zeros(d);
    let pass = mean_pass(ss, sched, &gap, &zero_mean, &zero_mean);
    let correction = smoothed_means_from(ss, sched, &pass.predicted, &pass.innovations);
    let states = plus_states.into_iter().zip(correction).map(|(a, c)| a + c).collect();
    Ok(StatePathDraw { states })
}

/// Log density of `x ~ N(mean, cov)` via Cholesky.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky_strict(cov, "gaussian covariance")?;
    let diff = x - mean;
    let sol = chol.solve(&diff);
    Ok(-0.5 * (x.len() as f64 * (2.0 * PI).ln() + log_det(&chol) + diff.dot(&sol)))
}
