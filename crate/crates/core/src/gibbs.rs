//! The five-step Gibbs sampler.
//!
//! One iteration draws, in order: the latent state path, the component
//! variances, the inclusion indicators, the coefficients and the observation
//! covariance. `Σ_ε` stays fixed from the start of an iteration until its own
//! draw at the end, so the SSVS sweep and the coefficient draw condition on
//! the same whitened system.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::kalman::{simulation_smoother_with, CovarianceSchedule};
use crate::linalg::{cholesky_strict, log_det};
use crate::regression::{
    self, ComponentPriors, InclusionVector, PriorSet, RegressionDesign, SweepStats, WhitenedSystem,
};
use crate::rng::{stream_rng, EngineRng};
use crate::statespace::{build_state_space, ComponentCovariances, ComponentKind, ModelSpec, StateSpaceSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_draws: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    /// Keep the full latent path of every retained draw; the final state is
    /// always kept since forecasting starts from it.
    pub store_state_paths: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_draws: 2000,
            burn_in: 200,
            seed: 0,
            chains: 1,
            store_state_paths: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        if self.burn_in >= self.total_draws {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the total number of draws ({})",
                self.burn_in, self.total_draws
            )));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.total_draws.saturating_sub(self.burn_in)
    }
}

/// Sampler state carried between iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: ComponentCovariances,
    pub gamma: InclusionVector,
    pub beta: DVector<f64>,
    pub sigma_eps: DMatrix<f64>,
    /// State path `α_1..α_n` from the latest draw; empty before the first.
    pub alpha: Vec<DVector<f64>>,
}

/// One retained iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub theta: ComponentCovariances,
    pub gamma: InclusionVector,
    pub beta: DVector<f64>,
    pub sigma_eps: DMatrix<f64>,
    /// `α_n`, the state at the last training time point.
    pub final_state: DVector<f64>,
    pub state_path: Option<Vec<DVector<f64>>>,
    pub sweep: SweepStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub seed: u64,
    /// Number of training time points.
    pub n: usize,
    /// Retained draws of each chain, in iteration order.
    pub chains: Vec<Vec<Draw>>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All retained draws, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &Draw> + '_ {
        self.chains.iter().flatten()
    }

    /// Fraction of retained draws with each indicator switched on.
    pub fn inclusion_frequencies(&self) -> Vec<Vec<f64>> {
        let counts = &self.spec.predictor_counts;
        let mut freq: Vec<Vec<f64>> = counts.iter().map(|&k| vec![0.0; k]).collect();
        let total = self.len().max(1) as f64;
        for d in self.iter() {
            for (row, bits) in freq.iter_mut().zip(&d.gamma.bits) {
                for (f, &b) in row.iter_mut().zip(bits) {
                    if b {
                        *f += 1.0;
                    }
                }
            }
        }
        for f in freq.iter_mut().flatten() {
            *f /= total;
        }
        freq
    }

    /// Retained values of one flat coefficient.
    pub fn coefficient_draws(&self, flat: usize) -> Vec<f64> {
        self.iter().map(|d| d.beta[flat]).collect()
    }

    /// Posterior mean of the flat coefficient vector.
    pub fn beta_mean(&self) -> DVector<f64> {
        let k = self.spec.total_predictors();
        let mut sum = DVector::zeros(k);
        for d in self.iter() {
            sum += &d.beta;
        }
        sum / self.len().max(1) as f64
    }

    pub fn total_flips(&self) -> usize {
        self.iter().map(|d| d.sweep.flips).sum()
    }
}

fn check_inputs(y: &DMatrix<f64>, x_blocks: &[DMatrix<f64>], spec: &ModelSpec, priors: &PriorSet) -> Result<()> {
    spec.validate()?;
    let n = y.nrows();
    if n == 0 {
        return Err(Error::Dimension("no training observations".into()));
    }
    if y.ncols() != spec.m() {
        return Err(Error::Dimension(format!("targets have {} columns, spec has {} series", y.ncols(), spec.m())));
    }
    if x_blocks.len() != spec.m() {
        return Err(Error::Dimension(format!("{} predictor blocks for {} series", x_blocks.len(), spec.m())));
    }
    for (i, (x, &k)) in x_blocks.iter().zip(&spec.predictor_counts).enumerate() {
        if x.ncols() != k {
            return Err(Error::Dimension(format!(
                "series {}: predictor block has {} columns, spec declares {k}",
                i + 1,
                x.ncols()
            )));
        }
    }
    for (i, c) in spec.series.iter().enumerate() {
        if c.state_dim() == 0 && spec.predictor_counts[i] == 0 {
            return Err(Error::InvalidSpec(format!("series {} has neither components nor predictors", i + 1)));
        }
    }
    if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("targets at row {}, series {}", pos % n + 1, pos / n + 1)));
    }
    priors.validate(&spec.predictor_counts)
}

/// Initial sampler state: `θ⁰` at the prior centers, `γ⁰ ~ Bernoulli(π)`,
/// `β⁰ = 0`, `Σ_ε⁰ = V₀ / (v₀ - m - 1)`.
pub fn initialize_chain<R: Rng + ?Sized>(spec: &ModelSpec, priors: &PriorSet, rng: &mut R) -> ChainState {
    let theta = ComponentCovariances::from_fn(spec, |kind, i| priors.components.get(kind, i).center());
    let gamma = InclusionVector {
        bits: priors
            .inclusion
            .iter()
            .map(|row| row.iter().map(|&p| rng.random::<f64>() < p).collect())
            .collect(),
    };
    let m = spec.m() as f64;
    ChainState {
        theta,
        gamma,
        beta: DVector::zeros(spec.total_predictors()),
        sigma_eps: &priors.sigma_scale / (priors.sigma_df - m - 1.0),
        alpha: Vec::new(),
    }
}

/// Residual sums of squares and counts per `(kind, series)` implied by a
/// state path.
fn component_residuals(alpha_path: &[DVector<f64>], ss: &StateSpaceSystem) -> Vec<(ComponentKind, usize, f64, usize)> {
    let mut acc: Vec<(ComponentKind, usize, f64, usize)> = Vec::new();
    let slots = &ss.disturbance_slots;
    let mut sums = vec![0.0; slots.len()];
    for pair in alpha_path.windows(2) {
        let eta = ss.implied_disturbance(&pair[0], &pair[1]);
        for (s, e) in sums.iter_mut().zip(eta.iter()) {
            *s += e * e;
        }
    }
    let transitions = alpha_path.len().saturating_sub(1);
    for (slot, ss_k) in slots.iter().zip(sums) {
        match acc.iter_mut().find(|(k, i, _, _)| *k == slot.kind && *i == slot.series) {
            Some(entry) => {
                entry.2 += ss_k;
                entry.3 += transitions;
            }
            None => acc.push((slot.kind, slot.series, ss_k, transitions)),
        }
    }
    acc
}

/// Draw of the diagonal component variances given a state path. Each
/// variance has an inverse-gamma posterior with shape `(w + count) / 2` and
/// scale `(W + SS) / 2`, where the count is the number of transitions (twice
/// that for the two pooled cycle recursions).
pub fn draw_component_covariances<R: Rng + ?Sized>(
    alpha_path: &[DVector<f64>],
    spec: &ModelSpec,
    priors: &ComponentPriors,
    rng: &mut R,
) -> Result<ComponentCovariances> {
    if alpha_path.is_empty() {
        return Err(Error::Dimension("state path is empty".into()));
    }
    let ss = build_state_space(spec, &ComponentCovariances::uniform(spec, 1.0))?;
    if let Some(bad) = alpha_path.iter().find(|a| a.len() != ss.state_dim()) {
        return Err(Error::Dimension(format!(
            "state path entries have length {}, spec has {} states",
            bad.len(),
            ss.state_dim()
        )));
    }
    let mut theta = ComponentCovariances::uniform(spec, 0.0);
    for (kind, series, sum_sq, count) in component_residuals(alpha_path, &ss) {
        let prior = priors.get(kind, series);
        let v = dist::inverse_gamma((prior.df + count as f64) / 2.0, (prior.scale + sum_sq) / 2.0, rng)?;
        theta.set(kind, series, v);
    }
    Ok(theta)
}

/// Targets with the latent contribution `Zᵀα_t` removed.
fn remove_states(y: &DMatrix<f64>, ss: &StateSpaceSystem, alpha: &[DVector<f64>]) -> DMatrix<f64> {
    let mut out = y.clone();
    if ss.state_dim() == 0 {
        return out;
    }
    for (t, a) in alpha.iter().enumerate() {
        let obs = ss.z.tr_mul(a);
        for i in 0..y.ncols() {
            out[(t, i)] -= obs[i];
        }
    }
    out
}

/// Fixed data and priors for one training run. The targets are passed per
/// step so a single sampler can also be driven on regenerated data.
pub struct GibbsSampler<'a> {
    spec: &'a ModelSpec,
    priors: &'a PriorSet,
    design: RegressionDesign,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(spec: &'a ModelSpec, priors: &'a PriorSet, x_blocks: &[DMatrix<f64>], n: usize) -> Result<Self> {
        spec.validate()?;
        priors.validate(&spec.predictor_counts)?;
        let design = RegressionDesign::new(x_blocks.to_vec(), n)?;
        if design.layout().counts() != spec.predictor_counts.as_slice() {
            return Err(Error::Dimension("predictor blocks do not match the spec's predictor counts".into()));
        }
        Ok(Self { spec, priors, design })
    }

    pub fn design(&self) -> &RegressionDesign {
        &self.design
    }

    pub fn initialize<R: Rng + ?Sized>(&self, rng: &mut R) -> ChainState {
        initialize_chain(self.spec, self.priors, rng)
    }

    /// One full iteration on targets `y`.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainState, y: &DMatrix<f64>, rng: &mut R) -> Result<SweepStats> {
        self.step_inner(state, y, rng).map_err(|(step, e)| Error::Sampler {
            iteration: 0,
            step,
            source: Box::new(e),
        })
    }

    fn step_inner<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        y: &DMatrix<f64>,
        rng: &mut R,
    ) -> std::result::Result<SweepStats, (&'static str, Error)> {
        let n = y.nrows();
        let tag = |step: &'static str| move |e: Error| (step, e);

        // 1. latent states
        let ss = build_state_space(self.spec, &state.theta).map_err(tag("state path"))?;
        let y_adj = y - self.design.contribution(&state.beta);
        if ss.state_dim() == 0 {
            state.alpha = vec![DVector::zeros(0); n];
        } else {
            let sched = CovarianceSchedule::new(&ss, &state.sigma_eps, n).map_err(tag("state path"))?;
            state.alpha = simulation_smoother_with(&ss, &sched, &state.sigma_eps, &y_adj, rng)
                .map_err(tag("state path"))?
                .states;
        }

        // 2. component variances
        if ss.disturbance_dim() > 0 {
            state.theta = draw_component_covariances(&state.alpha, self.spec, &self.priors.components, rng)
                .map_err(tag("component variances"))?;
        }

        // 3-4. indicators and coefficients under the current Σ_ε
        let y_star = remove_states(y, &ss, &state.alpha);
        let ws = WhitenedSystem::from_design(&self.design, &y_star, &state.sigma_eps).map_err(tag("inclusion"))?;
        let stats = regression::ssvs_sweep(&mut state.gamma, &ws, &self.design, self.priors, rng)
            .map_err(tag("inclusion"))?;
        state.beta =
            regression::draw_beta(&ws, &state.gamma, &self.design, self.priors, rng).map_err(tag("coefficients"))?;

        // 5. observation covariance
        state.sigma_eps = regression::draw_sigma_eps(&self.design, &y_star, &state.beta, self.priors, rng)
            .map_err(tag("observation covariance"))?;
        Ok(stats)
    }

    /// Unnormalized log joint density of `(y, α, θ, γ, β, Σ_ε)`; additive
    /// constants that do not depend on the parameters are dropped.
    pub fn log_joint(&self, state: &ChainState, y: &DMatrix<f64>) -> Result<f64> {
        let n = y.nrows();
        let m = self.spec.m();
        let ss = build_state_space(self.spec, &state.theta)?;
        let d = ss.state_dim();
        let sigma_chol = cholesky_strict(&state.sigma_eps, "observation covariance")?;
        let sigma_log_det = log_det(&sigma_chol);

        let mut total = 0.0;
        let resid = remove_states(y, &ss, &state.alpha) - self.design.contribution(&state.beta);
        for t in 0..n {
            let e = resid.row(t).transpose();
            total -= 0.5 * (sigma_log_det + e.dot(&sigma_chol.solve(&e)));
        }

        if d > 0 {
            let init = &state.alpha[0] - &ss.initial_mean;
            for k in 0..d {
                let v = ss.initial_cov[(k, k)];
                total -= 0.5 * (v.ln() + init[k] * init[k] / v);
            }
            for pair in state.alpha.windows(2) {
                let eta = ss.implied_disturbance(&pair[0], &pair[1]);
                for (k, e) in eta.iter().enumerate() {
                    let v = ss.q[(k, k)];
                    total -= 0.5 * (v.ln() + e * e / v);
                }
            }
        }

        for (kind, i, v) in state.theta.iter() {
            let p = self.priors.components.get(kind, i);
            total += -(p.df / 2.0 + 1.0) * v.ln() - p.scale / (2.0 * v);
        }

        total += self.priors.log_prior_inclusion(&state.gamma);
        let selected = state.gamma.selected();
        if !selected.is_empty() {
            let a = self.design.slab_information(&selected, self.priors)?;
            let a_chol = cholesky_strict(&a, "slab information matrix")?;
            let diff = DVector::from_iterator(
                selected.len(),
                selected.iter().map(|&k| state.beta[k] - self.priors.prior_mean[k]),
            );
            total += 0.5 * log_det(&a_chol) - 0.5 * diff.dot(&(&a * &diff));
        }

        let v0 = self.priors.sigma_df;
        let trace = (sigma_chol.inverse() * &self.priors.sigma_scale).trace();
        total += -(v0 + m as f64 + 1.0) / 2.0 * sigma_log_det - 0.5 * trace;
        Ok(total)
    }
}

/// Starting parameters for a chain, e.g. the last draw of a previous fit.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStart {
    pub theta: ComponentCovariances,
    pub gamma: InclusionVector,
    pub beta: DVector<f64>,
    pub sigma_eps: DMatrix<f64>,
}

impl From<&Draw> for ChainStart {
    fn from(d: &Draw) -> Self {
        Self {
            theta: d.theta.clone(),
            gamma: d.gamma.clone(),
            beta: d.beta.clone(),
            sigma_eps: d.sigma_eps.clone(),
        }
    }
}

fn run_chain(
    sampler: &GibbsSampler<'_>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
    chain: usize,
    start: Option<&ChainStart>,
) -> Result<Vec<Draw>> {
    let mut rng: EngineRng = stream_rng(cfg.seed, chain as u64);
    let mut state = sampler.initialize(&mut rng);
    if let Some(s) = start {
        state.theta = s.theta.clone();
        state.gamma = s.gamma.clone();
        state.beta = s.beta.clone();
        state.sigma_eps = s.sigma_eps.clone();
    }
    let mut draws = Vec::with_capacity(cfg.retained());
    for iteration in 0..cfg.total_draws {
        let sweep = sampler.step(&mut state, y, &mut rng).map_err(|e| match e {
            Error::Sampler { step, source, .. } => Error::Sampler {
                iteration: iteration + 1,
                step,
                source,
            },
            other => other,
        })?;
        if iteration >= cfg.burn_in {
            draws.push(Draw {
                theta: state.theta.clone(),
                gamma: state.gamma.clone(),
                beta: state.beta.clone(),
                sigma_eps: state.sigma_eps.clone(),
                final_state: state.alpha.last().cloned().unwrap_or_else(|| DVector::zeros(0)),
                state_path: cfg.store_state_paths.then(|| state.alpha.clone()),
                sweep,
            });
        }
    }
    Ok(draws)
}

/// Runs `cfg.chains` independent chains and keeps the post-burn-in draws.
pub fn train(
    y: &DMatrix<f64>,
    x_blocks: &[DMatrix<f64>],
    spec: &ModelSpec,
    priors: &PriorSet,
    cfg: &TrainConfig,
) -> Result<PosteriorDraws> {
    train_from(y, x_blocks, spec, priors, cfg, None)
}

/// [`train`] with every chain started from `start` instead of the prior.
pub fn train_from(
    y: &DMatrix<f64>,
    x_blocks: &[DMatrix<f64>],
    spec: &ModelSpec,
    priors: &PriorSet,
    cfg: &TrainConfig,
    start: Option<&ChainStart>,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    check_inputs(y, x_blocks, spec, priors)?;
    let sampler = GibbsSampler::new(spec, priors, x_blocks, y.nrows())?;
    let chains = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(&sampler, y, cfg, c, start))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        spec: spec.clone(),
        seed: cfg.seed,
        n: y.nrows(),
        chains,
    })
}
