//! Block state-space assembly for per-series structural components.
//!
//! Each target series contributes, in this order, an optional level, an
//! optional slope, an optional `(S-1)`-state seasonal block and an optional
//! two-state damped cycle. Series blocks are stacked along the state vector,
//! so the transition matrix is block diagonal and `Z` (d × m) selects, for
//! every series, its level, current seasonal effect and first cycle state.
//!
//! The slope mean-reverts toward a long-term value `D` at rate `ρ`:
//! `δ_{t+1} = ρ δ_t + (1-ρ) D + v_t`. The constant `(1-ρ) D` lives in a
//! deterministic intercept vector so the transition matrix stays time
//! invariant.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Frequency λ in radians, strictly inside (0, π).
    pub frequency: f64,
    /// Damping factor ϱ, strictly inside (0, 1).
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentConfig {
    pub trend: bool,
    pub slope: bool,
    /// Learning rate ρ of the slope; 1 makes the slope a random walk.
    pub slope_rate: f64,
    /// Long-term slope D toward which the slope reverts.
    pub long_term_slope: f64,
    pub seasonal_period: Option<usize>,
    pub cycle: Option<CycleConfig>,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        Self {
            trend: true,
            slope: false,
            slope_rate: 1.0,
            long_term_slope: 0.0,
            seasonal_period: None,
            cycle: None,
        }
    }
}

impl ComponentConfig {
    /// A series with no latent components (pure regression).
    pub fn none() -> Self {
        Self {
            trend: false,
            ..Self::default()
        }
    }

    pub fn level() -> Self {
        Self::default()
    }

    pub fn local_linear_trend(slope_rate: f64, long_term_slope: f64) -> Self {
        Self {
            trend: true,
            slope: true,
            slope_rate,
            long_term_slope,
            ..Self::default()
        }
    }

    pub fn with_seasonal(mut self, period: usize) -> Self {
        self.seasonal_period = Some(period);
        self
    }

    pub fn with_cycle(mut self, frequency: f64, damping: f64) -> Self {
        self.cycle = Some(CycleConfig { frequency, damping });
        self
    }

    pub fn validate(&self, series: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("series {series}: {msg}")));
        if self.slope && !self.trend {
            return bad("a slope requires a trend".into());
        }
        if self.slope {
            if !(0.0..=1.0).contains(&self.slope_rate) {
                return bad(format!("slope rate {} outside [0, 1]", self.slope_rate));
            }
            if !self.long_term_slope.is_finite() {
                return bad("long-term slope is not finite".into());
            }
        }
        if let Some(s) = self.seasonal_period {
            if s < 2 {
                return bad(format!("seasonal period {s} is below 2"));
            }
        }
        if let Some(c) = self.cycle {
            if !(c.frequency > 0.0 && c.frequency < PI) {
                return bad(format!("cycle frequency {} outside the open interval (0, π)", c.frequency));
            }
            if !(c.damping > 0.0 && c.damping < 1.0) {
                return bad(format!("cycle damping {} outside the open interval (0, 1)", c.damping));
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        usize::from(self.trend)
            + usize::from(self.slope)
            + self.seasonal_period.map_or(0, |s| s - 1)
            + if self.cycle.is_some() { 2 } else { 0 }
    }

    pub fn has(&self, kind: ComponentKind) -> bool {
        match kind {
            ComponentKind::Level => self.trend,
            ComponentKind::Slope => self.slope,
            ComponentKind::Seasonal => self.seasonal_period.is_some(),
            ComponentKind::Cycle => self.cycle.is_some(),
        }
    }
}

/// Prior on the first latent state, applied independently to every state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStatePrior {
    pub mean: f64,
    pub variance: f64,
}

impl Default for InitialStatePrior {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub series: Vec<ComponentConfig>,
    /// Number of candidate predictors `k_i` for each series.
    pub predictor_counts: Vec<usize>,
    #[serde(default)]
    pub initial_state: InitialStatePrior,
}

impl ModelSpec {
    pub fn new(series: Vec<ComponentConfig>, predictor_counts: Vec<usize>) -> Self {
        Self {
            series,
            predictor_counts,
            initial_state: InitialStatePrior::default(),
        }
    }

    pub fn m(&self) -> usize {
        self.series.len()
    }

    pub fn total_predictors(&self) -> usize {
        self.predictor_counts.iter().sum()
    }

    pub fn state_dim(&self) -> usize {
        self.series.iter().map(ComponentConfig::state_dim).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            return Err(Error::InvalidSpec("at least one target series is required".into()));
        }
        if self.predictor_counts.len() != self.series.len() {
            return Err(Error::InvalidSpec(format!(
                "{} predictor counts for {} series",
                self.predictor_counts.len(),
                self.series.len()
            )));
        }
        for (i, c) in self.series.iter().enumerate() {
            c.validate(i)?;
        }
        if !(self.initial_state.variance >= 0.0) || !self.initial_state.mean.is_finite() {
            return Err(Error::InvalidSpec("initial state prior must have finite mean and nonnegative variance".into()));
        }
        Ok(())
    }

    /// The one-series model for series `i`, as used by the independent
    /// per-series baseline.
    pub fn single_series(&self, i: usize) -> ModelSpec {
        ModelSpec {
            series: vec![self.series[i].clone()],
            predictor_counts: vec![self.predictor_counts[i]],
            initial_state: self.initial_state,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Level,
    Slope,
    Seasonal,
    Cycle,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 4] = [
        ComponentKind::Level,
        ComponentKind::Slope,
        ComponentKind::Seasonal,
        ComponentKind::Cycle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Level => "level",
            ComponentKind::Slope => "slope",
            ComponentKind::Seasonal => "seasonal",
            ComponentKind::Cycle => "cycle",
        }
    }
}

/// Diagonal component disturbance variances θ = (Σ_μ, Σ_δ, Σ_τ, Σ_ω).
///
/// Entry `i` of each vector is `None` when series `i` lacks the component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentCovariances {
    pub level: Vec<Option<f64>>,
    pub slope: Vec<Option<f64>>,
    pub seasonal: Vec<Option<f64>>,
    pub cycle: Vec<Option<f64>>,
}

impl ComponentCovariances {
    /// Fills every component present in `spec` with `value(kind, series)`.
    pub fn from_fn(spec: &ModelSpec, mut value: impl FnMut(ComponentKind, usize) -> f64) -> Self {
        let mut out = Self {
            level: vec![None; spec.m()],
            slope: vec![None; spec.m()],
            seasonal: vec![None; spec.m()],
            cycle: vec![None; spec.m()],
        };
        for (i, c) in spec.series.iter().enumerate() {
            for kind in ComponentKind::ALL {
                if c.has(kind) {
                    out.set(kind, i, value(kind, i));
                }
            }
        }
        out
    }

    pub fn uniform(spec: &ModelSpec, value: f64) -> Self {
        Self::from_fn(spec, |_, _| value)
    }

    pub fn entries(&self, kind: ComponentKind) -> &[Option<f64>] {
        match kind {
            ComponentKind::Level => &self.level,
            ComponentKind::Slope => &self.slope,
            ComponentKind::Seasonal => &self.seasonal,
            ComponentKind::Cycle => &self.cycle,
        }
    }

    fn entries_mut(&mut self, kind: ComponentKind) -> &mut Vec<Option<f64>> {
        match kind {
            ComponentKind::Level => &mut self.level,
            ComponentKind::Slope => &mut self.slope,
            ComponentKind::Seasonal => &mut self.seasonal,
            ComponentKind::Cycle => &mut self.cycle,
        }
    }

    pub fn get(&self, kind: ComponentKind, series: usize) -> Option<f64> {
        self.entries(kind).get(series).copied().flatten()
    }

    pub fn set(&mut self, kind: ComponentKind, series: usize, value: f64) {
        let v = self.entries_mut(kind);
        if v.len() <= series {
            v.resize(series + 1, None);
        }
        v[series] = Some(value);
    }

    /// Present entries as `(kind, series, variance)`, in kind-major order.
    pub fn iter(&self) -> impl Iterator<Item = (ComponentKind, usize, f64)> + '_ {
        ComponentKind::ALL.into_iter().flat_map(move |kind| {
            self.entries(kind)
                .iter()
                .enumerate()
                .filter_map(move |(i, v)| v.map(|v| (kind, i, v)))
        })
    }

    pub fn restrict_to_series(&self, i: usize) -> Self {
        let pick = |v: &Vec<Option<f64>>| vec![v.get(i).copied().flatten()];
        Self {
            level: pick(&self.level),
            slope: pick(&self.slope),
            seasonal: pick(&self.seasonal),
            cycle: pick(&self.cycle),
        }
    }
}

/// Location of one series' states inside the stacked state vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeriesLayout {
    pub offset: usize,
    pub dim: usize,
    pub level: Option<usize>,
    pub slope: Option<usize>,
    /// First index and length `S-1` of the seasonal block.
    pub seasonal: Option<(usize, usize)>,
    /// Index of ω; ω★ follows at `index + 1`.
    pub cycle: Option<usize>,
}

/// The disturbance feeding one stochastic state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DisturbanceSlot {
    pub series: usize,
    pub kind: ComponentKind,
    pub state_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceSystem {
    /// d × m observation selector.
    pub z: DMatrix<f64>,
    /// d × d transition matrix.
    pub t: DMatrix<f64>,
    /// d × q disturbance loading (a column selection of the identity).
    pub r: DMatrix<f64>,
    /// q × q disturbance covariance.
    pub q: DMatrix<f64>,
    /// Deterministic state intercept added at every transition.
    pub intercept: DVector<f64>,
    pub initial_mean: DVector<f64>,
    pub initial_cov: DMatrix<f64>,
    pub disturbance_slots: Vec<DisturbanceSlot>,
    pub layout: Vec<SeriesLayout>,
    /// Cached `R Q Rᵀ`.
    pub state_noise_cov: DMatrix<f64>,
}

impl StateSpaceSystem {
    pub fn state_dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.r.ncols()
    }

    pub fn m(&self) -> usize {
        self.z.ncols()
    }

    /// Same system with the deterministic parts (initial mean, intercept)
    /// zeroed; used by the mean-correction simulation smoother.
    pub fn centered(&self) -> StateSpaceSystem {
        let mut out = self.clone();
        out.intercept.fill(0.0);
        out.initial_mean.fill(0.0);
        out
    }

    /// Replaces the observation-level selector and covariances for a
    /// reordering of the target series: series `perm[k]` becomes series `k`.
    pub fn permute_series(&self, perm: &[usize]) -> StateSpaceSystem {
        let mut out = self.clone();
        out.z = DMatrix::from_fn(self.z.nrows(), perm.len(), |r, c| self.z[(r, perm[c])]);
        out
    }

    /// Disturbance implied by a pair of consecutive states:
    /// `Rᵀ (α_{t+1} - T α_t - c)`.
    pub fn implied_disturbance(&self, current: &DVector<f64>, next: &DVector<f64>) -> DVector<f64> {
        let gap = next - &self.t * current - &self.intercept;
        DVector::from_iterator(
            self.disturbance_slots.len(),
            self.disturbance_slots.iter().map(|s| gap[s.state_index]),
        )
    }
}

/// Assembles the block state-space system for `spec` with component
/// disturbance variances `theta`.
pub fn build_state_space(spec: &ModelSpec, theta: &ComponentCovariances) -> Result<StateSpaceSystem> {
    spec.validate()?;
    let m = spec.m();
    let d = spec.state_dim();

    let mut z = DMatrix::zeros(d, m);
    let mut t = DMatrix::zeros(d, d);
    let mut intercept = DVector::zeros(d);
    let mut slots = Vec::new();
    let mut layout = Vec::with_capacity(m);

    let variance = |kind: ComponentKind, series: usize| -> Result<f64> {
        match theta.get(kind, series) {
            Some(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Some(v) => Err(Error::InvalidSpec(format!(
                "series {series}: {} variance {v} is not a nonnegative number",
                kind.name()
            ))),
            None => Err(Error::InvalidSpec(format!(
                "series {series}: no {} variance supplied",
                kind.name()
            ))),
        }
    };
    let mut variances = Vec::new();

    let mut offset = 0;
    for (i, c) in spec.series.iter().enumerate() {
        let mut lay = SeriesLayout {
            offset,
            dim: c.state_dim(),
            ..SeriesLayout::default()
        };
        let mut next = offset;
        if c.trend {
            lay.level = Some(next);
            next += 1;
        }
        if c.slope {
            lay.slope = Some(next);
            next += 1;
        }
        if let Some(s) = c.seasonal_period {
            lay.seasonal = Some((next, s - 1));
            next += s - 1;
        }
        if c.cycle.is_some() {
            lay.cycle = Some(next);
        }

        if let Some(l) = lay.level {
            z[(l, i)] = 1.0;
            t[(l, l)] = 1.0;
            if let Some(s) = lay.slope {
                t[(l, s)] = 1.0;
            }
            slots.push(DisturbanceSlot { series: i, kind: ComponentKind::Level, state_index: l });
            variances.push(variance(ComponentKind::Level, i)?);
        }
        if let Some(s) = lay.slope {
            t[(s, s)] = c.slope_rate;
            intercept[s] = (1.0 - c.slope_rate) * c.long_term_slope;
            slots.push(DisturbanceSlot { series: i, kind: ComponentKind::Slope, state_index: s });
            variances.push(variance(ComponentKind::Slope, i)?);
        }
        if let Some((start, len)) = lay.seasonal {
            z[(start, i)] = 1.0;
            for k in 0..len {
                t[(start, start + k)] = -1.0;
                if k > 0 {
                    t[(start + k, start + k - 1)] = 1.0;
                }
            }
            slots.push(DisturbanceSlot { series: i, kind: ComponentKind::Seasonal, state_index: start });
            variances.push(variance(ComponentKind::Seasonal, i)?);
        }
        if let (Some(w), Some(cy)) = (lay.cycle, c.cycle) {
            let (s, co) = cy.frequency.sin_cos();
            let rho = cy.damping;
            z[(w, i)] = 1.0;
            t[(w, w)] = rho * co;
            t[(w, w + 1)] = rho * s;
            t[(w + 1, w)] = -rho * s;
            t[(w + 1, w + 1)] = rho * co;
            let v = variance(ComponentKind::Cycle, i)?;
            slots.push(DisturbanceSlot { series: i, kind: ComponentKind::Cycle, state_index: w });
            slots.push(DisturbanceSlot { series: i, kind: ComponentKind::Cycle, state_index: w + 1 });
            variances.push(v);
            variances.push(v);
        }
        offset += lay.dim;
        layout.push(lay);
    }

    let q_dim = slots.len();
    let mut r = DMatrix::zeros(d, q_dim);
    for (k, slot) in slots.iter().enumerate() {
        r[(slot.state_index, k)] = 1.0;
    }
    let q = DMatrix::from_diagonal(&DVector::from_vec(variances));
    let state_noise_cov = &r * &q * r.transpose();

    let prior = spec.initial_state;
    Ok(StateSpaceSystem {
        z,
        t,
        r,
        q,
        intercept,
        initial_mean: DVector::from_element(d, prior.mean),
        initial_cov: DMatrix::from_diagonal_element(d, d, prior.variance),
        disturbance_slots: slots,
        layout,
        state_noise_cov,
    })
}

/// One transition: `T α + c + R η`.
pub fn propagate(ss: &StateSpaceSystem, state: &DVector<f64>, disturbance: &DVector<f64>) -> Result<DVector<f64>> {
    if state.len() != ss.state_dim() {
        return Err(Error::Dimension(format!(
            "state has length {}, system has {} states",
            state.len(),
            ss.state_dim()
        )));
    }
    if disturbance.len() != ss.disturbance_dim() {
        return Err(Error::Dimension(format!(
            "disturbance has length {}, system has {} disturbances",
            disturbance.len(),
            ss.disturbance_dim()
        )));
    }
    Ok(&ss.t * state + &ss.intercept + &ss.r * disturbance)
}

/// Noiseless observation mean `Zᵀ α + ξ`, with `ξ` the regression
/// contribution of every series.
pub fn observe(ss: &StateSpaceSystem, state: &DVector<f64>, regression: &DVector<f64>) -> Result<DVector<f64>> {
    if state.len() != ss.state_dim() {
        return Err(Error::Dimension(format!(
            "state has length {}, system has {} states",
            state.len(),
            ss.state_dim()
        )));
    }
    if regression.len() != ss.m() {
        return Err(Error::Dimension(format!(
            "regression contribution has length {}, system has {} series",
            regression.len(),
            ss.m()
        )));
    }
    Ok(ss.z.tr_mul(state) + regression)
}
