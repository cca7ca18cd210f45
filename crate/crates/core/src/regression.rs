//! Spike-and-slab multivariate regression.
//!
//! The stacked system `vec(Y★) = X β + vec(E)` has a block-diagonal design
//! (series `i` sees only its own predictors `X_i`) and errors correlated
//! across series through `Σ_ε`. Conditional on `Σ_ε = UᵀU` the system is
//! whitened by `(U⁻¹)ᵀ ⊗ I_n`; every quantity the samplers need then reduces
//! to the whitened cross products `X̂ᵀX̂`, `X̂ᵀŶ` and `ŶᵀŶ`, which are formed
//! from the raw Gram matrix of all predictor columns and `Σ_ε⁻¹` without ever
//! building the Kronecker product.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_jittered, cholesky_strict, log_det};
use crate::statespace::ComponentKind;

/// Maps `(series, predictor)` pairs onto the flat coefficient index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictorLayout {
    counts: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl PredictorLayout {
    pub fn new(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len());
        let mut total = 0;
        for &k in counts {
            offsets.push(total);
            total += k;
        }
        Self {
            counts: counts.to_vec(),
            offsets,
            total,
        }
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn flat(&self, series: usize, predictor: usize) -> usize {
        self.offsets[series] + predictor
    }

    pub fn series_range(&self, series: usize) -> Range<usize> {
        self.offsets[series]..self.offsets[series] + self.counts[series]
    }

    /// `(series, predictor)` owning a flat index.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let series = self.offsets.partition_point(|&o| o <= flat) - 1;
        // skip empty blocks sharing the same offset
        let series = (series..self.m()).find(|&i| self.series_range(i).contains(&flat)).unwrap_or(series);
        (series, flat - self.offsets[series])
    }

    pub fn series_of(&self, flat: usize) -> usize {
        self.locate(flat).0
    }
}

/// Inclusion indicators γ: `bits[i][j]` is true when predictor `j` enters
/// series `i` with a free coefficient.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InclusionVector {
    pub bits: Vec<Vec<bool>>,
}

impl InclusionVector {
    pub fn filled(counts: &[usize], value: bool) -> Self {
        Self {
            bits: counts.iter().map(|&k| vec![value; k]).collect(),
        }
    }

    pub fn from_flat(counts: &[usize], flat: &[bool]) -> Self {
        let mut it = flat.iter().copied();
        Self {
            bits: counts.iter().map(|&k| it.by_ref().take(k).collect()).collect(),
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        self.bits.iter().map(Vec::len).collect()
    }

    pub fn get(&self, series: usize, predictor: usize) -> bool {
        self.bits[series][predictor]
    }

    pub fn set(&mut self, series: usize, predictor: usize, value: bool) {
        self.bits[series][predictor] = value;
    }

    pub fn flat(&self) -> Vec<bool> {
        self.bits.iter().flatten().copied().collect()
    }

    /// Flat indices of included coefficients, in ascending order.
    pub fn selected(&self) -> Vec<usize> {
        self.bits
            .iter()
            .flatten()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
            .collect()
    }

    pub fn included(&self) -> usize {
        self.bits.iter().flatten().filter(|&&b| b).count()
    }
}

/// One-dimensional inverse Wishart `IW(df, scale)`, i.e. the inverse gamma
/// with shape `df/2` and scale `scale/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePrior {
    pub df: f64,
    pub scale: f64,
}

impl VariancePrior {
    /// Prior mean when it exists (`df > 2`), otherwise the prior guess
    /// `scale / df`.
    pub fn center(&self) -> f64 {
        if self.df > 2.0 {
            self.scale / (self.df - 2.0)
        } else {
            self.scale / self.df
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.df > 0.0 && self.scale > 0.0 && self.df.is_finite() && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what} prior needs positive df and scale (got {} and {})",
                self.df, self.scale
            )))
        }
    }
}

/// Priors `(w_u, W_u)` on the component variances, per series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentPriors {
    pub level: Vec<VariancePrior>,
    pub slope: Vec<VariancePrior>,
    pub seasonal: Vec<VariancePrior>,
    pub cycle: Vec<VariancePrior>,
}

impl ComponentPriors {
    pub fn uniform(m: usize, prior: VariancePrior) -> Self {
        Self {
            level: vec![prior; m],
            slope: vec![prior; m],
            seasonal: vec![prior; m],
            cycle: vec![prior; m],
        }
    }

    /// Weak priors centered on `(fraction · sd_i)²` with `df` observations
    /// worth of weight.
    pub fn from_scale(series_sd: &[f64], df: f64, fraction: f64) -> Self {
        let priors: Vec<VariancePrior> = series_sd
            .iter()
            .map(|sd| {
                let guess = (fraction * sd).powi(2).max(f64::MIN_POSITIVE.sqrt());
                VariancePrior { df, scale: df * guess }
            })
            .collect();
        Self {
            level: priors.clone(),
            slope: priors.clone(),
            seasonal: priors.clone(),
            cycle: priors,
        }
    }

    pub fn get(&self, kind: ComponentKind, series: usize) -> VariancePrior {
        match kind {
            ComponentKind::Level => self.level[series],
            ComponentKind::Slope => self.slope[series],
            ComponentKind::Seasonal => self.seasonal[series],
            ComponentKind::Cycle => self.cycle[series],
        }
    }

    pub fn restrict_to_series(&self, i: usize) -> Self {
        Self {
            level: vec![self.level[i]],
            slope: vec![self.slope[i]],
            seasonal: vec![self.seasonal[i]],
            cycle: vec![self.cycle[i]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    /// Prior inclusion probabilities `π_ij`; 0 or 1 pins the indicator.
    pub inclusion: Vec<Vec<f64>>,
    /// Slab mean `b` over the flat coefficient vector.
    pub prior_mean: DVector<f64>,
    /// κ: observations worth of weight on the slab mean.
    pub information_weight: f64,
    /// ω: shrinkage toward the diagonal in the fallback slab matrix.
    pub diagonal_shrinkage: f64,
    /// v₀.
    pub sigma_df: f64,
    /// V₀.
    pub sigma_scale: DMatrix<f64>,
    pub components: ComponentPriors,
}

impl PriorSet {
    pub fn validate(&self, counts: &[usize]) -> Result<()> {
        let m = counts.len();
        if self.inclusion.len() != m || self.inclusion.iter().zip(counts).any(|(p, &k)| p.len() != k) {
            return Err(Error::Config("inclusion probabilities do not match predictor counts".into()));
        }
        if let Some(p) = self.inclusion.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("inclusion probability {p} outside [0, 1]")));
        }
        if self.prior_mean.len() != counts.iter().sum::<usize>() {
            return Err(Error::Config("prior mean length differs from the number of predictors".into()));
        }
        if !(self.information_weight > 0.0) {
            return Err(Error::Config("information weight κ must be positive".into()));
        }
        if !(self.diagonal_shrinkage > 0.0 && self.diagonal_shrinkage <= 1.0) {
            return Err(Error::Config("diagonal shrinkage ω must lie in (0, 1]".into()));
        }
        if !(self.sigma_df > (m + 1) as f64) {
            return Err(Error::Config(format!(
                "v0 = {} must exceed the number of series plus one ({})",
                self.sigma_df,
                m + 1
            )));
        }
        if self.sigma_scale.nrows() != m || self.sigma_scale.ncols() != m {
            return Err(Error::Config("V0 must be m x m".into()));
        }
        cholesky_strict(&self.sigma_scale, "V0")
            .map_err(|_| Error::Config("V0 must be symmetric positive definite".into()))?;
        for kind in ComponentKind::ALL {
            for i in 0..m {
                let p = match kind {
                    ComponentKind::Level => self.components.level.get(i),
                    ComponentKind::Slope => self.components.slope.get(i),
                    ComponentKind::Seasonal => self.components.seasonal.get(i),
                    ComponentKind::Cycle => self.components.cycle.get(i),
                };
                p.ok_or_else(|| Error::Config(format!("missing {} prior for series {i}", kind.name())))?
                    .validate(kind.name())?;
            }
        }
        Ok(())
    }

    /// `log p(γ)` under independent Bernoulli(π_ij) indicators.
    pub fn log_prior_inclusion(&self, gamma: &InclusionVector) -> f64 {
        let mut total = 0.0;
        for (pi_row, bits) in self.inclusion.iter().zip(&gamma.bits) {
            for (&pi, &b) in pi_row.iter().zip(bits) {
                total += if b { pi.ln() } else { (1.0 - pi).ln() };
            }
        }
        total
    }

    /// Prior for the one-series model of series `i`.
    pub fn restrict_to_series(&self, i: usize, counts: &[usize]) -> PriorSet {
        let layout = PredictorLayout::new(counts);
        let range = layout.series_range(i);
        PriorSet {
            inclusion: vec![self.inclusion[i].clone()],
            prior_mean: self.prior_mean.rows(range.start, range.len()).into_owned(),
            information_weight: self.information_weight,
            diagonal_shrinkage: self.diagonal_shrinkage,
            sigma_df: self.sigma_df,
            sigma_scale: DMatrix::from_element(1, 1, self.sigma_scale[(i, i)]),
            components: self.components.restrict_to_series(i),
        }
    }
}

/// Default weight of the component-variance priors.
pub const DEFAULT_COMPONENT_DF: f64 = 0.01;
/// Default prior guess for component standard deviations as a fraction of
/// each target series' standard deviation.
pub const DEFAULT_COMPONENT_SD_FRACTION: f64 = 0.01;

/// Prior elicitation from an expected model size `q_i` per series and an
/// expected R²: `π_ij = q_i / k_i`, `V₀ = (v₀ - m - 1)(1 - R²) Σ_y`, `b = 0`.
///
/// Component-variance priors default to weak inverse gammas centered on
/// `(0.01 · sd_i)²`.
pub fn elicit_priors(
    expected_model_sizes: &[f64],
    predictor_counts: &[usize],
    expected_r2: f64,
    sigma_df: f64,
    sigma_y: &DMatrix<f64>,
    information_weight: f64,
    diagonal_shrinkage: f64,
) -> Result<PriorSet> {
    let m = predictor_counts.len();
    if expected_model_sizes.len() != m {
        return Err(Error::Config(format!(
            "{} expected model sizes for {m} series",
            expected_model_sizes.len()
        )));
    }
    if sigma_y.nrows() != m || sigma_y.ncols() != m {
        return Err(Error::Dimension(format!("target covariance must be {m}x{m}")));
    }
    if !(sigma_df > (m + 1) as f64) {
        return Err(Error::Config(format!(
            "v0 = {sigma_df} must exceed the number of series plus one ({})",
            m + 1
        )));
    }
    if !(0.0..1.0).contains(&expected_r2) {
        return Err(Error::Config(format!("expected R² {expected_r2} outside [0, 1)")));
    }
    let mut inclusion = Vec::with_capacity(m);
    for (i, (&q, &k)) in expected_model_sizes.iter().zip(predictor_counts).enumerate() {
        if q < 0.0 || q > k as f64 {
            return Err(Error::Config(format!(
                "series {i}: expected model size {q} outside [0, {k}]"
            )));
        }
        inclusion.push(vec![if k == 0 { 0.0 } else { q / k as f64 }; k]);
    }
    let sigma_scale = sigma_y * ((sigma_df - m as f64 - 1.0) * (1.0 - expected_r2));
    let sd: Vec<f64> = (0..m).map(|i| sigma_y[(i, i)].max(0.0).sqrt()).collect();
    Ok(PriorSet {
        inclusion,
        prior_mean: DVector::zeros(predictor_counts.iter().sum()),
        information_weight,
        diagonal_shrinkage,
        sigma_df,
        sigma_scale,
        components: ComponentPriors::from_scale(&sd, DEFAULT_COMPONENT_DF, DEFAULT_COMPONENT_SD_FRACTION),
    })
}

/// Scalar knobs from which a full [`PriorSet`] is elicited for a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Expected number of active predictors per series, capped at `k_i`.
    pub expected_model_size: f64,
    pub expected_r2: f64,
    /// v₀; defaults to m + 2.
    pub sigma_df: Option<f64>,
    pub information_weight: f64,
    pub diagonal_shrinkage: f64,
    pub component_df: f64,
    pub component_sd_fraction: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            expected_model_size: 1.0,
            expected_r2: 0.8,
            sigma_df: None,
            information_weight: 0.01,
            diagonal_shrinkage: 0.5,
            component_df: DEFAULT_COMPONENT_DF,
            component_sd_fraction: DEFAULT_COMPONENT_SD_FRACTION,
        }
    }
}

impl PriorConfig {
    pub fn elicit(&self, y: &DMatrix<f64>, predictor_counts: &[usize]) -> Result<PriorSet> {
        let m = y.ncols();
        if predictor_counts.len() != m {
            return Err(Error::Dimension(format!("{} predictor counts for {m} series", predictor_counts.len())));
        }
        if !(self.component_df > 0.0 && self.component_sd_fraction > 0.0) {
            return Err(Error::Config("component prior df and sd fraction must be positive".into()));
        }
        let sizes: Vec<f64> = predictor_counts
            .iter()
            .map(|&k| self.expected_model_size.min(k as f64))
            .collect();
        let sigma_y = target_scale(y);
        let mut priors = elicit_priors(
            &sizes,
            predictor_counts,
            self.expected_r2,
            self.sigma_df.unwrap_or(m as f64 + 2.0),
            &sigma_y,
            self.information_weight,
            self.diagonal_shrinkage,
        )?;
        let sd: Vec<f64> = (0..m).map(|i| sigma_y[(i, i)].max(0.0).sqrt()).collect();
        priors.components = ComponentPriors::from_scale(&sd, self.component_df, self.component_sd_fraction);
        // a constant target has zero sample variance; keep V0 usable
        for i in 0..m {
            if priors.sigma_scale[(i, i)] <= 0.0 {
                priors.sigma_scale[(i, i)] = 1e-8;
            }
        }
        priors.validate(predictor_counts)?;
        Ok(priors)
    }
}

/// Scale of the targets used for elicitation: half the sample covariance of
/// the first differences. For independent rows this estimates the ordinary
/// covariance; for trending series it is not swamped by the trend.
pub fn target_scale(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    if n < 3 {
        return sample_covariance(y);
    }
    let diff = y.rows(1, n - 1) - y.rows(0, n - 1);
    sample_covariance(&diff) / 2.0
}

/// Sample covariance of the columns of `y` (divisor n - 1).
pub fn sample_covariance(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let m = y.ncols();
    if n < 2 {
        return DMatrix::identity(m, m);
    }
    let means = y.row_mean();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    centered.tr_mul(&centered) / (n - 1) as f64
}

#[derive(Clone, Debug)]
pub struct RegressionData {
    /// Targets with the latent components removed (n × m).
    pub y_star: DMatrix<f64>,
    pub x_blocks: Vec<DMatrix<f64>>,
}

/// Fixed predictor blocks and their cross products.
#[derive(Clone, Debug)]
pub struct RegressionDesign {
    layout: PredictorLayout,
    x_blocks: Vec<DMatrix<f64>>,
    n: usize,
    /// Inner products of every pair of predictor columns across all blocks.
    cross_gram: DMatrix<f64>,
}

impl RegressionDesign {
    pub fn new(x_blocks: Vec<DMatrix<f64>>, n: usize) -> Result<Self> {
        for (i, x) in x_blocks.iter().enumerate() {
            if x.nrows() != n {
                return Err(Error::Dimension(format!(
                    "predictor block {i} has {} rows, expected {n}",
                    x.nrows()
                )));
            }
            if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "predictor block {i}, row {}, column {}",
                    pos % n + 1,
                    pos / n + 1
                )));
            }
        }
        let counts: Vec<usize> = x_blocks.iter().map(|x| x.ncols()).collect();
        let layout = PredictorLayout::new(&counts);
        let k = layout.total();
        let mut all = DMatrix::zeros(n, k);
        for (i, x) in x_blocks.iter().enumerate() {
            let r = layout.series_range(i);
            all.columns_mut(r.start, r.len()).copy_from(x);
        }
        let cross_gram = all.tr_mul(&all);
        Ok(Self {
            layout,
            x_blocks,
            n,
            cross_gram,
        })
    }

    pub fn layout(&self) -> &PredictorLayout {
        &self.layout
    }

    pub fn x_blocks(&self) -> &[DMatrix<f64>] {
        &self.x_blocks
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The nm × K block-diagonal stacked design.
    pub fn stacked(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut x = DMatrix::zeros(n * self.layout.m(), self.layout.total());
        for (i, block) in self.x_blocks.iter().enumerate() {
            let r = self.layout.series_range(i);
            x.view_mut((i * n, r.start), (n, r.len())).copy_from(block);
        }
        x
    }

    /// n × m matrix whose column `i` is `X_i β_i`.
    pub fn contribution(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.layout.m());
        for (i, x) in self.x_blocks.iter().enumerate() {
            let r = self.layout.series_range(i);
            if r.is_empty() {
                continue;
            }
            let col = x * beta.rows(r.start, r.len());
            out.set_column(i, &col);
        }
        out
    }

    /// Regression contribution at a single time point from rows of future
    /// predictor blocks.
    pub fn row_contribution(x_rows: &[DVector<f64>], beta: &DVector<f64>, layout: &PredictorLayout) -> DVector<f64> {
        DVector::from_iterator(
            layout.m(),
            (0..layout.m()).map(|i| {
                let r = layout.series_range(i);
                x_rows[i].dot(&beta.rows(r.start, r.len()))
            }),
        )
    }

    /// Raw (unwhitened) Gram restricted to `selected`, zero across series.
    fn raw_gram(&self, selected: &[usize]) -> DMatrix<f64> {
        let s = selected.len();
        DMatrix::from_fn(s, s, |a, b| {
            let (ia, ib) = (selected[a], selected[b]);
            if self.layout.series_of(ia) == self.layout.series_of(ib) {
                self.cross_gram[(ia, ib)]
            } else {
                0.0
            }
        })
    }

    fn label(&self, flat: usize) -> String {
        let (i, j) = self.layout.locate(flat);
        format!("series {} predictor {}", i + 1, j + 1)
    }

    /// Slab information matrix `A_γ` for the selected columns.
    pub fn slab_information(&self, selected: &[usize], priors: &PriorSet) -> Result<DMatrix<f64>> {
        slab_information_from_gram(
            self.raw_gram(selected),
            priors.information_weight,
            priors.diagonal_shrinkage,
            self.n,
            |k| self.label(selected[k]),
        )
    }
}

/// Whitened cross products of the stacked regression.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitenedSystem {
    /// `X̂ᵀ X̂` (K × K).
    pub xtx: DMatrix<f64>,
    /// `X̂ᵀ Ŷ` (K).
    pub xty: DVector<f64>,
    /// `ŶᵀŶ`.
    pub yty: f64,
}

impl WhitenedSystem {
    pub fn from_dense(y_hat: &DVector<f64>, x_hat: &DMatrix<f64>) -> Self {
        Self {
            xtx: x_hat.tr_mul(x_hat),
            xty: x_hat.tr_mul(y_hat),
            yty: y_hat.dot(y_hat),
        }
    }

    /// Same quantities as [`whiten`] followed by [`WhitenedSystem::from_dense`],
    /// built from `Σ_ε⁻¹` and raw cross products.
    pub fn from_design(design: &RegressionDesign, y_star: &DMatrix<f64>, sigma_eps: &DMatrix<f64>) -> Result<Self> {
        let m = design.layout.m();
        check_sigma(sigma_eps, m)?;
        if y_star.nrows() != design.n || y_star.ncols() != m {
            return Err(Error::Dimension(format!(
                "targets are {}x{}, design expects {}x{m}",
                y_star.nrows(),
                y_star.ncols(),
                design.n
            )));
        }
        let precision = cholesky_strict(sigma_eps, "observation covariance")?.inverse();
        let k = design.layout.total();
        let owner: Vec<usize> = (0..k).map(|f| design.layout.series_of(f)).collect();
        let xtx = DMatrix::from_fn(k, k, |a, b| precision[(owner[a], owner[b])] * design.cross_gram[(a, b)]);

        // X_bᵀ Y★ for all columns at once
        let mut xty_raw = DMatrix::zeros(k, m);
        for (i, x) in design.x_blocks.iter().enumerate() {
            let r = design.layout.series_range(i);
            if !r.is_empty() {
                xty_raw.rows_mut(r.start, r.len()).copy_from(&x.tr_mul(y_star));
            }
        }
        let xty = DVector::from_fn(k, |a, _| {
            (0..m).map(|c| precision[(owner[a], c)] * xty_raw[(a, c)]).sum()
        });
        let yy = y_star.tr_mul(y_star);
        let yty = precision.component_mul(&yy).sum();
        Ok(Self { xtx, xty, yty })
    }
}

fn check_sigma(sigma_eps: &DMatrix<f64>, m: usize) -> Result<()> {
    if sigma_eps.nrows() != m || sigma_eps.ncols() != m {
        return Err(Error::Dimension(format!(
            "observation covariance is {}x{}, expected {m}x{m}",
            sigma_eps.nrows(),
            sigma_eps.ncols()
        )));
    }
    Ok(())
}

/// Whitens the stacked regression: returns `Ŷ = ((U⁻¹)ᵀ ⊗ I_n) vec(Y★)` and
/// `X̂ = ((U⁻¹)ᵀ ⊗ I_n) X` for the upper Cholesky factor `Σ_ε = UᵀU`.
///
/// Block `a` of the result mixes the series blocks with the weights of row
/// `a` of `(U⁻¹)ᵀ`, which is lower triangular.
pub fn whiten(data: &RegressionData, sigma_eps: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = data.y_star.ncols();
    let n = data.y_star.nrows();
    check_sigma(sigma_eps, m)?;
    let design = RegressionDesign::new(data.x_blocks.clone(), n)?;
    if design.layout.m() != m {
        return Err(Error::Dimension(format!("{} predictor blocks for {m} series", design.layout.m())));
    }
    let l = cholesky_strict(sigma_eps, "observation covariance")?.l();
    let w = linalg::lower_triangular_inverse(&l)
        .ok_or_else(|| Error::NotPositiveDefinite("observation covariance factor".into()))?;
    let k = design.layout.total();
    let mut y_hat = DVector::zeros(n * m);
    let mut x_hat = DMatrix::zeros(n * m, k);
    for a in 0..m {
        for b in 0..=a {
            let weight = w[(a, b)];
            if weight == 0.0 {
                continue;
            }
            let mut yb = y_hat.rows_mut(a * n, n);
            yb.axpy(weight, &data.y_star.column(b), 1.0);
            let r = design.layout.series_range(b);
            if !r.is_empty() {
                let mut xb = x_hat.view_mut((a * n, r.start), (n, r.len()));
                xb += &design.x_blocks[b] * weight;
            }
        }
    }
    Ok((y_hat, x_hat))
}

/// Inverse of [`whiten`] on the response: multiplies by `Uᵀ ⊗ I_n` and
/// reshapes to n × m.
pub fn unwhiten(y_hat: &DVector<f64>, sigma_eps: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let m = sigma_eps.nrows();
    let l = cholesky_strict(sigma_eps, "observation covariance")?.l();
    let mut out = DMatrix::zeros(n, m);
    for a in 0..m {
        for b in 0..=a {
            let mut col = out.column_mut(a);
            col.axpy(l[(a, b)], &y_hat.rows(b * n, n), 1.0);
        }
    }
    Ok(out)
}

/// Slab information matrix `A_γ = κ XᵀX / n` for the stacked design columns
/// `x`, falling back to `κ (ω XᵀX + (1-ω) diag(XᵀX)) / n` when `XᵀX` is
/// singular.
pub fn slab_information_matrix(x: &DMatrix<f64>, information_weight: f64, diagonal_shrinkage: f64, n: usize) -> Result<DMatrix<f64>> {
    slab_information_from_gram(x.tr_mul(x), information_weight, diagonal_shrinkage, n, |k| {
        format!("column {}", k + 1)
    })
}

fn slab_information_from_gram(
    gram: DMatrix<f64>,
    kappa: f64,
    omega: f64,
    n: usize,
    label: impl Fn(usize) -> String,
) -> Result<DMatrix<f64>> {
    let s = gram.nrows();
    if s == 0 {
        return Ok(gram);
    }
    let scale = kappa / n.max(1) as f64;
    if nalgebra::Cholesky::new(gram.clone()).is_some() {
        return Ok(gram * scale);
    }
    let mut fallback = &gram * omega;
    for i in 0..s {
        fallback[(i, i)] = gram[(i, i)];
    }
    if nalgebra::Cholesky::new(fallback.clone()).is_some() {
        return Ok(fallback * scale);
    }
    match (0..s).find(|&i| gram[(i, i)] <= 0.0) {
        Some(i) => Err(Error::NotPositiveDefinite(format!(
            "slab information matrix: {} is identically zero",
            label(i)
        ))),
        None => Err(Error::NotPositiveDefinite(format!(
            "slab information matrix stays singular with ω = {omega}"
        ))),
    }
}

/// Precision factorization of `β_γ | Ŷ, Σ_ε, γ`.
struct Posterior {
    selected: Vec<usize>,
    /// Lower Cholesky factor of `X̂_γᵀX̂_γ + A_γ`.
    precision_factor: DMatrix<f64>,
    precision_log_det: f64,
    /// `z = X̂_γᵀŶ + A_γ b_γ`.
    z: DVector<f64>,
    a_log_det: f64,
    b_a_b: f64,
}

fn posterior(ws: &WhitenedSystem, selected: &[usize], design: &RegressionDesign, priors: &PriorSet) -> Result<Posterior> {
    let s = selected.len();
    let a = design.slab_information(selected, priors)?;
    let a_chol = cholesky_jittered(&a, "slab information matrix")?;
    let b = DVector::from_iterator(s, selected.iter().map(|&k| priors.prior_mean[k]));
    let ab = &a * &b;
    let mut precision = DMatrix::from_fn(s, s, |i, j| ws.xtx[(selected[i], selected[j])]) + &a;
    linalg::symmetrize(&mut precision);
    let chol = cholesky_jittered(&precision, "coefficient posterior precision")?;
    let z = DVector::from_iterator(s, selected.iter().map(|&k| ws.xty[k])) + &ab;
    Ok(Posterior {
        selected: selected.to_vec(),
        precision_log_det: log_det(&chol),
        precision_factor: chol.l(),
        z,
        a_log_det: log_det(&a_chol),
        b_a_b: b.dot(&ab),
    })
}

fn score_of(post: &Posterior, log_prior: f64) -> f64 {
    if post.selected.is_empty() {
        return log_prior;
    }
    let mut w = post.z.clone();
    post.precision_factor.solve_lower_triangular_mut(&mut w);
    let quad = w.norm_squared();
    0.5 * post.a_log_det - 0.5 * post.precision_log_det + log_prior - 0.5 * (post.b_a_b - quad)
}

/// Log of the unnormalized conditional `p(γ | Σ_ε, Y★)` from whitened cross
/// products.
pub fn gamma_log_score_whitened(
    gamma: &InclusionVector,
    ws: &WhitenedSystem,
    design: &RegressionDesign,
    priors: &PriorSet,
) -> Result<f64> {
    let log_prior = priors.log_prior_inclusion(gamma);
    if log_prior == f64::NEG_INFINITY {
        return Ok(log_prior);
    }
    let selected = gamma.selected();
    if selected.is_empty() {
        return Ok(log_prior);
    }
    Ok(score_of(&posterior(ws, &selected, design, priors)?, log_prior))
}

/// Log of the unnormalized conditional `p(γ | Σ_ε, Y★)`:
/// `½log|A_γ| - ½log|X̂_γᵀX̂_γ + A_γ| + log p(γ) - ½(b_γᵀA_γb_γ - zᵀ(X̂_γᵀX̂_γ + A_γ)⁻¹z)`.
pub fn gamma_log_score(gamma: &InclusionVector, sigma_eps: &DMatrix<f64>, data: &RegressionData, priors: &PriorSet) -> Result<f64> {
    let design = RegressionDesign::new(data.x_blocks.clone(), data.y_star.nrows())?;
    let ws = WhitenedSystem::from_design(&design, &data.y_star, sigma_eps)?;
    gamma_log_score_whitened(gamma, &ws, &design, priors)
}

/// Draw of the full coefficient vector from `β | Ŷ, Σ_ε, γ`; excluded
/// coordinates are exactly zero.
pub fn draw_beta<R: Rng + ?Sized>(
    ws: &WhitenedSystem,
    gamma: &InclusionVector,
    design: &RegressionDesign,
    priors: &PriorSet,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut beta = DVector::zeros(design.layout.total());
    let selected = gamma.selected();
    if selected.is_empty() {
        return Ok(beta);
    }
    let post = posterior(ws, &selected, design, priors)?;
    let chol_l = &post.precision_factor;
    // mean = P⁻¹ z via the factor
    let mut mean = post.z.clone();
    chol_l.solve_lower_triangular_mut(&mut mean);
    chol_l.tr_solve_lower_triangular_mut(&mut mean);
    let draw = dist::normal_from_precision_factor(&mean, chol_l, rng);
    for (k, &idx) in selected.iter().enumerate() {
        beta[idx] = draw[k];
    }
    Ok(beta)
}

/// Posterior mean and covariance of `β_γ` (for diagnostics and tests).
pub fn beta_posterior_moments(
    ws: &WhitenedSystem,
    gamma: &InclusionVector,
    design: &RegressionDesign,
    priors: &PriorSet,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let selected = gamma.selected();
    if selected.is_empty() {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let post = posterior(ws, &selected, design, priors)?;
    let l = &post.precision_factor;
    let mut mean = post.z.clone();
    l.solve_lower_triangular_mut(&mut mean);
    l.tr_solve_lower_triangular_mut(&mut mean);
    let l_inv = linalg::lower_triangular_inverse(l)
        .ok_or_else(|| Error::NotPositiveDefinite("coefficient posterior precision".into()))?;
    Ok((mean, l_inv.tr_mul(&l_inv)))
}

/// Residual cross product `EᵀE` with `E = Y★ - [X_i β_i]`.
pub fn residual_cross_product(design: &RegressionDesign, y_star: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    let e = y_star - design.contribution(beta);
    e.tr_mul(&e)
}

/// Draw of `Σ_ε | Y★, β, γ ~ IW(v₀ + n, EᵀE + V₀)`.
pub fn draw_sigma_eps<R: Rng + ?Sized>(
    design: &RegressionDesign,
    y_star: &DMatrix<f64>,
    beta: &DVector<f64>,
    priors: &PriorSet,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut scale = residual_cross_product(design, y_star, beta) + &priors.sigma_scale;
    linalg::symmetrize(&mut scale);
    cholesky_strict(&scale, "observation covariance posterior scale")?;
    dist::inverse_wishart(priors.sigma_df + y_star.nrows() as f64, &scale, rng)
}

/// Bookkeeping from one SSVS sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepStats {
    pub visited: usize,
    pub flips: usize,
}

/// One stochastic-search sweep over all unpinned indicators in a freshly
/// shuffled order. Each indicator is redrawn from its conditional given the
/// others, using the two scores with the bit on and off.
pub fn ssvs_sweep<R: Rng + ?Sized>(
    gamma: &mut InclusionVector,
    ws: &WhitenedSystem,
    design: &RegressionDesign,
    priors: &PriorSet,
    rng: &mut R,
) -> Result<SweepStats> {
    let layout = design.layout();
    let mut free = Vec::with_capacity(layout.total());
    for (i, row) in priors.inclusion.iter().enumerate() {
        for (j, &pi) in row.iter().enumerate() {
            if pi <= 0.0 {
                gamma.set(i, j, false);
            } else if pi >= 1.0 {
                gamma.set(i, j, true);
            } else {
                free.push((i, j));
            }
        }
    }
    free.shuffle(rng);

    let mut stats = SweepStats::default();
    let mut current = gamma_log_score_whitened(gamma, ws, design, priors)?;
    for (i, j) in free {
        let old = gamma.get(i, j);
        gamma.set(i, j, !old);
        let flipped = gamma_log_score_whitened(gamma, ws, design, priors)?;
        let (on, off) = if old { (current, flipped) } else { (flipped, current) };
        let p_on = logistic(on - off);
        let bit = rng.random::<f64>() < p_on;
        stats.visited += 1;
        if bit == old {
            gamma.set(i, j, old);
        } else {
            current = flipped;
            stats.flips += 1;
        }
    }
    Ok(stats)
}

/// Spec-level SSVS step: whitens the data for `Σ_ε` and runs one sweep.
pub fn draw_gamma<R: Rng + ?Sized>(
    gamma: &InclusionVector,
    sigma_eps: &DMatrix<f64>,
    data: &RegressionData,
    priors: &PriorSet,
    rng: &mut R,
) -> Result<InclusionVector> {
    let design = RegressionDesign::new(data.x_blocks.clone(), data.y_star.nrows())?;
    let ws = WhitenedSystem::from_design(&design, &data.y_star, sigma_eps)?;
    let mut next = gamma.clone();
    ssvs_sweep(&mut next, &ws, &design, priors, rng)?;
    Ok(next)
}

fn logistic(x: f64) -> f64 {
    if x.is_nan() {
        return 0.5;
    }
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
