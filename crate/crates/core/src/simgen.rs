//! Seeded synthetic datasets: the seven simulation models and arbitrary
//! user-specified processes.
//!
//! Data are produced by the same state-space system the sampler fits, with
//! every initial state drawn from N(0, 1).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_strict};
use crate::regression::{InclusionVector, PredictorLayout, RegressionDesign};
use crate::rng::{stream_rng, EngineRng};
use crate::statespace::{build_state_space, ComponentConfig, ComponentCovariances, ComponentKind, ModelSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub y: DMatrix<f64>,
    /// Predictors offered to the model for training, one block per series.
    pub x_blocks: Vec<DMatrix<f64>>,
    pub predictor_names: Vec<Vec<String>>,
    pub truth: Truth,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: ModelSpec,
    /// Generating coefficients over the flat predictor index.
    pub beta: DVector<f64>,
    pub sigma_eps: DMatrix<f64>,
    pub theta: ComponentCovariances,
    pub gamma: InclusionVector,
    /// Training columns whose values differ from the column that generated
    /// the series (partially shuffled copies).
    pub mismatched: InclusionVector,
    pub states: Vec<DVector<f64>>,
    pub observation_noise: DMatrix<f64>,
}

impl SyntheticDataset {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }
}

/// Model 1-4 coefficients, series by series.
const B4: [[f64; 4]; 2] = [[2.0, -1.0, -0.5, 0.0], [-1.5, 4.0, 0.0, 2.5]];
const B5_EXTRA: [f64; 4] = [3.0, 0.0, 3.5, -2.0];
const B6_EXTRA: [f64; 4] = [0.0, 1.0, 1.5, -0.5];
const B7: [[f64; 8]; 2] = [
    [2.0, -1.0, -0.5, 0.0, 1.5, -2.0, 0.0, 3.5],
    [-1.5, 4.0, 0.0, 2.5, -1.0, 0.0, -3.0, 0.5],
];

fn sigma_two() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.1, 0.7, 0.7, 0.9])
}

fn sigma_equicorrelated(diag: &[f64]) -> DMatrix<f64> {
    let m = diag.len();
    DMatrix::from_fn(m, m, |i, j| if i == j { diag[i] } else { 0.7 })
}

/// One predictor column of length `n` by index (1-based, as in the model
/// tables): N(5,5²), Poisson(10), Bernoulli(0.5), N(-2,5²), N(-5,5²),
/// Poisson(15), Poisson(20), N(0,10²).
fn predictor_column(index: usize, n: usize, rng: &mut EngineRng) -> DVector<f64> {
    let normal = |mu: f64, sd: f64, rng: &mut EngineRng| {
        let d = Normal::new(mu, sd).expect("valid normal");
        DVector::from_fn(n, |_, _| d.sample(rng))
    };
    let poisson = |lambda: f64, rng: &mut EngineRng| {
        let d = Poisson::new(lambda).expect("valid poisson");
        DVector::from_fn(n, |_, _| d.sample(rng))
    };
    match index {
        1 => normal(5.0, 5.0, rng),
        2 => poisson(10.0, rng),
        3 => {
            let d = Bernoulli::new(0.5).expect("valid bernoulli");
            DVector::from_fn(n, |_, _| if d.sample(rng) { 1.0 } else { 0.0 })
        }
        4 => normal(-2.0, 5.0, rng),
        5 => normal(-5.0, 5.0, rng),
        6 => poisson(15.0, rng),
        7 => poisson(20.0, rng),
        8 => normal(0.0, 10.0, rng),
        _ => unreachable!("predictor index {index}"),
    }
}

/// Copy of `column` with its second half permuted.
fn shuffle_second_half(column: &DVector<f64>, rng: &mut EngineRng) -> DVector<f64> {
    let mut values: Vec<f64> = column.iter().copied().collect();
    let half = values.len() / 2;
    values[half..].shuffle(rng);
    DVector::from_vec(values)
}

fn columns_to_matrix(cols: &[DVector<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, cols.len(), |t, j| cols[j][t])
}

/// Trend setting of one series: `(ρ, D, σ_level, σ_slope)`; `ρ = None` means
/// a level without slope.
type TrendRow = (Option<f64>, f64, f64, f64);

fn trend_spec(rows: &[TrendRow]) -> (Vec<ComponentConfig>, Vec<(ComponentKind, usize, f64)>) {
    let mut configs = Vec::new();
    let mut variances = Vec::new();
    for (i, &(rho, d, sd_level, sd_slope)) in rows.iter().enumerate() {
        match rho {
            Some(rho) => {
                configs.push(ComponentConfig::local_linear_trend(rho, d));
                variances.push((ComponentKind::Slope, i, sd_slope * sd_slope));
            }
            None => configs.push(ComponentConfig::level()),
        }
        variances.push((ComponentKind::Level, i, sd_level * sd_level));
    }
    (configs, variances)
}

/// Simulates targets for a system whose regression part uses the
/// generating predictor blocks.
fn simulate(
    spec: &ModelSpec,
    theta: &ComponentCovariances,
    gen_blocks: &[DMatrix<f64>],
    beta: &DVector<f64>,
    sigma_eps: &DMatrix<f64>,
    n: usize,
    rng: &mut EngineRng,
) -> Result<(DMatrix<f64>, Vec<DVector<f64>>, DMatrix<f64>)> {
    let ss = build_state_space(spec, theta)?;
    let m = spec.m();
    let h_sqrt = cholesky_strict(sigma_eps, "observation covariance")?.l();
    let q_sqrt = linalg::psd_sqrt(&ss.q, "state disturbance covariance")?;
    let regression = RegressionDesign::new(gen_blocks.to_vec(), n)?.contribution(beta);

    let mut y = DMatrix::zeros(n, m);
    let mut noise = DMatrix::zeros(n, m);
    let mut states = Vec::with_capacity(n);
    let mut alpha = linalg::standard_normal_vector(rng, ss.state_dim());
    for t in 0..n {
        let eps = &h_sqrt * linalg::standard_normal_vector(rng, m);
        let obs = ss.z.tr_mul(&alpha);
        for i in 0..m {
            y[(t, i)] = obs[i] + regression[(t, i)] + eps[i];
            noise[(t, i)] = eps[i];
        }
        let eta = &q_sqrt * linalg::standard_normal_vector(rng, ss.disturbance_dim());
        let next = &ss.t * &alpha + &ss.intercept + &ss.r * eta;
        states.push(std::mem::replace(&mut alpha, next));
    }
    Ok((y, states, noise))
}

/// Replaces the off-diagonal entries with `ρ sqrt(σ_ii σ_jj)`.
pub fn apply_correlation(sigma: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let m = sigma.nrows();
    let out = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            sigma[(i, i)]
        } else {
            rho * (sigma[(i, i)] * sigma[(j, j)]).sqrt()
        }
    });
    cholesky_strict(&out, "observation covariance")
        .map_err(|_| Error::Config(format!("correlation {rho} gives a covariance that is not positive definite")))?;
    Ok(out)
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|j| format!("{prefix}{j}")).collect()
}

/// Generates one of the seven simulation models.
pub fn generate_model(id: u8, n: usize, seed: u64) -> Result<SyntheticDataset> {
    generate_model_with(id, n, seed, None)
}

/// [`generate_model`] with an optional correlation override on `Σ_ε`.
pub fn generate_model_with(id: u8, n: usize, seed: u64, correlation: Option<f64>) -> Result<SyntheticDataset> {
    if n < 2 {
        return Err(Error::Config(format!("n = {n}: at least two observations are required")));
    }
    let mut rng = stream_rng(seed, 0);
    let cycle = (PI / 10.0, 0.5);
    let model2_trend = [(Some(0.6), 0.02, 0.5, 0.08), (Some(1.0), 0.0, 1.0, 0.16)];
    let (trend, sigma, b_rows): (Vec<TrendRow>, DMatrix<f64>, Vec<Vec<f64>>) = match id {
        1 => (
            vec![(Some(1.0), 0.0, 0.5, 0.08), (None, 0.0, 1.0, 0.0)],
            sigma_two(),
            B4.iter().map(|r| r.to_vec()).collect(),
        ),
        2..=4 => (model2_trend.to_vec(), sigma_two(), B4.iter().map(|r| r.to_vec()).collect()),
        5 => (
            vec![model2_trend[0], model2_trend[1], (Some(0.3), 0.01, 0.7, 0.12)],
            sigma_equicorrelated(&[1.1, 0.9, 1.0]),
            vec![B4[0].to_vec(), B4[1].to_vec(), B5_EXTRA.to_vec()],
        ),
        6 => (
            vec![
                model2_trend[0],
                model2_trend[1],
                (Some(0.3), 0.01, 0.7, 0.12),
                (Some(0.5), 0.0, 0.6, 0.10),
            ],
            sigma_equicorrelated(&[1.1, 0.9, 1.0, 1.2]),
            vec![B4[0].to_vec(), B4[1].to_vec(), B5_EXTRA.to_vec(), B6_EXTRA.to_vec()],
        ),
        7 => (model2_trend.to_vec(), sigma_two(), B7.iter().map(|r| r.to_vec()).collect()),
        other => return Err(Error::Config(format!("unknown simulation model {other} (expected 1 to 7)"))),
    };
    let (mut configs, variances) = trend_spec(&trend);
    let mut theta_entries = variances;
    if matches!(id, 3 | 4 | 7) {
        configs[0] = configs[0].clone().with_seasonal(4);
        theta_entries.push((ComponentKind::Seasonal, 0, 0.01 * 0.01));
    }
    if matches!(id, 4 | 7) {
        configs[1] = configs[1].clone().with_cycle(cycle.0, cycle.1);
        theta_entries.push((ComponentKind::Cycle, 1, 0.01 * 0.01));
    }
    let m = configs.len();
    let k = b_rows[0].len();
    let spec = ModelSpec::new(configs, vec![k; m]);
    let mut theta = ComponentCovariances::uniform(&spec, 0.0);
    for (kind, i, v) in theta_entries {
        theta.set(kind, i, v);
    }
    let sigma = match correlation {
        Some(rho) => apply_correlation(&sigma, rho)?,
        None => sigma,
    };

    let base: Vec<DVector<f64>> = (1..=k).map(|j| predictor_column(j, n, &mut rng)).collect();
    let beta = DVector::from_iterator(m * k, b_rows.iter().flatten().copied());
    let mut mismatched = InclusionVector::filled(&vec![k; m], false);
    let (gen_blocks, train_block, col_names) = if id == 7 {
        let starred: Vec<DVector<f64>> = [1usize, 4, 7].iter().map(|&j| shuffle_second_half(&base[j], &mut rng)).collect();
        let (x2s, x5s, x8s) = (&starred[0], &starred[1], &starred[2]);
        let mut gen1 = base.clone();
        gen1[7] = x8s.clone();
        let mut gen2 = base.clone();
        gen2[1] = x2s.clone();
        let mut train = base.clone();
        train[1] = x2s.clone();
        train[4] = x5s.clone();
        train[7] = x8s.clone();
        for (i, gen) in [&gen1, &gen2].iter().enumerate() {
            for j in 0..k {
                if gen[j] != train[j] {
                    mismatched.set(i, j, true);
                }
            }
        }
        let mut col_names = names("x", k);
        for j in [1, 4, 7] {
            col_names[j].push('*');
        }
        (
            vec![columns_to_matrix(&gen1), columns_to_matrix(&gen2)],
            columns_to_matrix(&train),
            col_names,
        )
    } else {
        let x = columns_to_matrix(&base);
        (vec![x.clone(); m], x, names("x", k))
    };

    let (y, states, noise) = simulate(&spec, &theta, &gen_blocks, &beta, &sigma, n, &mut rng)?;
    let gamma = InclusionVector::from_flat(&spec.predictor_counts, &beta.iter().map(|&b| b != 0.0).collect::<Vec<_>>());
    Ok(SyntheticDataset {
        y,
        x_blocks: vec![train_block; m],
        predictor_names: vec![col_names; m],
        truth: Truth {
            spec,
            beta,
            sigma_eps: sigma,
            theta,
            gamma,
            mismatched,
            states,
            observation_noise: noise,
        },
        seed,
    })
}

/// Settings for a user-specified process. Predictors are drawn iid N(0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProcess {
    pub spec: ModelSpec,
    /// Coefficients per series; lengths must match the spec's predictor
    /// counts.
    pub coefficients: Vec<Vec<f64>>,
    pub sigma_eps: DMatrix<f64>,
    pub theta: ComponentCovariances,
    #[serde(default)]
    pub correlation: Option<f64>,
}

pub fn generate_custom(process: &CustomProcess, n: usize, seed: u64) -> Result<SyntheticDataset> {
    let spec = &process.spec;
    spec.validate()?;
    let m = spec.m();
    if n < 2 {
        return Err(Error::Config(format!("n = {n}: at least two observations are required")));
    }
    if process.coefficients.len() != m
        || process.coefficients.iter().zip(&spec.predictor_counts).any(|(b, &k)| b.len() != k)
    {
        return Err(Error::Dimension("coefficients do not match the spec's predictor counts".into()));
    }
    if process.sigma_eps.shape() != (m, m) {
        return Err(Error::Dimension(format!("observation covariance must be {m}x{m}")));
    }
    let sigma = match process.correlation {
        Some(rho) => apply_correlation(&process.sigma_eps, rho)?,
        None => {
            cholesky_strict(&process.sigma_eps, "observation covariance")?;
            process.sigma_eps.clone()
        }
    };
    let mut rng = stream_rng(seed, 0);
    let layout = PredictorLayout::new(&spec.predictor_counts);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let x_blocks: Vec<DMatrix<f64>> = (0..m)
        .map(|i| DMatrix::from_fn(n, layout.counts()[i], |_, _| normal.sample(&mut rng)))
        .collect();
    let beta = DVector::from_iterator(layout.total(), process.coefficients.iter().flatten().copied());
    let (y, states, noise) = simulate(spec, &process.theta, &x_blocks, &beta, &sigma, n, &mut rng)?;
    let gamma = InclusionVector::from_flat(&spec.predictor_counts, &beta.iter().map(|&b| b != 0.0).collect::<Vec<_>>());
    Ok(SyntheticDataset {
        y,
        predictor_names: spec.predictor_counts.iter().map(|&k| names("x", k)).collect(),
        x_blocks,
        truth: Truth {
            spec: spec.clone(),
            beta,
            sigma_eps: sigma,
            theta: process.theta.clone(),
            gamma,
            mismatched: InclusionVector::filled(&spec.predictor_counts, false),
            states,
            observation_noise: noise,
        },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_one_zero_coefficients_and_determinism() {
        let a = generate_model(1, 60, 3).unwrap();
        let b = generate_model(1, 60, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.truth.beta[3], 0.0);
        assert_eq!(a.truth.beta[6], 0.0);
        assert_eq!(a.truth.gamma.flat(), vec![true, true, true, false, true, true, false, true]);
        let contribution = RegressionDesign::new(a.x_blocks.clone(), 60).unwrap().contribution(&a.truth.beta);
        let without = RegressionDesign::new(a.x_blocks.clone(), 60)
            .unwrap()
            .contribution(&DVector::from_vec(vec![2.0, -1.0, -0.5, 0.0, -1.5, 4.0, 0.0, 2.5]));
        assert_eq!(contribution, without);
        assert_ne!(generate_model(1, 60, 4).unwrap(), a);
    }

    #[test]
    fn model_five_covariance() {
        let d = generate_model(5, 10, 1).unwrap();
        assert_eq!(d.m(), 3);
        assert_eq!(
            d.truth.sigma_eps,
            DMatrix::from_row_slice(3, 3, &[1.1, 0.7, 0.7, 0.7, 0.9, 0.7, 0.7, 0.7, 1.0])
        );
        assert_eq!(generate_model(6, 10, 1).unwrap().m(), 4);
    }

    #[test]
    fn model_seven_shuffles_second_half_only() {
        let d = generate_model(7, 100, 5).unwrap();
        let x = &d.x_blocks[0];
        assert_eq!(x.ncols(), 8);
        assert_eq!(d.x_blocks[0], d.x_blocks[1]);
        assert_eq!(
            d.truth.mismatched.bits,
            vec![
                vec![false, true, false, false, true, false, false, false],
                vec![false, false, false, false, true, false, false, true],
            ]
        );
        assert_eq!(d.predictor_names[0][4], "x5*");
        assert!(d.truth.spec.series[0].seasonal_period == Some(4));
        assert!(d.truth.spec.series[1].cycle.is_some());
    }

    #[test]
    fn unknown_model_and_bad_correlation() {
        assert!(generate_model(8, 10, 0).is_err());
        assert!(generate_model(1, 1, 0).is_err());
        assert!(generate_model_with(7, 10, 0, Some(1.2)).is_err());
        let d = generate_model_with(7, 10, 0, Some(0.8)).unwrap();
        let expected = 0.8 * (1.1f64 * 0.9).sqrt();
        assert!((d.truth.sigma_eps[(0, 1)] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_state_variances_leave_regression_plus_noise() {
        let spec = ModelSpec::new(vec![ComponentConfig::none(), ComponentConfig::none()], vec![2, 1]);
        let process = CustomProcess {
            theta: ComponentCovariances::uniform(&spec, 0.0),
            spec,
            coefficients: vec![vec![1.0, -2.0], vec![0.5]],
            sigma_eps: DMatrix::identity(2, 2),
            correlation: None,
        };
        let d = generate_custom(&process, 30, 2).unwrap();
        let reg = RegressionDesign::new(d.x_blocks.clone(), 30).unwrap().contribution(&d.truth.beta);
        assert!((&d.y - reg - &d.truth.observation_noise).amax() < 1e-12);
    }
}
