//! Brute-force reference computations shared by the integration tests and
//! the acceptance suite. Everything here builds dense joint distributions
//! directly and never calls the engine's recursions.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use mbsts_core::statespace::StateSpaceSystem;

/// Joint Gaussian of the stacked states `(α_1..α_n)` and observations
/// `(y_1..y_n)`, both time-major.
pub struct JointGaussian {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub mean_alpha: DVector<f64>,
    pub cov_alpha: DMatrix<f64>,
    pub mean_y: DVector<f64>,
    pub cov_y: DMatrix<f64>,
    /// Cov(α, y).
    pub cross: DMatrix<f64>,
}

pub fn joint_gaussian(ss: &StateSpaceSystem, sigma_eps: &DMatrix<f64>, n: usize) -> JointGaussian {
    let d = ss.t.nrows();
    let m = ss.z.ncols();
    let rqr = &ss.r * &ss.q * ss.r.transpose();

    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    let mut mu = ss.initial_mean.clone();
    let mut v = ss.initial_cov.clone();
    for _ in 0..n {
        means.push(mu.clone());
        vars.push(v.clone());
        mu = &ss.t * &mu + &ss.intercept;
        v = &ss.t * &v * ss.t.transpose() + &rqr;
    }

    let mut cov_alpha = DMatrix::zeros(n * d, n * d);
    for s in 0..n {
        // Cov(α_t, α_s) = T^(t-s) V_s for t >= s
        let mut block = vars[s].clone();
        for t in s..n {
            cov_alpha.view_mut((t * d, s * d), (d, d)).copy_from(&block);
            cov_alpha.view_mut((s * d, t * d), (d, d)).copy_from(&block.transpose());
            block = &ss.t * block;
        }
    }
    let mut zb = DMatrix::zeros(n * m, n * d);
    let mut noise = DMatrix::zeros(n * m, n * m);
    for t in 0..n {
        zb.view_mut((t * m, t * d), (m, d)).copy_from(&ss.z.transpose());
        noise.view_mut((t * m, t * m), (m, m)).copy_from(sigma_eps);
    }
    let mean_alpha = DVector::from_iterator(n * d, means.iter().flat_map(|a| a.iter().copied()));
    let mean_y = &zb * &mean_alpha;
    let cross = &cov_alpha * zb.transpose();
    let cov_y = &zb * &cross + noise;
    JointGaussian {
        n,
        d,
        m,
        mean_alpha,
        cov_alpha,
        mean_y,
        cov_y,
        cross,
    }
}

pub fn stack_time_major(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(y.len(), (0..y.nrows()).flat_map(|t| (0..y.ncols()).map(move |i| y[(t, i)])))
}

/// `log N(x; mean, cov)` through an LU-free Cholesky.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let diff = x - mean;
    let w = chol.l().solve_lower_triangular(&diff).unwrap();
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + w.norm_squared())
}

pub fn brute_log_likelihood(ss: &StateSpaceSystem, sigma_eps: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let j = joint_gaussian(ss, sigma_eps, y.nrows());
    mvn_log_density(&stack_time_major(y), &j.mean_y, &j.cov_y)
}

/// `E[α_t | y]` and `Var[α_t | y]` by Gaussian conditioning.
pub fn brute_smoother(
    ss: &StateSpaceSystem,
    sigma_eps: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let j = joint_gaussian(ss, sigma_eps, y.nrows());
    let chol = j.cov_y.clone().cholesky().expect("positive definite observation covariance");
    let mean = &j.mean_alpha + &j.cross * chol.solve(&(stack_time_major(y) - &j.mean_y));
    let cov = &j.cov_alpha - &j.cross * chol.solve(&j.cross.transpose());
    let d = j.d;
    let means = (0..j.n).map(|t| mean.rows(t * d, d).into_owned()).collect();
    let covs = (0..j.n).map(|t| cov.view((t * d, t * d), (d, d)).into_owned()).collect();
    (means, covs)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Largest entrywise error relative to the largest magnitude in `b`
/// (floored at 1).
pub fn max_rel_err_vec(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let scale = b.iter().flat_map(|v| v.iter()).fold(1.0f64, |s, v| s.max(v.abs()));
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
        / scale
}

/// Exact `p(γ | Y★, Σ)` over every indicator configuration, from the
/// marginal `vec(Y★) ~ N(X_γ b_γ, Σ ⊗ I + X_γ A_γ⁻¹ X_γᵀ)` with the slab
/// precision `A_γ = κ/n · blockdiag_i(X_iγᵀ X_iγ)`. Configurations are
/// indexed by the bits of their flat indicator vector (bit k = predictor k).
pub fn exact_inclusion_posterior(
    y_star: &DMatrix<f64>,
    x_blocks: &[DMatrix<f64>],
    sigma_eps: &DMatrix<f64>,
    inclusion: &[Vec<f64>],
    prior_mean: &DVector<f64>,
    kappa: f64,
) -> Vec<f64> {
    let n = y_star.nrows();
    let m = y_star.ncols();
    let counts: Vec<usize> = x_blocks.iter().map(|x| x.ncols()).collect();
    let k_total: usize = counts.iter().sum();
    let owner: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &k)| (0..k).map(move |j| (i, j)))
        .collect();
    let pis: Vec<f64> = inclusion.iter().flatten().copied().collect();

    // series-major stacking
    let y = DVector::from_iterator(n * m, (0..m).flat_map(|i| (0..n).map(move |t| y_star[(t, i)])));
    let mut omega = DMatrix::zeros(n * m, n * m);
    for a in 0..m {
        for b in 0..m {
            for t in 0..n {
                omega[(a * n + t, b * n + t)] = sigma_eps[(a, b)];
            }
        }
    }

    let mut log_post = Vec::with_capacity(1 << k_total);
    for mask in 0usize..(1 << k_total) {
        let sel: Vec<usize> = (0..k_total).filter(|k| mask >> k & 1 == 1).collect();
        let mut lp = 0.0;
        for (k, &pi) in pis.iter().enumerate() {
            lp += if mask >> k & 1 == 1 { pi.ln() } else { (1.0 - pi).ln() };
        }
        if lp == f64::NEG_INFINITY {
            log_post.push(lp);
            continue;
        }
        let s = sel.len();
        let mut xg = DMatrix::zeros(n * m, s);
        for (c, &k) in sel.iter().enumerate() {
            let (i, j) = owner[k];
            for t in 0..n {
                xg[(i * n + t, c)] = x_blocks[i][(t, j)];
            }
        }
        let mut a = DMatrix::zeros(s, s);
        for p in 0..s {
            for q in 0..s {
                if owner[sel[p]].0 == owner[sel[q]].0 {
                    a[(p, q)] = kappa / n as f64 * xg.column(p).dot(&xg.column(q));
                }
            }
        }
        let b = DVector::from_iterator(s, sel.iter().map(|&k| prior_mean[k]));
        let cov = if s == 0 {
            omega.clone()
        } else {
            let a_inv = a.try_inverse().expect("slab precision is invertible for the toy data");
            &omega + &xg * a_inv * xg.transpose()
        };
        let mean = &xg * b;
        lp += mvn_log_density(&y, &mean, &cov);
        log_post.push(lp);
    }
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Bit index of a flat indicator vector.
pub fn mask_of(flags: &[bool]) -> usize {
    flags.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| 1 << k).sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Inverse-gamma `(shape, scale)` mean and variance.
pub fn inverse_gamma_moments(shape: f64, scale: f64) -> (f64, f64) {
    let mean = scale / (shape - 1.0);
    (mean, mean * mean / (shape - 2.0))
}

/// Entrywise mean and variance of `IW(df, scale)` with `p × p` scale.
pub fn inverse_wishart_moments(df: f64, scale: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = scale.nrows() as f64;
    let mean = scale / (df - p - 1.0);
    let var = DMatrix::from_fn(scale.nrows(), scale.ncols(), |i, j| {
        ((df - p + 1.0) * scale[(i, j)].powi(2) + (df - p - 1.0) * scale[(i, i)] * scale[(j, j)])
            / ((df - p) * (df - p - 1.0).powi(2) * (df - p - 3.0))
    });
    (mean, var)
}

/// Running first and second moments of vector samples.
pub struct Moments {
    count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    samples: Vec<DVector<f64>>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(dim),
            outer: DMatrix::zeros(dim, dim),
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        self.sum += x;
        self.outer += x * x.transpose();
        self.samples.push(x.clone());
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count as f64
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let mu = self.mean();
        (&self.outer - &mu * mu.transpose() * self.count as f64) / (self.count - 1) as f64
    }

    /// Monte-Carlo standard error of each sample-covariance entry, from the
    /// spread of the centered products.
    pub fn cov_standard_errors(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let c = self.cov();
        let dim = mu.len();
        let mut acc = DMatrix::<f64>::zeros(dim, dim);
        for x in &self.samples {
            let dx = x - &mu;
            for i in 0..dim {
                for j in 0..dim {
                    acc[(i, j)] += (dx[i] * dx[j] - c[(i, j)]).powi(2);
                }
            }
        }
        acc.map(|v| (v / (self.count - 1) as f64 / self.count as f64).sqrt())
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Standard error of a mean from an autocorrelated series, by batch means.
pub fn batch_mean_se(series: &[f64], batches: usize) -> f64 {
    let size = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

pub fn iid_se(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

pub fn mean(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

/// A random time-invariant system, observation covariance and data set.
/// Even seeds build structured component systems; odd seeds use dense random
/// matrices (stable transition, arbitrary loadings and noise).
pub fn random_system(seed: u64) -> (StateSpaceSystem, DMatrix<f64>, DMatrix<f64>) {
    use mbsts_core::statespace::{
        build_state_space, ComponentConfig, ComponentCovariances, InitialStatePrior, ModelSpec, SeriesLayout,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let spd = |rng: &mut ChaCha8Rng, k: usize, normal: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let a = DMatrix::from_fn(k, k, |_, _| normal(rng));
        a.transpose() * a / k as f64 + DMatrix::identity(k, k) * 0.2
    };
    let m = rng.random_range(1..=3usize);
    let n = rng.random_range(2..=8usize);

    let ss = if seed % 2 == 0 {
        let mut series = Vec::new();
        let mut d = 0;
        for _ in 0..m {
            let budget = 6 - d - (m - series.len() - 1);
            let mut c = ComponentConfig::level();
            let mut dim = 1;
            if budget >= 2 && rng.random_bool(0.5) {
                c = ComponentConfig::local_linear_trend(rng.random_range(0.2..1.0), rng.random_range(-0.5..0.5));
                dim = 2;
            }
            if budget >= dim + 2 && rng.random_bool(0.4) {
                c = c.with_cycle(rng.random_range(0.2..3.0), rng.random_range(0.3..0.95));
                dim += 2;
            } else if budget >= dim + 2 && rng.random_bool(0.5) {
                let period = rng.random_range(3..=(budget - dim + 1).min(4));
                c = c.with_seasonal(period);
                dim += period - 1;
            }
            d += dim;
            series.push(c);
        }
        let spec = ModelSpec {
            series,
            predictor_counts: vec![0; m],
            initial_state: InitialStatePrior {
                mean: rng.random_range(-1.0..1.0),
                variance: rng.random_range(0.5..3.0),
            },
        };
        let theta = ComponentCovariances::from_fn(&spec, |_, _| rng.random_range(0.05..1.5));
        build_state_space(&spec, &theta).unwrap()
    } else {
        let d = rng.random_range(1..=6usize);
        let mut t = DMatrix::from_fn(d, d, |_, _| normal(&mut rng));
        let radius = t.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        t *= rng.random_range(0.5..1.05) / radius.max(1e-9);
        let q = spd(&mut rng, d, &mut normal);
        let initial_cov = spd(&mut rng, d, &mut normal);
        StateSpaceSystem {
            z: DMatrix::from_fn(d, m, |_, _| normal(&mut rng)),
            t,
            r: DMatrix::identity(d, d),
            state_noise_cov: q.clone(),
            q,
            intercept: DVector::from_fn(d, |_, _| normal(&mut rng) * 0.3),
            initial_mean: DVector::from_fn(d, |_, _| normal(&mut rng)),
            initial_cov,
            disturbance_slots: Vec::new(),
            layout: vec![SeriesLayout::default(); m],
        }
    };
    let sigma = spd(&mut rng, m, &mut normal);
    let y = DMatrix::from_fn(n, m, |_, _| 2.0 * normal(&mut rng));
    (ss, sigma, y)
}
