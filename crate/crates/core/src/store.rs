//! On-disk posterior draws.
//!
//! A store is a directory with one flat CSV per parameter group plus
//! `manifest.json`. Every CSV starts with `chain,draw` columns; values use
//! shortest round-trip formatting so reading a store back is exact.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{Draw, PosteriorDraws};
use crate::regression::{InclusionVector, SweepStats};
use crate::statespace::{ComponentCovariances, ComponentKind, ModelSpec};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

const THETA: &str = "theta.csv";
const GAMMA: &str = "gamma.csv";
const BETA: &str = "beta.csv";
const SIGMA: &str = "sigma_eps.csv";
const FINAL_STATE: &str = "final_state.csv";
const STATS: &str = "stats.csv";
const STATE_PATHS: &str = "state_paths.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub state_dim: usize,
    pub predictors: usize,
    pub chains: usize,
    pub draws_per_chain: Vec<usize>,
    pub state_paths: bool,
    /// Hash of the run configuration that produced the draws, if known.
    pub config_hash: Option<String>,
    pub files: Vec<String>,
}

fn theta_columns(spec: &ModelSpec) -> Vec<(ComponentKind, usize)> {
    ComponentKind::ALL
        .into_iter()
        .flat_map(|kind| {
            spec.series
                .iter()
                .enumerate()
                .filter(move |(_, c)| c.has(kind))
                .map(move |(i, _)| (kind, i))
        })
        .collect()
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(dir: &Path, name: &str, columns: impl IntoIterator<Item = String>) -> Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let writer = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(columns);
        let mut t = Self { path, writer };
        t.writer.write_record(&header).map_err(|e| store_error(&t.path, e))?;
        Ok(t)
    }

    fn row(&mut self, chain: usize, draw: usize, values: impl IntoIterator<Item = String>) -> Result<()> {
        let mut record = vec![chain.to_string(), draw.to_string()];
        record.extend(values);
        self.writer.write_record(&record).map_err(|e| store_error(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn store_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Store {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

fn floats<'a>(v: impl IntoIterator<Item = &'a f64>) -> Vec<String> {
    v.into_iter().map(f64::to_string).collect()
}

fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Writes `draws` into `dir`, creating it if needed.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws, config_hash: Option<&str>) -> Result<StoreManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec = &draws.spec;
    let m = spec.m();
    let d = spec.state_dim();
    let k = spec.total_predictors();
    let theta_cols = theta_columns(spec);
    let state_paths = draws.chains.iter().flatten().next().is_some_and(|dr| dr.state_path.is_some());

    let mut theta = Table::create(
        dir,
        THETA,
        theta_cols.iter().map(|(kind, i)| format!("{}_{}", kind.name(), i + 1)),
    )?;
    let mut gamma = Table::create(dir, GAMMA, numbered("gamma_", k))?;
    let mut beta = Table::create(dir, BETA, numbered("beta_", k))?;
    let mut sigma = Table::create(
        dir,
        SIGMA,
        (0..m).flat_map(|r| (0..m).map(move |c| format!("sigma_{}_{}", r + 1, c + 1))),
    )?;
    let mut final_state = Table::create(dir, FINAL_STATE, numbered("state_", d))?;
    let mut stats = Table::create(dir, STATS, ["visited".to_string(), "flips".to_string()])?;
    let mut paths = if state_paths {
        let mut cols = vec!["t".to_string()];
        cols.extend(numbered("state_", d));
        Some(Table::create(dir, STATE_PATHS, cols)?)
    } else {
        None
    };

    for (c, chain) in draws.chains.iter().enumerate() {
        for (j, dr) in chain.iter().enumerate() {
            theta.row(
                c,
                j,
                theta_cols.iter().map(|&(kind, i)| dr.theta.get(kind, i).unwrap_or(f64::NAN).to_string()),
            )?;
            gamma.row(c, j, dr.gamma.flat().into_iter().map(|b| u8::from(b).to_string()))?;
            beta.row(c, j, floats(dr.beta.iter()))?;
            // row-major
            sigma.row(c, j, floats(dr.sigma_eps.transpose().iter()))?;
            final_state.row(c, j, floats(dr.final_state.iter()))?;
            stats.row(c, j, [dr.sweep.visited.to_string(), dr.sweep.flips.to_string()])?;
            if let Some(t) = paths.as_mut() {
                let path = dr.state_path.as_ref().ok_or_else(|| Error::Store {
                    path: dir.to_path_buf(),
                    reason: format!("chain {c} draw {j} has no state path while others do"),
                })?;
                for (time, a) in path.iter().enumerate() {
                    let mut row = vec![(time + 1).to_string()];
                    row.extend(floats(a.iter()));
                    t.row(c, j, row)?;
                }
            }
        }
    }
    let mut files = vec![THETA, GAMMA, BETA, SIGMA, FINAL_STATE, STATS];
    theta.finish()?;
    gamma.finish()?;
    beta.finish()?;
    sigma.finish()?;
    final_state.finish()?;
    stats.finish()?;
    if let Some(t) = paths {
        t.finish()?;
        files.push(STATE_PATHS);
    }

    let manifest = StoreManifest {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        seed: draws.seed,
        n: draws.n,
        m,
        state_dim: d,
        predictors: k,
        chains: draws.chains.len(),
        draws_per_chain: draws.chains.iter().map(Vec::len).collect(),
        state_paths,
        config_hash: config_hash.map(str::to_string),
        files: files.into_iter().map(str::to_string).collect(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Store {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<StoreManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: StoreManifest = serde_json::from_str(&text).map_err(|e| Error::Store {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Store {
            path,
            reason: format!("unsupported format version {}", manifest.format_version),
        });
    }
    manifest.spec.validate()?;
    Ok(manifest)
}

/// Rows of one table as `(chain, draw, values)`.
fn read_table(dir: &Path, name: &str, width: usize) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let path = dir.join(name);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let bad = |reason: String| Error::Store {
        path: path.clone(),
        reason,
    };
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| store_error(&path, e))?;
        if record.len() != width + 2 {
            return Err(bad(format!("row {} has {} fields, expected {}", line + 2, record.len(), width + 2)));
        }
        let index = |i: usize| {
            record[i]
                .parse::<usize>()
                .map_err(|_| bad(format!("row {}: bad index `{}`", line + 2, &record[i])))
        };
        let values = record
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("row {}: bad number `{s}`", line + 2))))
            .collect::<Result<Vec<_>>>()?;
        out.push((index(0)?, index(1)?, values));
    }
    Ok(out)
}

/// One row per draw, checked against the manifest's chain layout.
fn per_draw(dir: &Path, name: &str, width: usize, manifest: &StoreManifest) -> Result<Vec<Vec<f64>>> {
    let rows = read_table(dir, name, width)?;
    let expected = manifest.draws_per_chain.iter().flat_map(|&len| 0..len).zip(
        manifest
            .draws_per_chain
            .iter()
            .enumerate()
            .flat_map(|(c, &len)| std::iter::repeat_n(c, len)),
    );
    let total: usize = manifest.draws_per_chain.iter().sum();
    if rows.len() != total {
        return Err(Error::Store {
            path: dir.join(name),
            reason: format!("{} rows, manifest lists {total} draws", rows.len()),
        });
    }
    rows.into_iter()
        .zip(expected)
        .map(|((c, j, values), (ej, ec))| {
            if (c, j) != (ec, ej) {
                return Err(Error::Store {
                    path: dir.join(name),
                    reason: format!("expected chain {ec} draw {ej}, found chain {c} draw {j}"),
                });
            }
            Ok(values)
        })
        .collect()
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws> {
    let manifest = read_manifest(dir)?;
    let spec = &manifest.spec;
    let (m, d, k) = (spec.m(), spec.state_dim(), spec.total_predictors());
    if (manifest.m, manifest.state_dim, manifest.predictors) != (m, d, k) {
        return Err(Error::Store {
            path: dir.join(MANIFEST),
            reason: "recorded dimensions disagree with the model specification".into(),
        });
    }
    if manifest.chains != manifest.draws_per_chain.len() {
        return Err(Error::Store {
            path: dir.join(MANIFEST),
            reason: "chain count disagrees with draws_per_chain".into(),
        });
    }
    let theta_cols = theta_columns(spec);
    let theta = per_draw(dir, THETA, theta_cols.len(), &manifest)?;
    let gamma = per_draw(dir, GAMMA, k, &manifest)?;
    let beta = per_draw(dir, BETA, k, &manifest)?;
    let sigma = per_draw(dir, SIGMA, m * m, &manifest)?;
    let final_state = per_draw(dir, FINAL_STATE, d, &manifest)?;
    let stats = per_draw(dir, STATS, 2, &manifest)?;
    let mut paths: Option<Vec<Vec<DVector<f64>>>> = if manifest.state_paths {
        let rows = read_table(dir, STATE_PATHS, d + 1)?;
        let total: usize = manifest.draws_per_chain.iter().sum();
        if rows.len() != total * manifest.n {
            return Err(Error::Store {
                path: dir.join(STATE_PATHS),
                reason: format!("{} rows, expected {}", rows.len(), total * manifest.n),
            });
        }
        let per = manifest.n.max(1);
        Some(
            rows.chunks(per)
                .map(|chunk| chunk.iter().map(|(_, _, v)| DVector::from_column_slice(&v[1..])).collect())
                .collect(),
        )
    } else {
        None
    };

    let counts = &spec.predictor_counts;
    let mut index = 0;
    let mut chains = Vec::with_capacity(manifest.chains);
    for &len in &manifest.draws_per_chain {
        let mut chain = Vec::with_capacity(len);
        for _ in 0..len {
            let mut cov = ComponentCovariances::uniform(spec, 0.0);
            for (&(kind, i), &v) in theta_cols.iter().zip(&theta[index]) {
                cov.set(kind, i, v);
            }
            let flags: Vec<bool> = gamma[index].iter().map(|&g| g != 0.0).collect();
            chain.push(Draw {
                theta: cov,
                gamma: InclusionVector::from_flat(counts, &flags),
                beta: DVector::from_vec(beta[index].clone()),
                sigma_eps: DMatrix::from_row_slice(m, m, &sigma[index]),
                final_state: DVector::from_vec(final_state[index].clone()),
                state_path: paths.as_mut().map(|p| std::mem::take(&mut p[index])),
                sweep: SweepStats {
                    visited: stats[index][0] as usize,
                    flips: stats[index][1] as usize,
                },
            });
            index += 1;
        }
        chains.push(chain);
    }
    Ok(PosteriorDraws {
        spec: spec.clone(),
        seed: manifest.seed,
        n: manifest.n,
        chains,
    })
}
