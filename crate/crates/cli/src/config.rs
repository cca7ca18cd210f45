//! Run configuration: one TOML file, overridden by command-line flags.
//!
//! Relative paths in a file are taken relative to that file; relative paths
//! from flags are taken relative to the working directory. Both are made
//! absolute before anything runs, so a recorded config can be replayed from
//! anywhere.

use std::path::{Path, PathBuf};

use mbsts_core::bench::{EvalConfig, Variant};
use mbsts_core::regression::PriorConfig;
use mbsts_core::statespace::{ComponentConfig, InitialStatePrior, ModelSpec};
use mbsts_core::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::panel::{PanelSchema, PredictorSource};

const STAGE: &str = "config";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of the run derives from it.
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub priors: PriorConfig,
    pub train: TrainSection,
    pub forecast: ForecastSection,
    pub eval: EvalSection,
    pub simulate: SimulateSection,
    pub targets: TargetsSection,
    pub report: ReportSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub targets: Option<PathBuf>,
    pub target_columns: Option<Vec<String>>,
    pub predictors: Vec<PredictorSource>,
    /// Train on the first `rows` rows only (after lag alignment).
    pub rows: Option<usize>,
}

impl DataSection {
    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            targets: self.targets.clone(),
            target_columns: self.target_columns.clone(),
            predictors: self.predictors.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Components per target series; a local level for every series when empty.
    pub series: Vec<ComponentConfig>,
    pub initial_state: InitialStatePrior,
}

impl ModelSection {
    pub fn spec(&self, predictor_counts: &[usize]) -> Result<ModelSpec> {
        let m = predictor_counts.len();
        let series = if self.series.is_empty() {
            vec![ComponentConfig::level(); m]
        } else if self.series.len() == m {
            self.series.clone()
        } else {
            return Err(CliError::config(
                STAGE,
                format!("model lists {} series but the data has {m}", self.series.len()),
            ));
        };
        let spec = ModelSpec {
            series,
            predictor_counts: predictor_counts.to_vec(),
            initial_state: self.initial_state,
        };
        spec.validate().map_err(|e| CliError::config(STAGE, e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub total_draws: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub store_state_paths: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            total_draws: t.total_draws,
            burn_in: t.burn_in,
            chains: t.chains,
            store_state_paths: t.store_state_paths,
        }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            total_draws: self.total_draws,
            burn_in: self.burn_in,
            seed,
            chains: self.chains,
            store_state_paths: self.store_state_paths,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub horizon: usize,
    /// Central band levels written next to the mean.
    pub levels: Vec<f64>,
    /// Draw store to forecast from; `<output>/draws` of a train run.
    pub draws: Option<PathBuf>,
    /// Also write every predictive path.
    pub samples: bool,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            horizon: 1,
            levels: vec![0.9],
            draws: None,
            samples: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// 80% of the rows when absent.
    pub initial_train_len: Option<usize>,
    pub horizon_steps: usize,
    pub variants: Vec<Variant>,
    pub warm_start: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            initial_train_len: e.initial_train_len,
            horizon_steps: e.horizon_steps,
            variants: e.variants,
            warm_start: e.warm_start,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Generator 1 to 7.
    pub model: u8,
    pub n: usize,
    /// Overrides the error correlation between the two series.
    pub correlation: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            model: 1,
            n: 500,
            correlation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsSection {
    /// One price file per ticker.
    pub prices: Vec<PathBuf>,
    /// Look-ahead window in days.
    pub k: usize,
}

impl Default for TargetsSection {
    fn default() -> Self {
        Self { prices: Vec::new(), k: 5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Evaluation CSVs to put side by side.
    pub inputs: Vec<PathBuf>,
}

fn absolute(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
    if let Ok(abs) = std::path::absolute(&*p) {
        *p = abs;
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config(STAGE, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(STAGE, path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config { message, .. } => CliError::config(STAGE, format!("{}: {message}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    /// Makes every path absolute, resolving relative ones against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let mut fix = |p: &mut PathBuf| absolute(base, p);
        if let Some(p) = self.output.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.targets.as_mut() {
            fix(p);
        }
        for src in &mut self.data.predictors {
            if let Some(p) = src.path.as_mut() {
                fix(p);
            }
        }
        if let Some(p) = self.forecast.draws.as_mut() {
            fix(p);
        }
        self.targets.prices.iter_mut().for_each(&mut fix);
        self.report.inputs.iter_mut().for_each(&mut fix);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::config(STAGE, e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut inputs = self.clone();
        inputs.output = None;
        let json = serde_json::to_string(&inputs).unwrap_or_default();
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            initial_train_len: self.eval.initial_train_len,
            horizon_steps: self.eval.horizon_steps,
            variants: self.eval.variants.clone(),
            train: self.train.with_seed(self.seed),
            priors: self.priors.clone(),
            warm_start: self.eval.warm_start,
        }
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::config(STAGE, "no output directory (set `output` or pass --out)"))
    }
}
