//! Growing-window one-step-ahead evaluation.
//!
//! Each step trains on every row before the held-out one, forecasts that row
//! and records the summed absolute error. The joint model is compared with
//! `m` independent single-series fits of the same engine.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{one_step_error, predict};
use crate::gibbs::{train_from, ChainStart, TrainConfig};
use crate::regression::PriorConfig;
use crate::rng::{mix_seed, stream_rng};
use crate::statespace::ModelSpec;

/// Random stream used for predictive paths; chains use streams `0..chains`.
const PREDICT_STREAM: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Joint,
    Independent,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Joint => "joint",
            Variant::Independent => "independent",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rows in the first training window; `None` means 80% of the data.
    pub initial_train_len: Option<usize>,
    pub horizon_steps: usize,
    pub variants: Vec<Variant>,
    pub train: TrainConfig,
    pub priors: PriorConfig,
    /// Start each refit from the previous fit's last draw.
    pub warm_start: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            initial_train_len: None,
            horizon_steps: 50,
            variants: vec![Variant::Joint, Variant::Independent],
            train: TrainConfig::default(),
            priors: PriorConfig::default(),
            warm_start: false,
        }
    }
}

impl EvalConfig {
    pub fn train_len(&self, n: usize) -> usize {
        self.initial_train_len.unwrap_or(n * 4 / 5)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.train.validate()?;
        let start = self.train_len(n);
        if start == 0 {
            return Err(Error::Config("initial training window is empty".into()));
        }
        if start + self.horizon_steps > n {
            return Err(Error::Config(format!(
                "initial_train_len ({start}) + horizon_steps ({}) exceeds the {n} available rows",
                self.horizon_steps
            )));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no model variants to evaluate".into()));
        }
        Ok(())
    }
}

/// The data visible at one evaluation step.
pub struct Window<'a> {
    pub y: &'a DMatrix<f64>,
    pub x_blocks: &'a [DMatrix<f64>],
    /// Rows `0..train_len` are training data; row `train_len` is held out.
    pub train_len: usize,
    /// 1-based step index.
    pub step: usize,
}

impl Window<'_> {
    pub fn y_train(&self) -> DMatrix<f64> {
        self.y.rows(0, self.train_len).into_owned()
    }

    pub fn x_train(&self) -> Vec<DMatrix<f64>> {
        self.x_blocks.iter().map(|x| x.rows(0, self.train_len).into_owned()).collect()
    }

    /// Predictors of the held-out row.
    pub fn x_next(&self) -> Vec<DMatrix<f64>> {
        self.x_blocks.iter().map(|x| x.rows(self.train_len, 1).into_owned()).collect()
    }

    pub fn actual(&self) -> DVector<f64> {
        self.y.row(self.train_len).transpose()
    }
}

/// Anything that can produce a one-step point forecast for a window.
pub trait Forecaster {
    fn name(&self) -> String;
    fn forecast(&mut self, window: &Window<'_>) -> Result<DVector<f64>>;
}

/// Returns the held-out row itself. Used to check the harness.
pub struct OracleForecaster;

impl Forecaster for OracleForecaster {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn forecast(&mut self, window: &Window<'_>) -> Result<DVector<f64>> {
        Ok(window.actual())
    }
}

/// MBSTS refit at every step; point forecast is the posterior-predictive mean.
pub struct MbstsForecaster {
    spec: ModelSpec,
    variant: Variant,
    train: TrainConfig,
    priors: PriorConfig,
    warm_start: bool,
    /// Last draw of the previous fit, one per independent fit.
    previous: Vec<Option<ChainStart>>,
}

impl MbstsForecaster {
    pub fn new(spec: &ModelSpec, variant: Variant, train: &TrainConfig, priors: &PriorConfig, warm_start: bool) -> Self {
        let fits = match variant {
            Variant::Joint => 1,
            Variant::Independent => spec.m(),
        };
        Self {
            spec: spec.clone(),
            variant,
            train: train.clone(),
            priors: priors.clone(),
            warm_start,
            previous: vec![None; fits],
        }
    }

    fn fit_and_predict(
        &mut self,
        slot: usize,
        spec: &ModelSpec,
        y: &DMatrix<f64>,
        x_train: &[DMatrix<f64>],
        x_next: &[DMatrix<f64>],
        seed: u64,
    ) -> Result<DVector<f64>> {
        let priors = self.priors.elicit(y, &spec.predictor_counts)?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let start = if self.warm_start { self.previous[slot].as_ref() } else { None };
        let draws = train_from(y, x_train, spec, &priors, &cfg, start)?;
        if self.warm_start {
            self.previous[slot] = draws.chains[0].last().map(ChainStart::from);
        }
        let mut rng = stream_rng(seed, PREDICT_STREAM);
        let result = predict(&draws, spec, x_next, 1, &mut rng)?;
        Ok(result.mean.row(0).transpose())
    }
}

impl Forecaster for MbstsForecaster {
    fn name(&self) -> String {
        self.variant.name().into()
    }

    fn forecast(&mut self, window: &Window<'_>) -> Result<DVector<f64>> {
        let step = window.step as u64;
        let y = window.y_train();
        let x_train = window.x_train();
        let x_next = window.x_next();
        match self.variant {
            Variant::Joint => {
                let seed = mix_seed(self.train.seed, &[step, 0]);
                let spec = self.spec.clone();
                self.fit_and_predict(0, &spec, &y, &x_train, &x_next, seed)
            }
            Variant::Independent => {
                let m = self.spec.m();
                let mut out = DVector::zeros(m);
                for i in 0..m {
                    let seed = mix_seed(self.train.seed, &[step, 1 + i as u64]);
                    let spec = self.spec.single_series(i);
                    let yi = y.columns(i, 1).into_owned();
                    out[i] = self.fit_and_predict(
                        i,
                        &spec,
                        &yi,
                        std::slice::from_ref(&x_train[i]),
                        std::slice::from_ref(&x_next[i]),
                        seed,
                    )?[0];
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantTrace {
    pub name: String,
    pub pe: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Point forecast at each step; empty when loaded from CSV.
    pub forecasts: Vec<DVector<f64>>,
    /// Wall-clock seconds per refit; empty when loaded from CSV.
    pub refit_seconds: Vec<f64>,
}

impl VariantTrace {
    fn from_pe(name: String, pe: Vec<f64>) -> Self {
        let cumulative = prefix_sum(&pe);
        Self {
            name,
            pe,
            cumulative,
            forecasts: Vec::new(),
            refit_seconds: Vec::new(),
        }
    }

    pub fn final_cumulative(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub horizon_steps: usize,
    pub variants: Vec<VariantTrace>,
}

impl EvalReport {
    pub fn variant(&self, name: &str) -> Option<&VariantTrace> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Long-format CSV: `step,variant,pe,cumulative_pe`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "variant", "pe", "cumulative_pe"]).map_err(csv_error)?;
        for v in &self.variants {
            for (s, (pe, cum)) in v.pe.iter().zip(&v.cumulative).enumerate() {
                w.write_record([(s + 1).to_string(), v.name.clone(), pe.to_string(), cum.to_string()])
                    .map_err(csv_error)?;
            }
        }
        w.flush().map_err(|e| Error::Config(format!("writing evaluation CSV: {e}")))?;
        Ok(())
    }

    /// Reads the layout written by [`EvalReport::write_csv`]. Rows for extra
    /// variants (externally computed baselines) are accepted as long as each
    /// variant covers steps `1..=h` in order and the cumulative column is the
    /// running sum of `pe`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers().map_err(csv_error)?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("evaluation CSV has no `{name}` column")))
        };
        let (c_step, c_var, c_pe, c_cum) = (col("step")?, col("variant")?, col("pe")?, col("cumulative_pe")?);
        let mut order: Vec<String> = Vec::new();
        let mut rows: HashMap<String, Vec<(usize, f64, f64)>> = HashMap::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let field = |c: usize| record.get(c).unwrap_or("").trim();
            let parse = |c: usize| -> Result<f64> {
                field(c).parse::<f64>().map_err(|_| {
                    Error::Config(format!("row {}: cannot parse `{}` as a number", line + 2, field(c)))
                })
            };
            let step = field(c_step)
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("row {}: bad step `{}`", line + 2, field(c_step))))?;
            let name = field(c_var).to_string();
            if !rows.contains_key(&name) {
                order.push(name.clone());
            }
            rows.entry(name).or_default().push((step, parse(c_pe)?, parse(c_cum)?));
        }
        let mut variants = Vec::new();
        for name in order {
            let r = &rows[&name];
            if r.iter().enumerate().any(|(i, &(s, _, _))| s != i + 1) {
                return Err(Error::Config(format!("variant `{name}` steps are not 1, 2, ... in order")));
            }
            let trace = VariantTrace::from_pe(name.clone(), r.iter().map(|t| t.1).collect());
            for (&(s, _, given), &computed) in r.iter().zip(&trace.cumulative) {
                if (given - computed).abs() > 1e-9 * computed.abs().max(1.0) {
                    return Err(Error::Config(format!(
                        "variant `{name}` step {s}: cumulative_pe {given} is not the running sum {computed}"
                    )));
                }
            }
            variants.push(trace);
        }
        let horizon_steps = variants.first().map_or(0, |v| v.pe.len());
        if let Some(v) = variants.iter().find(|v| v.pe.len() != horizon_steps) {
            return Err(Error::Config(format!(
                "variant `{}` has {} steps, expected {horizon_steps}",
                v.name,
                v.pe.len()
            )));
        }
        Ok(Self { horizon_steps, variants })
    }

    /// Per-step point forecasts: `step,variant,series,forecast`.
    pub fn write_forecasts_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "variant", "series", "forecast"]).map_err(csv_error)?;
        for v in &self.variants {
            for (s, f) in v.forecasts.iter().enumerate() {
                for (i, value) in f.iter().enumerate() {
                    w.write_record([(s + 1).to_string(), v.name.clone(), (i + 1).to_string(), value.to_string()])
                        .map_err(csv_error)?;
                }
            }
        }
        w.flush().map_err(|e| Error::Config(format!("writing forecast CSV: {e}")))?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("CSV: {e}"))
}

fn prefix_sum(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Runs every forecaster over steps `1..=horizon_steps`. Step `s` trains on
/// the first `initial_train_len + s - 1` rows.
pub fn run_forecasters(
    y: &DMatrix<f64>,
    x_blocks: &[DMatrix<f64>],
    initial_train_len: usize,
    horizon_steps: usize,
    forecasters: &mut [Box<dyn Forecaster + '_>],
) -> Result<EvalReport> {
    if initial_train_len + horizon_steps > y.nrows() {
        return Err(Error::Config(format!(
            "initial_train_len ({initial_train_len}) + horizon_steps ({horizon_steps}) exceeds the {} available rows",
            y.nrows()
        )));
    }
    if let Some(x) = x_blocks.iter().find(|x| x.nrows() != y.nrows()) {
        return Err(Error::Dimension(format!("predictor block has {} rows, targets have {}", x.nrows(), y.nrows())));
    }
    let mut variants = Vec::with_capacity(forecasters.len());
    for f in forecasters.iter_mut() {
        let name = f.name();
        let mut pe = Vec::with_capacity(horizon_steps);
        let mut forecasts = Vec::with_capacity(horizon_steps);
        let mut refit_seconds = Vec::with_capacity(horizon_steps);
        for step in 1..=horizon_steps {
            let window = Window {
                y,
                x_blocks,
                train_len: initial_train_len + step - 1,
                step,
            };
            let started = Instant::now();
            let wrap = |e: Error| Error::Evaluation {
                step,
                variant: name.clone(),
                source: Box::new(e),
            };
            let mean = f.forecast(&window).map_err(wrap)?;
            refit_seconds.push(started.elapsed().as_secs_f64());
            pe.push(one_step_error(&window.actual(), &mean).map_err(wrap)?);
            forecasts.push(mean);
        }
        let mut trace = VariantTrace::from_pe(name, pe);
        trace.forecasts = forecasts;
        trace.refit_seconds = refit_seconds;
        variants.push(trace);
    }
    Ok(EvalReport { horizon_steps, variants })
}

/// Growing-window evaluation of the configured MBSTS variants.
pub fn growing_window_eval(
    y: &DMatrix<f64>,
    x_blocks: &[DMatrix<f64>],
    spec: &ModelSpec,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate(y.nrows())?;
    spec.validate()?;
    let mut forecasters: Vec<Box<dyn Forecaster>> = cfg
        .variants
        .iter()
        .map(|&v| Box::new(MbstsForecaster::new(spec, v, &cfg.train, &cfg.priors, cfg.warm_start)) as Box<dyn Forecaster>)
        .collect();
    run_forecasters(y, x_blocks, cfg.train_len(y.nrows()), cfg.horizon_steps, &mut forecasters)
}

/// Cumulative errors of several reports side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub names: Vec<String>,
    /// `cumulative[c][s]`: column `c` after step `s + 1`.
    pub cumulative: Vec<Vec<f64>>,
    pub finals: Vec<f64>,
    /// `(final_c - final_0) / final_0`, relative to the first column.
    pub gaps: Vec<f64>,
}

/// Aligns the variants of all reports into one table. Names that repeat
/// across reports get a `#k` suffix with the report index.
pub fn compare_report(reports: &[EvalReport]) -> Result<Comparison> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    let steps = first.horizon_steps;
    let mut names = Vec::new();
    let mut cumulative = Vec::new();
    for (k, report) in reports.iter().enumerate() {
        if report.horizon_steps != steps {
            return Err(Error::Config(format!(
                "report {} has {} steps, report 1 has {steps}",
                k + 1,
                report.horizon_steps
            )));
        }
        for v in &report.variants {
            let name = if names.contains(&v.name) { format!("{}#{}", v.name, k + 1) } else { v.name.clone() };
            names.push(name);
            cumulative.push(v.cumulative.clone());
        }
    }
    let finals: Vec<f64> = cumulative.iter().map(|c| c.last().copied().unwrap_or(0.0)).collect();
    let base = finals.first().copied().unwrap_or(0.0);
    let gaps = finals
        .iter()
        .map(|&f| {
            if f == base {
                0.0
            } else {
                (f - base) / base
            }
        })
        .collect();
    Ok(Comparison {
        names,
        cumulative,
        finals,
        gaps,
    })
}

impl Comparison {
    /// Wide table: `step,<name>...` with one row per step.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(csv_error)?;
        let steps = self.cumulative.first().map_or(0, Vec::len);
        for s in 0..steps {
            let mut row = vec![(s + 1).to_string()];
            row.extend(self.cumulative.iter().map(|c| c[s].to_string()));
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing comparison CSV: {e}")))?;
        Ok(())
    }

    /// `variant,final_cumulative_pe,relative_gap`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variant", "final_cumulative_pe", "relative_gap"]).map_err(csv_error)?;
        for ((name, f), g) in self.names.iter().zip(&self.finals).zip(&self.gaps) {
            w.write_record([name.clone(), f.to_string(), g.to_string()]).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Config(format!("writing comparison CSV: {e}")))?;
        Ok(())
    }
}
