//! Command dispatch. Each command checks its inputs completely before the
//! output directory is touched, then writes its artifacts and a run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mbsts_core::bench::{compare_report, growing_window_eval, EvalReport};
use mbsts_core::forecast::{predict, summarize};
use mbsts_core::rng::{mix_seed, stream_rng};
use mbsts_core::simgen::generate_model_with;
use mbsts_core::store::{read_draws, read_manifest, write_draws};
use mbsts_core::train;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result, Stage};
use crate::panel::{load_csv_panel, write_table, Panel, PredictorSource};
use crate::prices::{load_prices, max_log_return, Targets};

pub const MANIFEST: &str = "manifest.json";

/// Label mixed into the master seed for forecast paths.
const FORECAST_STREAM: u64 = 0x666f_7265;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Train,
    Forecast,
    Evaluate,
    Report,
    BuildTargets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub version: String,
    pub engine_version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Fully resolved configuration; replaying it reproduces the outputs.
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
    /// Seconds per refit for each evaluated variant.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub refit_seconds: BTreeMap<String, Vec<f64>>,
}

/// What a command produced, before the manifest is written.
#[derive(Default)]
struct Outcome {
    outputs: Vec<String>,
    notes: Vec<String>,
    refit_seconds: BTreeMap<String, Vec<f64>>,
}

fn create_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io("write output", dir, e))
}

fn check_output(dir: &Path) -> Result<()> {
    let mut probe = Some(dir);
    while let Some(p) = probe {
        if p.exists() {
            if !p.is_dir() {
                return Err(CliError::config("config", format!("{} is not a directory", p.display())));
            }
            if fs::metadata(p).is_ok_and(|m| m.permissions().readonly()) {
                return Err(CliError::config("config", format!("{} is not writable", p.display())));
            }
            return Ok(());
        }
        probe = p.parent();
    }
    Ok(())
}

fn check_inputs_exist(paths: &[&Path]) -> Result<()> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(CliError::config("config", format!("input {} does not exist", p.display()))),
        None => Ok(()),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| CliError::io("write output", path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io("write output", path, source),
        other => CliError::config("write output", format!("{}: {other:?}", path.display())),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::config("write output", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io("write output", path, e))
}

fn create_in<T>(
    dir: &Path,
    name: &str,
    outcome: &mut Outcome,
    write: impl FnOnce(&Path) -> Result<T>,
) -> Result<T> {
    let path = dir.join(name);
    let value = write(&path)?;
    outcome.outputs.push(name.to_string());
    Ok(value)
}

fn level_label(level: f64) -> String {
    format!("{}", level * 100.0)
}

/// Loads the configured panel and applies the `rows` limit.
fn load_data(cfg: &RunConfig) -> Result<Panel> {
    let mut inputs: Vec<&Path> = cfg.data.targets.iter().map(PathBuf::as_path).collect();
    inputs.extend(cfg.data.predictors.iter().filter_map(|p| p.path.as_deref()));
    check_inputs_exist(&inputs)?;
    let panel = load_csv_panel(&cfg.data.schema())?;
    match cfg.data.rows {
        Some(r) if r == 0 || r > panel.n() => Err(CliError::config(
            "load data",
            format!("rows = {r} but the panel has {} usable rows", panel.n()),
        )),
        Some(r) => Ok(panel.head(r)),
        None => Ok(panel),
    }
}

fn lag_note(panel: &Panel) -> Vec<String> {
    if panel.dropped_for_lags > 0 {
        vec![format!("{} leading rows dropped to align lagged predictors", panel.dropped_for_lags)]
    } else {
        Vec::new()
    }
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let s = &cfg.simulate;
    let data = generate_model_with(s.model, s.n, cfg.seed, s.correlation).map_err(|e| CliError::config("simulate", e.to_string()))?;
    check_output(out)?;
    create_output(out)?;
    let mut outcome = Outcome::default();
    let dates: Vec<String> = (1..=data.n()).map(|t| t.to_string()).collect();
    let names: Vec<String> = (1..=data.m()).map(|i| format!("y_{i}")).collect();
    create_in(out, "targets.csv", &mut outcome, |p| write_table(p, &dates, &names, &data.y))?;
    let mut predictors = Vec::new();
    for (i, (x, xn)) in data.x_blocks.iter().zip(&data.predictor_names).enumerate() {
        let name = format!("predictors_{}.csv", i + 1);
        create_in(out, &name, &mut outcome, |p| write_table(p, &dates, xn, x))?;
        predictors.push(PredictorSource {
            path: Some(name.into()),
            ..PredictorSource::default()
        });
    }
    create_in(out, "truth.json", &mut outcome, |p| write_json(p, &data.truth))?;

    // ready-to-run training config for the generated files
    let mut train_cfg = RunConfig {
        seed: cfg.seed,
        ..RunConfig::default()
    };
    train_cfg.data.targets = Some("targets.csv".into());
    train_cfg.data.predictors = predictors;
    train_cfg.model.series = data.truth.spec.series.clone();
    train_cfg.model.initial_state = data.truth.spec.initial_state;
    let text = train_cfg.to_toml()?;
    create_in(out, "train.toml", &mut outcome, |p| {
        fs::write(p, text).map_err(|e| CliError::io("write output", p, e))
    })?;
    Ok(outcome)
}

fn train_command(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let panel = load_data(cfg)?;
    let spec = cfg.model.spec(&panel.predictor_counts())?;
    let train_cfg = cfg.train.with_seed(cfg.seed);
    train_cfg.validate().stage("config")?;
    let priors = cfg.priors.elicit(&panel.y, &spec.predictor_counts).stage("priors")?;
    check_output(out)?;

    let draws = train(&panel.y, &panel.x_blocks, &spec, &priors, &train_cfg).stage("train")?;
    create_output(out)?;
    let mut outcome = Outcome {
        notes: lag_note(&panel),
        ..Outcome::default()
    };
    let hash = cfg.hash();
    create_in(out, "draws", &mut outcome, |p| write_draws(p, &draws, Some(&hash)).stage("write draws"))?;
    create_in(out, "priors.json", &mut outcome, |p| write_json(p, &priors))?;

    let freq = draws.inclusion_frequencies();
    let beta = draws.beta_mean();
    create_in(out, "inclusion.csv", &mut outcome, |p| {
        let err = csv_err(p);
        let mut w = csv_writer(p)?;
        w.write_record(["series", "predictor", "inclusion_probability", "coefficient_mean"]).map_err(&err)?;
        let mut flat = 0;
        for (i, names) in panel.predictor_names.iter().enumerate() {
            for (j, name) in names.iter().enumerate() {
                w.write_record([
                    panel.target_names[i].clone(),
                    name.clone(),
                    freq[i][j].to_string(),
                    beta[flat].to_string(),
                ])
                .map_err(&err)?;
                flat += 1;
            }
        }
        w.flush().map_err(|e| CliError::io("write output", p, e))
    })?;
    Ok(outcome)
}

fn forecast_command(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let f = &cfg.forecast;
    let store = f
        .draws
        .as_deref()
        .ok_or_else(|| CliError::config("config", "no draw store given (set forecast.draws or pass --store)"))?;
    if f.horizon == 0 {
        return Err(CliError::config("config", "forecast horizon must be at least 1"));
    }
    if let Some(l) = f.levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(CliError::config("config", format!("band level {l} outside [0, 1]")));
    }
    check_inputs_exist(&[store])?;
    let manifest = read_manifest(store).stage("read draws")?;
    let spec = manifest.spec.clone();
    let m = spec.m();

    let (names, x_future, notes) = if spec.total_predictors() > 0 || cfg.data.targets.is_some() {
        // predictors for the forecast period come from the rows after training
        let mut data_cfg = cfg.clone();
        data_cfg.data.rows = None;
        let panel = load_data(&data_cfg)?;
        if panel.predictor_counts() != spec.predictor_counts {
            return Err(CliError::config(
                "load data",
                format!(
                    "predictor counts {:?} differ from the trained model's {:?}",
                    panel.predictor_counts(),
                    spec.predictor_counts
                ),
            ));
        }
        let need = manifest.n + f.horizon;
        if spec.total_predictors() > 0 && panel.n() < need {
            return Err(CliError::config(
                "load data",
                format!(
                    "forecasting {} steps past {} training rows needs {need} predictor rows, found {}",
                    f.horizon,
                    manifest.n,
                    panel.n()
                ),
            ));
        }
        let x: Vec<DMatrix<f64>> = panel
            .x_blocks
            .iter()
            .map(|x| {
                if x.ncols() == 0 {
                    DMatrix::zeros(f.horizon, 0)
                } else {
                    x.rows(manifest.n, f.horizon).into_owned()
                }
            })
            .collect();
        (panel.target_names.clone(), x, lag_note(&panel))
    } else {
        let names = (1..=m).map(|i| format!("y_{i}")).collect();
        (names, vec![DMatrix::zeros(f.horizon, 0); m], Vec::new())
    };
    check_output(out)?;

    let draws = read_draws(store).stage("read draws")?;
    let mut rng = stream_rng(mix_seed(cfg.seed, &[FORECAST_STREAM]), 0);
    let result = predict(&draws, &spec, &x_future, f.horizon, &mut rng).stage("forecast")?;
    let result = summarize(&result, &f.levels).stage("forecast")?;

    create_output(out)?;
    let mut outcome = Outcome {
        notes,
        ..Outcome::default()
    };
    create_in(out, "forecast.csv", &mut outcome, |p| {
        let err = csv_err(p);
        let mut w = csv_writer(p)?;
        let mut header = vec!["step".to_string(), "series".to_string(), "mean".to_string()];
        for b in &result.bands {
            header.push(format!("lower_{}", level_label(b.level)));
            header.push(format!("upper_{}", level_label(b.level)));
        }
        w.write_record(&header).map_err(&err)?;
        for step in 0..f.horizon {
            for (i, name) in names.iter().enumerate() {
                let mut row = vec![(step + 1).to_string(), name.clone(), result.mean[(step, i)].to_string()];
                for b in &result.bands {
                    row.push(b.lower[(step, i)].to_string());
                    row.push(b.upper[(step, i)].to_string());
                }
                w.write_record(&row).map_err(&err)?;
            }
        }
        w.flush().map_err(|e| CliError::io("write output", p, e))
    })?;
    if f.samples {
        create_in(out, "samples.csv", &mut outcome, |p| {
            let err = csv_err(p);
            let mut w = csv_writer(p)?;
            w.write_record(["draw", "step", "series", "value"]).map_err(&err)?;
            for (k, s) in result.samples.iter().enumerate() {
                for step in 0..f.horizon {
                    for (i, name) in names.iter().enumerate() {
                        w.write_record([(k + 1).to_string(), (step + 1).to_string(), name.clone(), s[(step, i)].to_string()])
                            .map_err(&err)?;
                    }
                }
            }
            w.flush().map_err(|e| CliError::io("write output", p, e))
        })?;
    }
    Ok(outcome)
}

fn evaluate_command(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let panel = load_data(cfg)?;
    let spec = cfg.model.spec(&panel.predictor_counts())?;
    let eval = cfg.eval_config();
    eval.validate(panel.n()).stage("config")?;
    check_output(out)?;

    let report = growing_window_eval(&panel.y, &panel.x_blocks, &spec, &eval).stage("evaluate")?;
    create_output(out)?;
    let mut outcome = Outcome {
        notes: lag_note(&panel),
        ..Outcome::default()
    };
    create_in(out, "eval.csv", &mut outcome, |p| {
        report.write_csv(csv_file(p)?).stage("write output")
    })?;
    create_in(out, "eval_forecasts.csv", &mut outcome, |p| {
        report.write_forecasts_csv(csv_file(p)?).stage("write output")
    })?;
    outcome.notes.push(format!("initial training window: {} rows", eval.train_len(panel.n())));
    for v in &report.variants {
        outcome.notes.push(format!("{}: final cumulative PE {}", v.name, v.final_cumulative()));
        outcome.refit_seconds.insert(v.name.clone(), v.refit_seconds.clone());
    }
    Ok(outcome)
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io("write output", path, e))
}

fn report_command(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let inputs = &cfg.report.inputs;
    if inputs.is_empty() {
        return Err(CliError::config("config", "no evaluation CSVs to report on"));
    }
    let paths: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    check_inputs_exist(&paths)?;
    let reports = inputs
        .iter()
        .map(|p| {
            let file = File::open(p).map_err(|e| CliError::io("report", p, e))?;
            EvalReport::read_csv(file).map_err(|e| CliError::config("report", format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = compare_report(&reports).map_err(|e| CliError::config("report", e.to_string()))?;
    check_output(out)?;
    create_output(out)?;
    let mut outcome = Outcome::default();
    create_in(out, "comparison.csv", &mut outcome, |p| {
        table.write_table_csv(csv_file(p)?).stage("write output")
    })?;
    create_in(out, "summary.csv", &mut outcome, |p| {
        table.write_summary_csv(csv_file(p)?).stage("write output")
    })?;
    Ok(outcome)
}

fn build_targets(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let t = &cfg.targets;
    if t.prices.is_empty() {
        return Err(CliError::config("config", "no price files given"));
    }
    let paths: Vec<&Path> = t.prices.iter().map(PathBuf::as_path).collect();
    check_inputs_exist(&paths)?;
    let mut names = Vec::new();
    let mut series: Vec<Targets> = Vec::new();
    let mut notes = Vec::new();
    for p in &t.prices {
        let panel = load_prices(p)?;
        let targets = max_log_return(&panel, t.k)?;
        notes.push(format!("{}: last {} rows have no {}-day window and were dropped", panel.ticker, targets.dropped, t.k));
        if series.first().is_some_and(|first| first.dates != targets.dates) {
            return Err(CliError::config(
                "build targets",
                format!("{} does not cover the same dates as {}", panel.ticker, names[0]),
            ));
        }
        names.push(panel.ticker);
        series.push(targets);
    }
    check_output(out)?;
    for n in &notes {
        eprintln!("{n}");
    }
    let dates = series[0].dates.clone();
    let y = DMatrix::from_fn(dates.len(), series.len(), |r, c| series[c].values[r]);
    create_output(out)?;
    let mut outcome = Outcome {
        notes,
        ..Outcome::default()
    };
    create_in(out, "targets.csv", &mut outcome, |p| write_table(p, &dates, &names, &y))?;
    Ok(outcome)
}

/// Runs `command` and writes `<output>/manifest.json`.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let out = cfg.output_dir()?.to_path_buf();
    let outcome = match command {
        Command::Simulate => simulate(cfg, &out),
        Command::Train => train_command(cfg, &out),
        Command::Forecast => forecast_command(cfg, &out),
        Command::Evaluate => evaluate_command(cfg, &out),
        Command::Report => report_command(cfg, &out),
        Command::BuildTargets => build_targets(cfg, &out),
    }?;
    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        engine_version: mbsts_core::VERSION.to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        outputs: outcome.outputs,
        notes: outcome.notes,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        refit_seconds: outcome.refit_seconds,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_run_manifest(path: &Path) -> Result<RunManifest> {
    let path = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| CliError::io("replay", &path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config("replay", format!("{}: {e}", path.display())))
}

/// Re-runs a recorded command, optionally into a different directory.
pub fn replay(manifest: &Path, output: Option<PathBuf>) -> Result<RunManifest> {
    let recorded = read_run_manifest(manifest)?;
    let mut cfg = recorded.config;
    if let Some(out) = output {
        cfg.output = Some(out);
        cfg.resolve_paths(Path::new("."));
    }
    if cfg.hash() != recorded.config_hash {
        return Err(CliError::config("replay", "recorded config does not match its hash"));
    }
    run(recorded.command, &cfg)
}
