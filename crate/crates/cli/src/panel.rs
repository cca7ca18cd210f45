//! CSV ingestion and export of target and predictor panels.
//!
//! Every file has a header row and a date column first. Predictor files must
//! list the same dates as the targets file, row for row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const STAGE: &str = "load data";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSource {
    /// `None` gives the series no predictors.
    pub path: Option<PathBuf>,
    /// Columns to use; all non-date columns when absent.
    pub columns: Option<Vec<String>>,
    /// Per-column lag in rows: the value used at time t is the one at t - lag.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub lags: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelSchema {
    pub targets: Option<PathBuf>,
    pub target_columns: Option<Vec<String>>,
    /// One entry per target series, or empty for no predictors at all.
    pub predictors: Vec<PredictorSource>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub dates: Vec<String>,
    pub target_names: Vec<String>,
    pub y: DMatrix<f64>,
    pub predictor_names: Vec<Vec<String>>,
    pub x_blocks: Vec<DMatrix<f64>>,
    /// Leading rows removed to make room for lags.
    pub dropped_for_lags: usize,
}

impl Panel {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn predictor_counts(&self) -> Vec<usize> {
        self.x_blocks.iter().map(|x| x.ncols()).collect()
    }

    /// The first `rows` rows.
    pub fn head(&self, rows: usize) -> Panel {
        Panel {
            dates: self.dates[..rows].to_vec(),
            target_names: self.target_names.clone(),
            y: self.y.rows(0, rows).into_owned(),
            predictor_names: self.predictor_names.clone(),
            x_blocks: self.x_blocks.iter().map(|x| x.rows(0, rows).into_owned()).collect(),
            dropped_for_lags: self.dropped_for_lags,
        }
    }
}

/// A CSV file as header plus string cells; the first column holds dates.
struct RawTable {
    path: PathBuf,
    header: Vec<String>,
    dates: Vec<String>,
    cells: Vec<Vec<String>>,
}

impl RawTable {
    fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| CliError::io(STAGE, path, e))?;
        Self::parse(path, &text)
    }

    fn parse(path: &Path, text: &str) -> Result<Self> {
        let bad = |msg: String| CliError::config(STAGE, format!("{}: {msg}", path.display()));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 2 || header.iter().all(String::is_empty) {
            return Err(bad("expected a header row with a date column and at least one value column".into()));
        }
        let mut dates = Vec::new();
        let mut cells = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            if record.iter().all(str::is_empty) {
                continue;
            }
            if record.len() != header.len() {
                return Err(bad(format!(
                    "row {} has {} fields, the header has {}",
                    i + 1,
                    record.len(),
                    header.len()
                )));
            }
            dates.push(record[0].to_string());
            cells.push(record.iter().skip(1).map(str::to_string).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            dates,
            cells,
        })
    }

    fn value_columns(&self) -> Vec<String> {
        self.header[1..].to_vec()
    }

    /// Parses the named columns into an n x k matrix.
    fn matrix(&self, columns: &[String]) -> Result<DMatrix<f64>> {
        let idx = columns
            .iter()
            .map(|c| {
                self.header[1..].iter().position(|h| h == c).ok_or_else(|| {
                    CliError::config(STAGE, format!("{}: no column named `{c}`", self.path.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = DMatrix::zeros(self.cells.len(), columns.len());
        for (r, row) in self.cells.iter().enumerate() {
            for (j, &c) in idx.iter().enumerate() {
                let cell = &row[c];
                let value = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    let what = if cell.is_empty() { "missing value".to_string() } else { format!("invalid value `{cell}`") };
                    CliError::config(
                        STAGE,
                        format!("{}: {what} at row {}, column `{}`", self.path.display(), r + 1, columns[j]),
                    )
                })?;
                out[(r, j)] = value;
            }
        }
        Ok(out)
    }
}

/// Loads targets and predictor blocks as declared by `schema`, then applies
/// the declared lags.
pub fn load_csv_panel(schema: &PanelSchema) -> Result<Panel> {
    let targets_path = schema
        .targets
        .as_ref()
        .ok_or_else(|| CliError::config(STAGE, "no targets file configured"))?;
    let targets = RawTable::read(targets_path)?;
    let target_names = schema.target_columns.clone().unwrap_or_else(|| targets.value_columns());
    if target_names.is_empty() {
        return Err(CliError::config(STAGE, "no target columns selected"));
    }
    let y = targets.matrix(&target_names)?;
    let m = target_names.len();
    let n = y.nrows();

    let sources: Vec<PredictorSource> = if schema.predictors.is_empty() {
        vec![PredictorSource::default(); m]
    } else if schema.predictors.len() == m {
        schema.predictors.clone()
    } else {
        return Err(CliError::config(
            STAGE,
            format!("{} predictor entries for {m} target series", schema.predictors.len()),
        ));
    };

    let mut raw_blocks = Vec::with_capacity(m);
    let mut names = Vec::with_capacity(m);
    let mut lags = Vec::with_capacity(m);
    for (i, src) in sources.iter().enumerate() {
        let Some(path) = &src.path else {
            if !src.lags.is_empty() || src.columns.as_ref().is_some_and(|c| !c.is_empty()) {
                return Err(CliError::config(STAGE, format!("series {} lists predictor columns but no file", i + 1)));
            }
            raw_blocks.push(DMatrix::zeros(n, 0));
            names.push(Vec::new());
            lags.push(Vec::new());
            continue;
        };
        let table = RawTable::read(path)?;
        if table.dates != targets.dates {
            let row = table
                .dates
                .iter()
                .zip(&targets.dates)
                .position(|(a, b)| a != b)
                .unwrap_or(table.dates.len().min(n));
            return Err(CliError::config(
                STAGE,
                format!(
                    "{}: dates differ from the targets file at row {} ({} rows vs {})",
                    path.display(),
                    row + 1,
                    table.dates.len(),
                    n
                ),
            ));
        }
        let cols = src.columns.clone().unwrap_or_else(|| table.value_columns());
        if let Some(c) = src.lags.keys().find(|c| !cols.contains(c)) {
            return Err(CliError::config(STAGE, format!("lag given for unknown column `{c}` of series {}", i + 1)));
        }
        raw_blocks.push(table.matrix(&cols)?);
        lags.push(cols.iter().map(|c| src.lags.get(c).copied().unwrap_or(0)).collect::<Vec<_>>());
        names.push(cols);
    }

    let max_lag = lags.iter().flatten().copied().max().unwrap_or(0);
    if max_lag >= n {
        return Err(CliError::config(STAGE, format!("lag {max_lag} leaves no rows out of {n}")));
    }
    let kept = n - max_lag;
    let x_blocks = raw_blocks
        .iter()
        .zip(&lags)
        .map(|(raw, l)| DMatrix::from_fn(kept, raw.ncols(), |t, j| raw[(t + max_lag - l[j], j)]))
        .collect();
    Ok(Panel {
        dates: targets.dates[max_lag..].to_vec(),
        target_names,
        y: y.rows(max_lag, kept).into_owned(),
        predictor_names: names,
        x_blocks,
        dropped_for_lags: max_lag,
    })
}

/// Writes `date,<names>` rows; values use shortest round-trip formatting.
pub fn write_table(path: &Path, dates: &[String], names: &[String], values: &DMatrix<f64>) -> Result<()> {
    let stage = "write output";
    let err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::io(stage, path, source),
        other => CliError::config(stage, format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (t, date) in dates.iter().enumerate() {
        let mut row = vec![date.clone()];
        row.extend(values.row(t).iter().map(f64::to_string));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(stage, path, e))
}
