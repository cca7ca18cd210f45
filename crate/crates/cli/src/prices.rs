//! Daily price panels and the max-log-return target.

use std::cmp::Ordering;
use std::path::Path;

use crate::error::{CliError, Result};

const STAGE: &str = "build targets";

#[derive(Clone, Debug, PartialEq)]
pub struct PriceRow {
    pub date: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PricePanel {
    pub ticker: String,
    pub rows: Vec<PriceRow>,
}

/// Numeric dates compare as numbers, anything else (ISO dates) as text.
fn date_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

impl PricePanel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| CliError::config(STAGE, format!("{}: {msg}", self.ticker));
        for (i, r) in self.rows.iter().enumerate() {
            let prices = [r.open, r.high, r.low, r.close];
            if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(bad(format!("row {} ({}): prices must be positive", i + 1, r.date)));
            }
            if !(r.high >= r.open.max(r.close) && r.open.min(r.close) >= r.low) {
                return Err(bad(format!(
                    "row {} ({}): need high >= max(open, close) and min(open, close) >= low",
                    i + 1,
                    r.date
                )));
            }
            if i > 0 && date_order(&self.rows[i - 1].date, &r.date) != Ordering::Less {
                return Err(bad(format!("row {} ({}): dates are not strictly increasing", i + 1, r.date)));
            }
        }
        Ok(())
    }
}

/// Reads `date,open,high,low,close` (header names matched case-insensitively).
pub fn load_prices(path: &Path) -> Result<PricePanel> {
    let ticker = path.file_stem().map_or_else(|| "prices".to_string(), |s| s.to_string_lossy().into_owned());
    let bad = |msg: String| CliError::config(STAGE, format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::io(STAGE, path, source),
            other => bad(format!("{other:?}")),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("no `{name}` column")))
    };
    let (cd, co, ch, cl, cc) = (col("date")?, col("open")?, col("high")?, col("low")?, col("close")?);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            let cell = record.get(c).unwrap_or("");
            cell.parse::<f64>()
                .map_err(|_| bad(format!("row {}, column `{}`: cannot parse `{cell}`", i + 1, header[c])))
        };
        rows.push(PriceRow {
            date: record.get(cd).unwrap_or("").to_string(),
            open: num(co)?,
            high: num(ch)?,
            low: num(cl)?,
            close: num(cc)?,
        });
    }
    let panel = PricePanel { ticker, rows };
    panel.validate()?;
    Ok(panel)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub dates: Vec<String>,
    pub values: Vec<f64>,
    /// Trailing rows without k future days.
    pub dropped: usize,
}

/// `y_t = max_{j=1..k} log(P̄_{t+j} / C_t)` with `P̄ = (C + H + L) / 3`.
pub fn max_log_return(panel: &PricePanel, k: usize) -> Result<Targets> {
    if k == 0 {
        return Err(CliError::config(STAGE, "k must be at least 1"));
    }
    panel.validate()?;
    let n = panel.rows.len();
    if n < k + 1 {
        return Err(CliError::config(
            STAGE,
            format!("{}: {n} rows cannot produce a target with k = {k}", panel.ticker),
        ));
    }
    let average: Vec<f64> = panel.rows.iter().map(|r| (r.close + r.high + r.low) / 3.0).collect();
    let values = (0..n - k)
        .map(|t| {
            (1..=k)
                .map(|j| (average[t + j] / panel.rows[t].close).ln())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(Targets {
        dates: panel.rows[..n - k].iter().map(|r| r.date.clone()).collect(),
        values,
        dropped: k,
    })
}
