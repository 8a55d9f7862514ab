//! Communication needed by each trace to reach a suboptimality threshold.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use crate::experiment::CSV_HEADER;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reach {
    /// Cumulative uplink units at the first row at or below the threshold.
    Reached { units: u64, step: u64 },
    NotReached,
}

impl fmt::Display for Reach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reach::Reached { units, .. } => write!(f, "{units}"),
            Reach::NotReached => f.write_str("not reached"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub path: PathBuf,
    pub reach: Reach,
    /// Relative to the first trace; `None` if either side never reached.
    pub ratio: Option<f64>,
}

/// Scan a trace for the first row with `suboptimality <= threshold`.
pub fn units_to_threshold(path: &Path, threshold: f64) -> Result<Reach> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        bail!("{}: unexpected header `{}`", path.display(), headers.iter().collect::<Vec<_>>().join(","));
    }
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: malformed row {}", path.display(), line + 2))?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| anyhow!("{}: row {} is missing `{}`", path.display(), line + 2, CSV_HEADER[i]))
        };
        let sub = field(3)?;
        if sub.is_empty() {
            bail!("{}: no suboptimality column values (set report_f_star = true)", path.display());
        }
        let sub: f64 = sub
            .parse()
            .with_context(|| format!("{}: row {}: bad suboptimality `{sub}`", path.display(), line + 2))?;
        if sub <= threshold {
            let units = field(6)?
                .parse()
                .with_context(|| format!("{}: row {}: bad cum_uplink_units", path.display(), line + 2))?;
            let step = field(0)?
                .parse()
                .with_context(|| format!("{}: row {}: bad step", path.display(), line + 2))?;
            return Ok(Reach::Reached { units, step });
        }
    }
    Ok(Reach::NotReached)
}

pub fn compare(paths: &[PathBuf], threshold: f64) -> Result<Vec<ComparisonRow>> {
    if paths.is_empty() {
        bail!("compare needs at least one trace");
    }
    let reaches = paths
        .iter()
        .map(|p| units_to_threshold(p, threshold))
        .collect::<Result<Vec<_>>>()?;
    let base = reaches[0];
    Ok(paths
        .iter()
        .zip(&reaches)
        .map(|(path, &reach)| {
            let ratio = match (reach, base) {
                (Reach::Reached { units: a, .. }, Reach::Reached { units: b, .. }) if b > 0 => Some(a as f64 / b as f64),
                _ => None,
            };
            ComparisonRow {
                path: path.clone(),
                reach,
                ratio,
            }
        })
        .collect())
}

pub fn render(rows: &[ComparisonRow], threshold: f64) -> String {
    let mut out = format!("threshold {threshold:e}\ntrace\tunits\tratio\n");
    for r in rows {
        let ratio = r.ratio.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!("{}\t{}\t{}\n", r.path.display(), r.reach, ratio));
    }
    out
}
