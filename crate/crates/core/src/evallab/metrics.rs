use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iter: u64,
    pub metric: String,
    pub value: f64,
}

/// Long-format `iter,metric,value` log. Rows are kept in memory and, when
/// backed by a file, written and flushed as they arrive. Within one metric
/// `iter` must strictly increase.
#[derive(Debug, Default)]
pub struct MetricsLog {
    rows: Vec<MetricRow>,
    last: BTreeMap<String, u64>,
    file: Option<File>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Creates `path`, writing `# {header}` and the column names.
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "# {header}")?;
        writeln!(file, "iter,metric,value")?;
        file.flush()?;
        Ok(Self {
            file: Some(file),
            ..Self::default()
        })
    }

    pub fn record(&mut self, iter: u64, metric: &str, value: f64) -> Result<()> {
        if let Some(&prev) = self.last.get(metric) {
            if iter <= prev {
                return Err(Error::Contract(format!(
                    "metric '{metric}' logged at iter {iter} after {prev}"
                )));
            }
        }
        self.last.insert(metric.to_string(), iter);
        if let Some(f) = &mut self.file {
            writeln!(f, "{iter},{metric},{value:e}")?;
            f.flush()?;
        }
        self.rows.push(MetricRow {
            iter,
            metric: metric.to_string(),
            value,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    /// `(iter, value)` pairs of one metric in logging order.
    pub fn series(&self, metric: &str) -> Vec<(u64, f64)> {
        series_of(&self.rows, metric)
    }

    pub fn count(&self, metric: &str) -> usize {
        self.rows.iter().filter(|r| r.metric == metric).count()
    }
}

pub fn series_of(rows: &[MetricRow], metric: &str) -> Vec<(u64, f64)> {
    rows.iter()
        .filter(|r| r.metric == metric)
        .map(|r| (r.iter, r.value))
        .collect()
}

/// Reads a metrics CSV, skipping `#` comment lines and the column header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let f = File::open(path)?;
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line != "iter,metric,value" {
                return Err(Error::Format(format!("{}: unexpected header '{line}'", path.display())));
            }
            seen_header = true;
            continue;
        }
        let bad = || Error::Format(format!("{}:{}: malformed row", path.display(), n + 1));
        let mut parts = line.splitn(3, ',');
        let iter = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let metric = parts.next().ok_or_else(bad)?.to_string();
        let value = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        rows.push(MetricRow { iter, metric, value });
    }
    if !seen_header {
        return Err(Error::Format(format!("{}: missing header", path.display())));
    }
    Ok(rows)
}
