//! Per-epoch metrics records and their two on-disk forms.
//!
//! * Delimited text: comma-separated, one header line, one row per epoch.
//!   Columns in order: `epoch, avg_return, avg_cost, cost_quantile,
//!   safety_probability, lambda, q_tracker, eta_used, F_q_at_d`.
//!   Floats use the shortest representation that parses back exactly.
//! * Structured text: JSON Lines, one object per epoch with the same keys.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 9] = [
    "epoch",
    "avg_return",
    "avg_cost",
    "cost_quantile",
    "safety_probability",
    "lambda",
    "q_tracker",
    "eta_used",
    "F_q_at_d",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub avg_return: f64,
    pub avg_cost: f64,
    pub cost_quantile: f64,
    pub safety_probability: f64,
    pub lambda: f64,
    pub q_tracker: f64,
    pub eta_used: f64,
    #[serde(rename = "F_q_at_d")]
    pub f_q_at_d: f64,
}

impl EpochMetrics {
    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.safety_probability) {
            return Err(Error::Parse(format!(
                "epoch {}: safety_probability {} outside [0, 1]",
                self.epoch, self.safety_probability
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Parse(format!("epoch {}: lambda {} < 0", self.epoch, self.lambda)));
        }
        Ok(())
    }
}

/// Append-only writer for the delimited form.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(METRICS_HEADER).map_err(csv_err)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        self.inner.serialize(m).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn write_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    rows.iter().try_for_each(|m| w.append(m))
}

pub fn parse_csv(bytes: &[u8]) -> Result<Vec<EpochMetrics>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected metrics header {:?}", header)));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<EpochMetrics>() {
        let m = rec.map_err(csv_err)?;
        m.check()?;
        rows.push(m);
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    parse_csv(&std::fs::read(path)?)
}

pub fn to_json_line(m: &EpochMetrics) -> String {
    serde_json::to_string(m).expect("metrics always serialize")
}

pub fn append_jsonl(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", to_json_line(m))?;
    Ok(())
}

pub fn parse_jsonl(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let m: EpochMetrics = serde_json::from_str(l).map_err(|e| Error::Parse(e.to_string()))?;
            m.check()?;
            Ok(m)
        })
        .collect()
}

pub fn read_jsonl(path: &Path) -> Result<Vec<EpochMetrics>> {
    let f = BufReader::new(File::open(path)?);
    let mut text = String::new();
    for line in f.lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_jsonl(&text)
}

/// Means of the four headline metrics over the trailing `window` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub window: usize,
    pub avg_return: f64,
    pub safety_probability: f64,
    pub avg_cost: f64,
    pub cost_quantile: f64,
    pub final_lambda: f64,
}

pub fn summarize(rows: &[EpochMetrics], window: usize) -> Option<RunSummary> {
    let last = rows.last()?;
    let tail = &rows[rows.len().saturating_sub(window.max(1))..];
    let n = tail.len() as f64;
    let avg = |f: fn(&EpochMetrics) -> f64| tail.iter().map(f).sum::<f64>() / n;
    Some(RunSummary {
        epochs: rows.len(),
        window: tail.len(),
        avg_return: avg(|m| m.avg_return),
        safety_probability: avg(|m| m.safety_probability),
        avg_cost: avg(|m| m.avg_cost),
        cost_quantile: avg(|m| m.cost_quantile),
        final_lambda: last.lambda,
    })
}
