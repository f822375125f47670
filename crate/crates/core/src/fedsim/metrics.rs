//! Per-round metric files: one JSON record per line and a CSV mirror.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sim::RoundMetrics;

pub const CSV_COLUMNS: [&str; 6] = ["round", "accuracy", "loss", "density", "peak_flops", "memory_bytes"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub density: f64,
    pub peak_flops: f64,
    pub memory_bytes: f64,
}

impl From<&RoundMetrics> for CsvRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            accuracy: m.accuracy,
            loss: m.loss,
            density: m.density,
            peak_flops: m.peak_flops,
            memory_bytes: m.memory_bytes,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Appends rounds to `metrics.csv` and `metrics.jsonl`, flushing after each.
pub struct MetricsWriter {
    csv_path: std::path::PathBuf,
    csv: csv::Writer<File>,
    jsonl: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(csv_path: &Path, jsonl_path: &Path) -> Result<Self> {
        let csv = csv::Writer::from_path(csv_path).map_err(|e| csv_err(csv_path, e))?;
        Ok(Self {
            csv_path: csv_path.to_path_buf(),
            csv,
            jsonl: BufWriter::new(File::create(jsonl_path)?),
        })
    }

    pub fn write(&mut self, m: &RoundMetrics) -> Result<()> {
        self.csv
            .serialize(CsvRow::from(m))
            .map_err(|e| csv_err(&self.csv_path, e))?;
        self.csv.flush()?;
        serde_json::to_writer(&mut self.jsonl, m)?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        Ok(())
    }
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}
