//! Metrics CSV files.
//!
//! Training commands write one row per (epoch, split) with the columns of
//! [`slu_core::train::METRICS_COLUMNS`]; optional columns are left empty
//! when the objective has no ASR branch. `wall_seconds` is 0 unless
//! `train.record_time = true`, which keeps files byte-identical across runs.

use std::path::Path;

use serde::Serialize;
use slu_core::{Error, MetricsRow};

use crate::error::CliResult;

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    write_rows(path, rows)
}

/// Per-epoch masked-token loss of text-encoder pre-training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextMetricsRow {
    pub epoch: usize,
    pub split: String,
    pub mlm_loss: f64,
}

pub fn write_text_metrics(path: &Path, rows: &[TextMetricsRow]) -> CliResult<()> {
    write_rows(path, rows)
}

/// Output of `slu eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub split: String,
    pub count: usize,
    pub intent_accuracy: f64,
    pub slu_loss: f64,
    pub asr_loss: Option<f64>,
    pub asr_loss_per_token: Option<f64>,
    pub token_accuracy: Option<f64>,
    /// Position-wise agreement of greedy transcripts with the references.
    pub greedy_token_accuracy: Option<f64>,
}

pub fn write_eval(path: &Path, row: &EvalRow) -> CliResult<()> {
    write_rows(path, std::slice::from_ref(row))
}

pub fn eval_csv(row: &EvalRow) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(row)?;
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// A metrics file read back as a header and string records.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// `(epoch, value)` pairs of `column` for rows whose split is `split`.
    /// Empty cells are skipped.
    pub fn series(&self, column: &str, split: &str) -> CliResult<Vec<(f64, f64)>> {
        let missing = |c: &str| Error::Input(format!("metrics file has no `{c}` column"));
        let col = self.column(column).ok_or_else(|| missing(column))?;
        let ep = self.column("epoch").ok_or_else(|| missing("epoch"))?;
        let sp = self.column("split").ok_or_else(|| missing("split"))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Input(format!("non-numeric metrics value `{s}`")))
        };
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| r[sp] == split && !r[col].is_empty()) {
            out.push((num(&r[ep])?, num(&r[col])?));
        }
        Ok(out)
    }
}
