//! Metrics log: one append-only CSV with a fixed column order. Cells are
//! written with the shortest round-tripping float format, so two runs that
//! compute the same numbers produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::Stage;

use super::{HarnessError, HarnessResult};

pub const CSV_HEADER: &str = "step,split,stage,loss_total,loss_action,loss_object,loss_gp,loss_ti,loss_ia,accuracy,macro_f1,tau_ia,tau_ti";

/// One log line. `None` renders as an empty cell; which cells are filled
/// depends on the stage and on whether the row is a train or an eval row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub split: &'static str,
    pub stage: Stage,
    pub loss_total: Option<f64>,
    pub loss_action: Option<f64>,
    pub loss_object: Option<f64>,
    pub loss_gp: Option<f64>,
    pub loss_ti: Option<f64>,
    pub loss_ia: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub tau_ia: Option<f64>,
    pub tau_ti: Option<f64>,
}

impl MetricsRow {
    /// A row with every metric cell empty.
    pub fn blank(step: u64, split: &'static str, stage: Stage) -> MetricsRow {
        MetricsRow {
            step,
            split,
            stage,
            loss_total: None,
            loss_action: None,
            loss_object: None,
            loss_gp: None,
            loss_ti: None,
            loss_ia: None,
            accuracy: None,
            macro_f1: None,
            tau_ia: None,
            tau_ti: None,
        }
    }

    pub fn line(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.split,
            self.stage.as_str(),
            cell(self.loss_total),
            cell(self.loss_action),
            cell(self.loss_object),
            cell(self.loss_gp),
            cell(self.loss_ti),
            cell(self.loss_ia),
            cell(self.accuracy),
            cell(self.macro_f1),
            cell(self.tau_ia),
            cell(self.tau_ti),
        )
    }
}

pub struct CsvWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl CsvWriter {
    /// Creates (or truncates) the file and writes the header line.
    pub fn create(path: &Path) -> HarnessResult<CsvWriter> {
        let file = File::create(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
        let mut w = CsvWriter { out: BufWriter::new(file), path: path.into() };
        w.write_line(CSV_HEADER)?;
        Ok(w)
    }

    pub fn append(&mut self, row: &MetricsRow) -> HarnessResult<()> {
        let line = row.line();
        self.write_line(&line)
    }

    pub fn flush(&mut self) -> HarnessResult<()> {
        let path = self.path.clone();
        self.out.flush().map_err(|source| HarnessError::Io { path, source })
    }

    fn write_line(&mut self, line: &str) -> HarnessResult<()> {
        let path = self.path.clone();
        writeln!(self.out, "{line}").map_err(|source| HarnessError::Io { path, source })
    }
}

/// Writes a whole run's rows in one go: header, then one line per row.
pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> HarnessResult<()> {
    let mut w = CsvWriter::create(path)?;
    for row in rows {
        w.append(row)?;
    }
    w.flush()
}
