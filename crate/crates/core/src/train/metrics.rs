use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Variant;
use crate::error::{Error, Result};

/// One logged point: mean training loss per speaker since the previous
/// point, and the learning rate after the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub losses: Vec<(u32, f64)>,
    pub lr: f64,
}

impl MetricRow {
    pub fn mean_loss(&self) -> f64 {
        let finite: Vec<f64> = self.losses.iter().map(|l| l.1).filter(|l| l.is_finite()).collect();
        finite.iter().sum::<f64>() / finite.len().max(1) as f64
    }

    pub fn header(speakers: &[u32]) -> String {
        let mut s = String::from("step");
        for sp in speakers {
            write!(s, "\tloss_s{sp}").expect("string write");
        }
        s.push_str("\tlr");
        s
    }

    pub fn to_line(&self) -> String {
        let mut s = self.step.to_string();
        for (_, l) in &self.losses {
            write!(s, "\t{l:.9}").expect("string write");
        }
        write!(s, "\t{:.9e}", self.lr).expect("string write");
        s
    }
}

/// Append-only tab-separated metrics file.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    /// Creates (truncating) the file and writes the header.
    pub fn create(path: &Path, speakers: &[u32]) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{}", MetricRow::header(speakers)).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Opens an existing file for appending.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, row: &MetricRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_line()).map_err(|e| Error::io(&self.path, e))
    }
}

/// One cell of a transfer-experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source_utts: usize,
    pub target_utts: usize,
    pub p: f64,
    pub variant: Variant,
    pub cer: f64,
    pub unrecognizable: bool,
}

/// Tab-separated table with columns `#Source #Target P variant CER`.
/// Unrecognizable cells show the capped CER followed by `*`.
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let mut s = String::from("#Source\t#Target\tP\tvariant\tCER\n");
    for r in rows {
        writeln!(
            s,
            "{}\t{}\t{:.2}\t{}\t{:.4}{}",
            r.source_utts,
            r.target_utts,
            r.p,
            r.variant,
            r.cer,
            if r.unrecognizable { "*" } else { "" }
        )
        .expect("string write");
    }
    s
}
