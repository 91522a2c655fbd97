//! Output files of one command. Everything written is tracked so a failed
//! run can remove its partial outputs before leaving `error.json`.

use std::path::{Path, PathBuf};

use happymap::fairness::CoverageRow;
use happymap::{AuditReport, RunReport};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        let path = self.dir.join(name);
        self.written.push(path.clone());
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<PathBuf> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in rows {
            writer.serialize(row)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `<stem>.csv` and `<stem>.json` for a run report.
    pub fn write_report(&mut self, stem: &str, report: &RunReport) -> CliResult<()> {
        let rows: Vec<ReportRow> = report
            .iterations
            .iter()
            .map(|r| ReportRow {
                iteration: r.iteration,
                auditor_id: r.auditor_id.clone(),
                violation: r.empirical_violation,
                potential_before: r.potential_before,
                potential_after: r.potential_after,
            })
            .collect();
        self.write_csv_with_header(
            &format!("{stem}.csv"),
            &rows,
            &["iteration", "auditor_id", "violation", "potential_before", "potential_after"],
        )?;
        let mut text = report.to_json();
        text.push('\n');
        self.write_bytes(&format!("{stem}.json"), text.as_bytes())?;
        Ok(())
    }

    pub fn write_audit(&mut self, stem: &str, report: &AuditReport) -> CliResult<()> {
        self.write_csv_with_header(&format!("{stem}.csv"), &report.members, &["auditor_id", "violation"])?;
        self.write_json(&format!("{stem}.json"), report)?;
        Ok(())
    }

    pub fn write_coverage(&mut self, name: &str, rows: &[CoverageRow]) -> CliResult<()> {
        self.write_csv_with_header(
            name,
            rows,
            &[
                "group_id",
                "bin_id",
                "n",
                "coverage",
                "deviation",
                "mass_weighted_deviation",
                "std_error",
            ],
        )?;
        Ok(())
    }

    /// Like [`Outputs::write_csv`] but emits the header even with no rows.
    pub fn write_csv_with_header<T: Serialize>(&mut self, name: &str, rows: &[T], header: &[&str]) -> CliResult<PathBuf> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        writer.write_record(header)?;
        for row in rows {
            writer.serialize(row)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| CliError::Config(format!("csv buffer: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    /// Deletes everything this run wrote.
    pub fn discard(&mut self) {
        for path in self.written.drain(..) {
            let _ = std::fs::remove_file(path);
        }
    }
}

#[derive(Serialize)]
struct ReportRow {
    iteration: usize,
    auditor_id: String,
    violation: f64,
    potential_before: f64,
    potential_after: f64,
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub split: String,
    pub group_id: String,
    pub bin_id: String,
    pub n: usize,
    pub value: f64,
    pub std_error: f64,
}

impl MetricRow {
    pub fn new(metric: &str, split: &str, group_id: &str, n: usize, value: f64) -> Self {
        MetricRow {
            metric: metric.into(),
            split: split.into(),
            group_id: group_id.into(),
            bin_id: "all".into(),
            n,
            value,
            std_error: f64::NAN,
        }
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = se;
        self
    }

    pub fn with_bin(mut self, bin: &str) -> Self {
        self.bin_id = bin.into();
        self
    }
}

pub const METRIC_HEADER: [&str; 7] = ["metric", "split", "group_id", "bin_id", "n", "value", "std_error"];
