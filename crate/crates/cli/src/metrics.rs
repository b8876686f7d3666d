//! The metrics CSV shared by every run command. The column set is frozen:
//! rows leave a field empty rather than dropping or adding columns, so
//! downstream tooling can rely on position. `wallclock_s` is always left
//! empty to keep output files a pure function of config and seed; timing
//! goes to stdout instead.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::errors::{numeric, usage, CliError};

pub const METRICS_HEADER: &str = "step,phase,loss_fwd,loss_bwd,cov_hat,w2_mean,w2_sd,path_energy,msd,consistency_residual,wallclock_s";

/// One CSV row; `None` renders as an empty field. Loss columns are filled
/// on training rows, the rest on evaluation rows.
#[derive(Debug, Clone, Default)]
pub struct MetricsRow {
    pub step: u64,
    pub phase: &'static str,
    pub loss_fwd: Option<f64>,
    pub loss_bwd: Option<f64>,
    pub cov_hat: Option<f64>,
    pub w2_mean: Option<f64>,
    pub w2_sd: Option<f64>,
    pub path_energy: Option<f64>,
    pub msd: Option<f64>,
    pub consistency_residual: Option<f64>,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let mut line = format!("{},{}", self.step, self.phase);
        let fields = [
            self.loss_fwd,
            self.loss_bwd,
            self.cov_hat,
            self.w2_mean,
            self.w2_sd,
            self.path_energy,
            self.msd,
            self.consistency_residual,
        ];
        for field in fields {
            match field {
                Some(v) if v.is_finite() => {
                    let _ = write!(line, ",{v}");
                }
                _ => line.push(','),
            }
        }
        // The trailing comma is the always-empty wallclock_s column.
        line.push(',');
        line
    }
}

pub struct MetricsWriter {
    inner: BufWriter<File>,
}

impl MetricsWriter {
    /// Create (truncating) the file and write the header line.
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path)
            .map_err(|e| usage(format!("cannot create {}: {e}", path.display())))?;
        let mut inner = BufWriter::new(file);
        writeln!(inner, "{METRICS_HEADER}").map_err(numeric)?;
        Ok(MetricsWriter { inner })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<(), CliError> {
        writeln!(self.inner, "{}", row.csv_line()).map_err(numeric)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush().map_err(numeric)
    }
}
