//! Result rows and their CSV form.

use std::io::Write as _;
use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::fem::Timings;

pub const CSV_HEADER: &str = "nb,dim,t_basis,t_ass,t_solve,e_l2,e_h1,newton_total";
pub const SUMMARY_HEADER: &str = "nb,dim,fine_dofs,dim_ratio,t_solve,t_solve_fine,t_solve_ratio";

/// Errors at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepError {
    pub step: usize,
    pub e_l2: f64,
    pub e_h1: f64,
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// `ref`, `x+y` or `x+y(k updates)`.
    pub label: String,
    /// Coarse dimension (fine node count for the reference).
    pub dim: usize,
    pub fine_dofs: usize,
    pub timings: Timings,
    /// Final-time errors; NaN when the run failed.
    pub e_l2: f64,
    pub e_h1: f64,
    pub newton_per_step: Vec<usize>,
    /// Errors at every step, when requested.
    pub error_series: Vec<StepError>,
    /// Message of the error that stopped the run.
    pub failure: Option<String>,
}

fn secs(d: Duration) -> String {
    format!("{:.6}", d.as_secs_f64())
}

impl ExperimentReport {
    pub fn newton_total(&self) -> usize {
        self.newton_per_step.iter().sum()
    }

    pub fn max_newton(&self) -> usize {
        self.newton_per_step.iter().copied().max().unwrap_or(0)
    }

    /// Projection plus linear solves.
    pub fn t_solve(&self) -> Duration {
        self.timings.solve_total()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:e},{:e},{}",
            self.label,
            self.dim,
            secs(self.timings.basis),
            secs(self.timings.assembly),
            secs(self.t_solve()),
            self.e_l2,
            self.e_h1,
            self.newton_total()
        )
    }

    /// Row of the summary table against the reference run.
    pub fn summary_row(&self, reference: &ExperimentReport) -> String {
        let fine = reference.t_solve().as_secs_f64();
        let ratio = if fine > 0.0 { self.t_solve().as_secs_f64() / fine } else { f64::NAN };
        format!(
            "{},{},{},{:.6},{},{},{:.6}",
            self.label,
            self.dim,
            self.fine_dofs,
            self.dim as f64 / self.fine_dofs as f64,
            secs(self.t_solve()),
            secs(reference.t_solve()),
            ratio
        )
    }
}

/// Writes `rows` under the standard header, replacing the file.
pub fn write_csv(path: &Path, rows: &[ExperimentReport]) -> Result<()> {
    let mut text = format!("{CSV_HEADER}\n");
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    write_file(path, &text)
}

/// Appends `rows`, writing the header first if the file is new. An existing
/// file with a different header is an error.
pub fn append_csv(path: &Path, rows: &[ExperimentReport]) -> Result<()> {
    let existing = match std::fs::read_to_string(path) {
        Ok(s) => Some(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let mut text = String::new();
    match &existing {
        None => text.push_str(&format!("{CSV_HEADER}\n")),
        Some(s) => {
            if s.lines().next() != Some(CSV_HEADER) {
                return Err(Error::InvalidData {
                    path: path.to_path_buf(),
                    detail: "existing file has a different CSV header".into(),
                });
            }
            if !s.is_empty() && !s.ends_with('\n') {
                text.push('\n');
            }
        }
    }
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// `nb,dim,fine_dofs,dim_ratio,t_solve,t_solve_fine,t_solve_ratio` per row.
pub fn write_summary(path: &Path, reference: &ExperimentReport, rows: &[ExperimentReport]) -> Result<()> {
    let mut text = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        text.push_str(&r.summary_row(reference));
        text.push('\n');
    }
    write_file(path, &text)
}

/// `step,e_l2,e_h1` per time step.
pub fn write_error_series(path: &Path, series: &[StepError]) -> Result<()> {
    let mut text = String::from("step,e_l2,e_h1\n");
    for s in series {
        text.push_str(&format!("{},{:e},{:e}\n", s.step, s.e_l2, s.e_h1));
    }
    write_file(path, &text)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// File-name friendly form of a row label: `4+1(3 updates)` → `4p1_3updates`.
pub fn label_slug(label: &str) -> String {
    let mut out = String::new();
    for ch in label.chars() {
        match ch {
            '+' => out.push('p'),
            '(' => out.push('_'),
            c if c.is_ascii_alphanumeric() || c == '-' || c == '_' => out.push(c),
            _ => {}
        }
    }
    out
}
