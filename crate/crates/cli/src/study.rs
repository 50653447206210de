//! The `study` command: a sweep over N, eps or k, each cell a reversibility
//! run, summarized as an error/rate table.

use std::fmt::Write as _;
use std::path::PathBuf;

use sgvm::diagnostics::rates_against;

use crate::config::{StudyConfig, StudyParam};
use crate::driver::{self, fmt_real};
use crate::error::{CliError, Result};

pub const STUDY_CSV: &str = "study.csv";
pub const STUDY_TXT: &str = "study.txt";

/// Outcome of one study cell.
#[derive(Clone, Debug, PartialEq)]
pub enum CellResult {
    Done { f_error: f64, e_error: f64, active: usize, dof: usize },
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub value: f64,
    pub result: CellResult,
    /// Mesh order (N sweep) or R_eps (eps sweep) against the previous row.
    pub rate: Option<f64>,
    /// R_DOF against the previous row (eps sweep only).
    pub rate_dof: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyTable {
    pub vary: StudyParam,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    fn rate_names(&self) -> (&'static str, Option<&'static str>) {
        match self.vary {
            StudyParam::N => ("order", None),
            StudyParam::Eps => ("R_eps", Some("R_DOF")),
            StudyParam::K => ("", None),
        }
    }

    pub fn csv(&self) -> String {
        let (rate, rate_dof) = self.rate_names();
        let mut cols = vec![self.vary.name(), "status", "f_error", "E_error", "active_elements", "dof"];
        if !rate.is_empty() {
            cols.push(rate);
        }
        cols.extend(rate_dof);
        let mut s = cols.join(",") + "\n";
        for r in &self.rows {
            let mut cells = vec![format!("{}", r.value)];
            match &r.result {
                CellResult::Done { f_error, e_error, active, dof } => {
                    cells.extend(["ok".to_string(), fmt_real(*f_error), fmt_real(*e_error), active.to_string(), dof.to_string()]);
                }
                CellResult::Failed(_) => cells.extend(["failed", "", "", "", ""].map(String::from)),
            }
            if !rate.is_empty() {
                cells.push(r.rate.map(fmt_real).unwrap_or_default());
            }
            if rate_dof.is_some() {
                cells.push(r.rate_dof.map(fmt_real).unwrap_or_default());
            }
            s += &cells.join(",");
            s.push('\n');
        }
        s
    }

    /// Aligned table with errors as `1.25E-01` and rates to two decimals.
    pub fn text(&self) -> String {
        let (rate, rate_dof) = self.rate_names();
        let mut head = vec![self.vary.name().to_string(), "f error".into(), "E error".into(), "DOF".into()];
        if !rate.is_empty() {
            head.push(rate.into());
        }
        head.extend(rate_dof.map(String::from));
        let mut lines = vec![head];
        let sci = |v: f64| {
            let s = format!("{v:.2E}");
            // Rust prints `1.25E-1`; pad the exponent to two digits.
            match s.split_once('E') {
                Some((m, e)) => {
                    let (sign, digits) = e.strip_prefix('-').map(|d| ("-", d)).unwrap_or(("+", e));
                    format!("{m}E{sign}{digits:0>2}")
                }
                None => s,
            }
        };
        for r in &self.rows {
            let mut l = vec![format!("{}", r.value)];
            match &r.result {
                CellResult::Done { f_error, e_error, dof, .. } => {
                    l.extend([sci(*f_error), sci(*e_error), dof.to_string()]);
                }
                CellResult::Failed(_) => l.extend(["failed", "-", "-"].map(String::from)),
            }
            if !rate.is_empty() {
                l.push(r.rate.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()));
            }
            if rate_dof.is_some() {
                l.push(r.rate_dof.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()));
            }
            lines.push(l);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "{}", cells.join("  ").trim_end());
        }
        for r in &self.rows {
            if let CellResult::Failed(msg) = &r.result {
                let _ = writeln!(s, "{} = {}: {msg}", self.vary.name(), r.value);
            }
        }
        s
    }
}

/// Rates between consecutive rows; a failed neighbour leaves the rate empty.
pub fn fill_rates(vary: StudyParam, rows: &mut [StudyRow]) {
    for i in 1..rows.len() {
        let (CellResult::Done { f_error: e0, dof: d0, .. }, CellResult::Done { f_error: e1, dof: d1, .. }) =
            (&rows[i - 1].result, &rows[i].result)
        else {
            continue;
        };
        let errs = [*e0, *e1];
        let (v0, v1) = (rows[i - 1].value, rows[i].value);
        match vary {
            StudyParam::N => {
                rows[i].rate = rates_against(&errs, &[0.5f64.powf(v0), 0.5f64.powf(v1)]).ok().map(|r| r[0]);
            }
            StudyParam::Eps => {
                rows[i].rate = rates_against(&errs, &[v0, v1]).ok().map(|r| r[0]);
                rows[i].rate_dof = rates_against(&errs, &[1.0 / *d0 as f64, 1.0 / *d1 as f64]).ok().map(|r| r[0]);
            }
            StudyParam::K => {}
        }
    }
}

/// Runs every cell, then writes `study.csv` and `study.txt` into the base
/// output directory.
pub fn study(cfg: &StudyConfig) -> Result<(StudyTable, PathBuf)> {
    let mut rows = Vec::with_capacity(cfg.values.len());
    for (i, &value) in cfg.values.iter().enumerate() {
        let result = match cfg.cell(i).and_then(|c| driver::run(&c)) {
            Ok(summary) => {
                let e = summary.errors.expect("study cells reverse");
                CellResult::Done {
                    f_error: e.f_l2,
                    e_error: e.e_l2,
                    active: summary.active_elements(),
                    dof: summary.dof(),
                }
            }
            Err(e) => CellResult::Failed(e.to_string()),
        };
        rows.push(StudyRow { value, result, rate: None, rate_dof: None });
    }
    fill_rates(cfg.vary, &mut rows);
    let table = StudyTable { vary: cfg.vary, rows };
    let dir = cfg.base.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let header: String = cfg.base.canonical_text().lines().map(|l| format!("# {l}\n")).collect();
    let csv = dir.join(STUDY_CSV);
    std::fs::write(&csv, header + &table.csv()).map_err(|e| CliError::io(&csv, e))?;
    let txt = dir.join(STUDY_TXT);
    std::fs::write(&txt, table.text()).map_err(|e| CliError::io(&txt, e))?;
    Ok((table, dir))
}
