//! The `run` command: project, integrate, and write diagnostics, snapshots,
//! histograms and reversibility errors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sgvm::adaptivity::{adaptive_project_separable, adaptive_step, level_histogram, AdaptConfig, HashTables};
use sgvm::diagnostics::{error_norms, Diagnostics, DiagnosticsRecord, ErrorNorms, Reference, Value};
use sgvm::hiergrid::{ElementSet, SpaceSpec, Truncation};
use sgvm::operators::{FluxConfig, VmState};
use sgvm::problems::{project_fields, project_separable, reverse_state};
use sgvm::timeint::{self, clip_dt};
use sgvm::{Solver, State};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::snapshot::{self, Snapshot};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const ERRORS_FILE: &str = "errors.csv";

/// Real numbers in output files: 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::Real(x) => fmt_real(*x),
        Value::Count(n) => n.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

pub fn snapshot_path(dir: &Path, t: f64) -> PathBuf {
    dir.join(format!("snapshot_t{t}.skin"))
}

pub fn histogram_path(dir: &Path, t: f64) -> PathBuf {
    dir.join(format!("histogram_t{t}.csv"))
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub state: State,
    /// Reversibility errors against the analytic initial data.
    pub errors: Option<ErrorNorms>,
    pub output_dir: PathBuf,
}

impl RunSummary {
    pub fn active_elements(&self) -> usize {
        self.state.f.set.len()
    }

    pub fn dof(&self) -> usize {
        self.state.f.coeffs.len()
    }
}

/// Runs one configuration on a pool of `cfg.workers` threads.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    pool.install(|| Driver::new(cfg)?.run())
}

fn header(cfg: &RunConfig) -> String {
    cfg.canonical_text().lines().map(|l| format!("# {l}\n")).collect()
}

struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvFile {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(CsvFile { path, out: BufWriter::new(file) })
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| CliError::io(&self.path, e))
    }

    fn raw(&mut self, s: &str) -> Result<()> {
        self.out.write_all(s.as_bytes()).map_err(|e| CliError::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// Builds the solver for a configuration.
pub fn build_solver(cfg: &RunConfig) -> Result<Solver> {
    let p = &cfg.problem;
    let flux = FluxConfig { maxwell: cfg.maxwell_flux, lf_scale: cfg.lf_scale };
    Ok(Solver::new(p.system(), p.domain(), cfg.k, cfg.n as usize, flux, cfg.field_space)?)
}

fn adapt_config(cfg: &RunConfig) -> Result<Option<AdaptConfig>> {
    match (cfg.scheme, cfg.eps) {
        (Truncation::Adaptive, Some(eps)) => {
            let eta = cfg.eta_or_default().unwrap_or(eps / 10.0);
            Ok(Some(AdaptConfig::new(cfg.n, cfg.k, eps)?.with_eta(eta)?))
        }
        _ => Ok(None),
    }
}

/// Initial state and adaptive tables of a fresh (not resumed) run.
pub fn initial_state(cfg: &RunConfig, solver: &Solver) -> Result<(State, Option<HashTables>)> {
    let p = &cfg.problem;
    let domain = p.domain();
    let em = project_fields(&solver.basis, p)?;
    if let Some(acfg) = adapt_config(cfg)? {
        let (tables, f) = adaptive_project_separable(&acfg, &solver.basis, &p.initial_f(), &domain)?;
        return Ok((VmState { t: 0.0, f, em }, Some(tables)));
    }
    let spec = SpaceSpec { d: p.system().d(), k: cfg.k, n: cfg.n, truncation: cfg.scheme };
    let set = ElementSet::from_spec(&spec)?.into();
    let f = project_separable(&solver.basis, &p.initial_f(), spec, &domain, set)?;
    Ok((VmState { t: 0.0, f, em }, None))
}

/// Loads a snapshot into the space of `cfg`. An adaptive run seeds its
/// tables with the snapshot's elements; a full or sparse run keeps the
/// blocks of its own space and zero-fills missing ones.
fn resume_state(cfg: &RunConfig, solver: &Solver, path: &Path) -> Result<(State, u64, Option<HashTables>)> {
    let snap = snapshot::read(path)?;
    let mut state = snap.state;
    let spec = state.f.spec;
    let d = cfg.problem.system().d();
    if spec.d != d || spec.k != cfg.k || spec.n != cfg.n || state.f.domain != solver.domain {
        return Err(CliError::Config(format!(
            "[run] resume: snapshot has d={}, k={}, N={} on another domain or space than the configuration",
            spec.d, spec.k, spec.n
        )));
    }
    if state.em.level != solver.max_level() {
        return Err(CliError::Config("[run] resume: snapshot field level differs from N".into()));
    }
    let target = SpaceSpec { truncation: cfg.scheme, ..spec };
    let tables = if cfg.scheme == Truncation::Adaptive {
        let t = HashTables::from_keys(d, cfg.n, state.f.set.keys())?;
        let set = t.element_set();
        state.f.spec = target;
        if set.keys() != state.f.set.keys() {
            state.f = state.f.remapped(set);
        }
        Some(t)
    } else {
        let set = ElementSet::from_spec(&target)?;
        state.f.spec = target;
        if set.keys() != state.f.set.keys() {
            state.f = state.f.remapped(set.into());
        }
        None
    };
    Ok((state, snap.step, tables))
}

fn write_histogram(path: &Path, cfg: &RunConfig, set: &ElementSet) -> Result<()> {
    let d = set.keys().first().map(|k| k.dim()).unwrap_or(0);
    let mut out = CsvFile::create(path.to_path_buf())?;
    out.raw(&header(cfg))?;
    let mut cols: Vec<String> = (1..=d).map(|m| format!("l{m}")).collect();
    cols.extend(["active", "total", "percent"].map(String::from));
    out.line(&cols.join(","))?;
    for (levels, count) in level_histogram(set) {
        let total: u64 = levels.iter().map(|&l| 1u64 << l.saturating_sub(1)).product();
        let mut row: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
        row.push(count.to_string());
        row.push(total.to_string());
        row.push(fmt_real(100.0 * count as f64 / total as f64));
        out.line(&row.join(","))?;
    }
    out.finish()
}

struct Driver<'a> {
    cfg: &'a RunConfig,
    solver: Solver,
    diag: Diagnostics,
    adapt: Option<AdaptConfig>,
    tables: Option<HashTables>,
    state: State,
    step: u64,
    resumed: bool,
    clock: Instant,
}

impl<'a> Driver<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let solver = build_solver(cfg)?;
        let diag = Diagnostics::new(&solver, &cfg.problem.wave_numbers())?;
        let adapt = adapt_config(cfg)?;
        let clock = Instant::now();
        let (state, step, tables, resumed) = match &cfg.resume {
            Some(path) => {
                let (s, step, t) = resume_state(cfg, &solver, path)?;
                (s, step, t, true)
            }
            None => {
                let (s, t) = initial_state(cfg, &solver)?;
                (s, 0, t, false)
            }
        };
        Ok(Driver { cfg, solver, diag, adapt, tables, state, step, resumed, clock })
    }

    fn record(&self) -> Result<DiagnosticsRecord> {
        Ok(self.diag.record(&self.solver, &self.state, self.clock.elapsed().as_secs_f64())?)
    }

    fn row(rec: &DiagnosticsRecord, status: &str) -> String {
        let mut cells: Vec<String> = rec.values().iter().map(fmt_value).collect();
        cells.push(status.into());
        cells.join(",")
    }

    fn snapshot(&self) -> Result<()> {
        let dir = &self.cfg.output_dir;
        let t = self.state.t;
        snapshot::write(&snapshot_path(dir, t), &Snapshot { step: self.step, state: self.state.clone() })?;
        if self.tables.is_some() {
            write_histogram(&histogram_path(dir, t), self.cfg, &self.state.f.set)?;
        }
        Ok(())
    }

    /// One CFL step, shortened to end exactly at `target` when it would reach it.
    fn advance(&mut self, target: f64) -> Result<bool> {
        let cfg = self.cfg;
        let alpha = self.solver.alpha_bounds(&self.state.em)?.speeds;
        let lengths: Vec<f64> = (0..self.solver.domain.dim()).map(|m| self.solver.domain.len(m)).collect();
        let dt = cfg.time.dt(&alpha, &lengths, cfg.n as usize)?;
        let (dt, hit) = clip_dt(self.state.t, dt, target);
        let t0 = self.state.t;
        let mut next = match (&mut self.tables, &self.adapt) {
            (Some(tables), Some(acfg)) => {
                adaptive_step(&self.solver, acfg, tables, &self.state, cfg.time.scheme, dt, &alpha)?.0
            }
            _ => timeint::step(cfg.time.scheme, &self.state, dt, t0, |u| self.solver.rhs(u, &alpha))?,
        };
        next.t = if hit { target } else { t0 + dt };
        self.state = next;
        self.step += 1;
        Ok(hit)
    }

    fn event_times(&self) -> Vec<f64> {
        let cfg = self.cfg;
        let mut ev: Vec<f64> = cfg.snapshot_times.clone();
        ev.extend(cfg.reverse_at);
        ev.push(cfg.time.t_end);
        ev.retain(|t| *t > self.state.t);
        ev.sort_by(f64::total_cmp);
        ev.dedup();
        ev
    }

    fn run(mut self) -> Result<RunSummary> {
        let cfg = self.cfg;
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut diag_csv = CsvFile::create(dir.join(DIAGNOSTICS_FILE))?;
        diag_csv.raw(&header(cfg))?;
        let mut cols = DiagnosticsRecord::columns(self.solver.system);
        cols.push("status".into());
        diag_csv.line(&cols.join(","))?;
        let mut timing = CsvFile::create(dir.join(TIMING_FILE))?;
        timing.line("step,t,wall_time,active_elements")?;

        if !self.resumed && cfg.snapshot_times.contains(&self.state.t) {
            self.snapshot()?;
        }
        let mut last = self.record()?;
        diag_csv.line(&Self::row(&last, "ok"))?;
        timing.line(&format!("{},{},{},{}", self.step, fmt_real(last.t), fmt_real(last.wall_time), last.active_elements))?;

        for target in self.event_times() {
            while self.state.t < target {
                let hit = match self.advance(target) {
                    Ok(hit) => hit,
                    Err(CliError::Solver(e @ sgvm::Error::Blowup { .. })) => {
                        diag_csv.line(&Self::row(&last, "blowup"))?;
                        diag_csv.finish()?;
                        timing.finish()?;
                        return Err(e.into());
                    }
                    Err(e) => return Err(e),
                };
                if hit && cfg.reverse_at == Some(target) {
                    self.state = reverse_state(&self.state)?;
                    if self.tables.is_some() {
                        self.tables = Some(HashTables::from_keys(self.state.f.spec.d, cfg.n, self.state.f.set.keys())?);
                    }
                }
                let at_end = hit && target == cfg.time.t_end;
                if self.step % cfg.diagnostics_interval as u64 == 0 || at_end {
                    let rec = self.record()?;
                    if !rec.is_finite() {
                        diag_csv.line(&Self::row(&rec, "blowup"))?;
                        diag_csv.finish()?;
                        return Err(sgvm::Error::Blowup { t: rec.t, what: "non-finite diagnostics".into() }.into());
                    }
                    diag_csv.line(&Self::row(&rec, "ok"))?;
                    timing.line(&format!(
                        "{},{},{},{}",
                        self.step,
                        fmt_real(rec.t),
                        fmt_real(rec.wall_time),
                        rec.active_elements
                    ))?;
                    last = rec;
                }
                if hit && cfg.snapshot_times.contains(&target) {
                    self.snapshot()?;
                }
            }
        }
        diag_csv.finish()?;
        timing.finish()?;

        let errors = match cfg.reverse_at {
            Some(_) => Some(self.reversal_errors()?),
            None => None,
        };
        Ok(RunSummary { steps: self.step, state: self.state, errors, output_dir: dir })
    }

    /// Error of the reversed final state against the analytic initial data.
    fn reversal_errors(&self) -> Result<ErrorNorms> {
        let cfg = self.cfg;
        let p = &cfg.problem;
        let back = reverse_state(&self.state)?;
        let (f, fields) = (p.initial_f(), p.initial_fields());
        let e = error_norms(&self.solver, &back, &Reference::Analytic { f: &f, fields: &fields }, cfg.linf)?;
        let path = cfg.output_dir.join(ERRORS_FILE);
        let mut out = CsvFile::create(path)?;
        out.raw(&header(cfg))?;
        out.line("t,f_l2,E_l2,B_l2,f_linf,E_linf,B_linf,active_elements,dof")?;
        out.line(&format!(
            "{},{},{},{},{},{},{},{},{}",
            fmt_real(self.state.t),
            fmt_real(e.f_l2),
            fmt_real(e.e_l2),
            fmt_opt(e.b_l2),
            fmt_opt(e.f_linf),
            fmt_real(e.e_linf),
            fmt_opt(e.b_linf),
            back.f.set.len(),
            back.f.coeffs.len()
        ))?;
        out.finish()?;
        Ok(e)
    }
}
