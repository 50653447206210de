//! Run and study configuration.
//!
//! The file is TOML restricted to flat `key = value` pairs inside sections:
//!
//! ```toml
//! [problem]
//! name = "sw1"            # sw1 | sw2 | landau_weak | landau_strong
//!
//! [space]
//! scheme = "sparse"       # full | sparse | adaptive
//! k = 1
//! N = 5
//! eps = 1e-3              # adaptive only (required there)
//! eta = 1e-4              # adaptive only, default eps / 10
//! field_space = "full"    # full | sparse
//!
//! [flux]
//! maxwell = "upwind"      # upwind | alternating_plus_minus | alternating_minus_plus
//! lf_scale = 1.0
//!
//! [time]
//! integrator = "tvd_rk3"  # tvd_rk3 | rk4 | forward_euler
//! cfl = 0.1
//! t_end = 2.0
//! dt = 0.01               # optional fixed step
//! dt_exponent = 1.3333    # optional: dt scaled by h_N^(p - 1)
//! reverse_at = 1.0        # optional reversibility protocol
//!
//! [output]
//! dir = "out"
//! diagnostics_interval = 1
//! snapshot_times = [0.0, 1.0]
//! linf = false            # sampled L-infinity error of f in error reports
//!
//! [run]
//! workers = 4             # default: available cores
//! deterministic = true
//! resume = "out/snapshot_t1.skin"
//!
//! [study]                 # `study` command only
//! vary = "N"              # N | eps | k
//! values = [5, 6, 7]
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sgvm::hiergrid::Truncation;
use sgvm::operators::MaxwellFlux;
use sgvm::problems::Problem;
use sgvm::timeint::{Scheme, TimeConfig};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Environment variable overriding `[output] dir`.
pub const OUTPUT_DIR_ENV: &str = "OUTPUT_DIR";

/// One simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub scheme: Truncation,
    pub k: usize,
    pub n: u32,
    pub eps: Option<f64>,
    pub eta: Option<f64>,
    pub field_space: Truncation,
    pub maxwell_flux: MaxwellFlux,
    pub lf_scale: f64,
    pub time: TimeConfig,
    pub reverse_at: Option<f64>,
    pub diagnostics_interval: usize,
    pub snapshot_times: Vec<f64>,
    pub linf: bool,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub resume: Option<PathBuf>,
}

/// Parameter swept by a study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyParam {
    N,
    Eps,
    K,
}

impl StudyParam {
    pub fn name(&self) -> &'static str {
        match self {
            StudyParam::N => "N",
            StudyParam::Eps => "eps",
            StudyParam::K => "k",
        }
    }
}

/// A convergence study: the base run with one parameter swept.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub base: RunConfig,
    pub vary: StudyParam,
    pub values: Vec<f64>,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

const KNOWN: &[(&str, &[&str])] = &[
    ("problem", &["name"]),
    ("space", &["scheme", "k", "N", "eps", "eta", "field_space"]),
    ("flux", &["maxwell", "lf_scale"]),
    ("time", &["integrator", "cfl", "t_end", "dt", "dt_exponent", "reverse_at"]),
    ("output", &["dir", "diagnostics_interval", "snapshot_times", "linf"]),
    ("run", &["workers", "deterministic", "resume"]),
    ("study", &["vary", "values"]),
];

fn field_err(section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("[{section}] {key}: {msg}"))
}

/// Parsed sections with typed accessors.
struct Sections {
    table: Table,
}

impl Sections {
    fn parse(text: &str, allow_study: bool) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string().trim_end().to_string()))?;
        for (name, value) in &table {
            let Some((_, keys)) = KNOWN.iter().find(|(s, _)| s == name) else {
                return Err(CliError::Config(format!("unknown section [{name}]")));
            };
            if name == "study" && !allow_study {
                return Err(CliError::Config("[study] is only valid for the study command".into()));
            }
            let Value::Table(t) = value else {
                return Err(CliError::Config(format!("'{name}' must be a section")));
            };
            for key in t.keys() {
                if !keys.contains(&key.as_str()) {
                    return Err(field_err(name, key, "unknown key"));
                }
            }
        }
        Ok(Sections { table })
    }

    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.table.get(section)?.as_table()?.get(key)
    }

    fn str(&self, section: &str, key: &str) -> Result<Option<String>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(field_err(section, key, "expected a string")),
        }
    }

    fn real(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(_) => Err(field_err(section, key, "expected a number")),
        }
    }

    fn uint(&self, section: &str, key: &str) -> Result<Option<u64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(_) => Err(field_err(section, key, "expected a non-negative integer")),
        }
    }

    fn boolean(&self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(field_err(section, key, "expected true or false")),
        }
    }

    fn reals(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => Err(field_err(section, key, "expected a list of numbers")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(field_err(section, key, "expected a list of numbers")),
        }
    }

    fn parsed<T: std::str::FromStr<Err = sgvm::Error>>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.str(section, key)?.map(|s| s.parse::<T>().map_err(|e| field_err(section, key, e))).transpose()
    }
}

impl RunConfig {
    /// Parses a run configuration; `OUTPUT_DIR` is not consulted here.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_sections(&Sections::parse(text, false)?)
    }

    /// Reads a configuration file and applies the `OUTPUT_DIR` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    fn from_sections(s: &Sections) -> Result<Self> {
        let name = s.str("problem", "name")?.ok_or_else(|| field_err("problem", "name", "missing"))?;
        let problem = Problem::from_name(&name).map_err(|e| field_err("problem", "name", e))?;
        let scheme: Truncation = s.parsed("space", "scheme")?.unwrap_or(Truncation::Sparse);
        let k = s.uint("space", "k")?.ok_or_else(|| field_err("space", "k", "missing"))? as usize;
        let n = s.uint("space", "N")?.ok_or_else(|| field_err("space", "N", "missing"))?;
        if k > 3 {
            return Err(field_err("space", "k", "degree must be at most 3"));
        }
        if !(1..=20).contains(&n) {
            return Err(field_err("space", "N", "level must be between 1 and 20"));
        }
        let eps = s.real("space", "eps")?;
        let eta = s.real("space", "eta")?;
        let field_space: Truncation = s.parsed("space", "field_space")?.unwrap_or(Truncation::Full);
        if field_space == Truncation::Adaptive {
            return Err(field_err("space", "field_space", "must be full or sparse"));
        }
        let maxwell_flux: MaxwellFlux = s.parsed("flux", "maxwell")?.unwrap_or(MaxwellFlux::Upwind);
        let lf_scale = s.real("flux", "lf_scale")?.unwrap_or(1.0);
        let integrator: Scheme = s.parsed("time", "integrator")?.unwrap_or(Scheme::TvdRk3);
        let time = TimeConfig {
            cfl: s.real("time", "cfl")?.unwrap_or(0.1),
            t_end: s.real("time", "t_end")?.ok_or_else(|| field_err("time", "t_end", "missing"))?,
            scheme: integrator,
            dt_override: s.real("time", "dt")?,
            dt_scaling_exponent: s.real("time", "dt_exponent")?,
        };
        let reverse_at = s.real("time", "reverse_at")?;
        let diagnostics_interval = s.uint("output", "diagnostics_interval")?.unwrap_or(1) as usize;
        let mut snapshot_times = s.reals("output", "snapshot_times")?.unwrap_or_default();
        snapshot_times.sort_by(f64::total_cmp);
        snapshot_times.dedup();
        let linf = s.boolean("output", "linf")?.unwrap_or(false);
        let output_dir = PathBuf::from(s.str("output", "dir")?.unwrap_or_else(|| "output".into()));
        let workers = match s.uint("run", "workers")? {
            Some(0) => return Err(field_err("run", "workers", "must be at least 1")),
            Some(w) => w as usize,
            None => default_workers(),
        };
        if s.boolean("run", "deterministic")? == Some(false) {
            return Err(field_err("run", "deterministic", "runs are always deterministic"));
        }
        let resume = s.str("run", "resume")?.map(PathBuf::from);
        let cfg = RunConfig {
            problem,
            scheme,
            k,
            n: n as u32,
            eps,
            eta,
            field_space,
            maxwell_flux,
            lf_scale,
            time,
            reverse_at,
            diagnostics_interval,
            snapshot_times,
            linf,
            output_dir,
            workers,
            resume,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.time.validate().map_err(|e| CliError::Config(format!("[time] {e}")))?;
        match (self.scheme, self.eps) {
            (Truncation::Adaptive, None) => return Err(field_err("space", "eps", "required for the adaptive scheme")),
            (Truncation::Adaptive, Some(e)) => {
                let eta = self.eta_or_default().unwrap_or(e / 10.0);
                if !(e > 0.0) || !(eta > 0.0 && eta < e) {
                    return Err(field_err("space", "eta", "thresholds must satisfy 0 < eta < eps"));
                }
            }
            (_, Some(_)) => return Err(field_err("space", "eps", "only valid for the adaptive scheme")),
            (_, None) if self.eta.is_some() => return Err(field_err("space", "eta", "only valid for the adaptive scheme")),
            _ => {}
        }
        if !(self.lf_scale >= 0.0) {
            return Err(field_err("flux", "lf_scale", "must be non-negative"));
        }
        if self.diagnostics_interval == 0 {
            return Err(field_err("output", "diagnostics_interval", "must be at least 1"));
        }
        if let Some(r) = self.reverse_at {
            if !(r > 0.0 && r < self.time.t_end) {
                return Err(field_err("time", "reverse_at", "must lie strictly between 0 and t_end"));
            }
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= self.time.t_end)) {
            return Err(field_err("output", "snapshot_times", "times must lie in [0, t_end]"));
        }
        Ok(())
    }

    /// Coarsening threshold, `eps / 10` unless given.
    pub fn eta_or_default(&self) -> Option<f64> {
        self.eta.or(self.eps.map(|e| e / 10.0))
    }

    /// Canonical text of every setting that affects results. The output
    /// directory and worker count are left out so that runs differing only
    /// in those produce identical files.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let real = |v: f64| format!("{v:?}");
        let _ = writeln!(s, "[problem]\nname = \"{}\"", self.problem.name());
        let _ = writeln!(s, "[space]\nscheme = \"{}\"\nk = {}\nN = {}", self.scheme.name(), self.k, self.n);
        if let Some(e) = self.eps {
            let _ = writeln!(s, "eps = {}", real(e));
        }
        if let Some(e) = self.eta_or_default().filter(|_| self.eps.is_some()) {
            let _ = writeln!(s, "eta = {}", real(e));
        }
        let _ = writeln!(s, "field_space = \"{}\"", self.field_space.name());
        let _ = writeln!(s, "[flux]\nmaxwell = \"{}\"\nlf_scale = {}", self.maxwell_flux.name(), real(self.lf_scale));
        let t = &self.time;
        let _ = writeln!(s, "[time]\nintegrator = \"{}\"\ncfl = {}\nt_end = {}", t.scheme.name(), real(t.cfl), real(t.t_end));
        if let Some(dt) = t.dt_override {
            let _ = writeln!(s, "dt = {}", real(dt));
        }
        if let Some(p) = t.dt_scaling_exponent {
            let _ = writeln!(s, "dt_exponent = {}", real(p));
        }
        if let Some(r) = self.reverse_at {
            let _ = writeln!(s, "reverse_at = {}", real(r));
        }
        let times: Vec<String> = self.snapshot_times.iter().map(|v| real(*v)).collect();
        let _ = writeln!(
            s,
            "[output]\ndiagnostics_interval = {}\nsnapshot_times = [{}]\nlinf = {}",
            self.diagnostics_interval,
            times.join(", "),
            self.linf
        );
        let _ = writeln!(s, "[run]\ndeterministic = true");
        if let Some(r) = &self.resume {
            let _ = writeln!(s, "resume = {:?}", r.display().to_string());
        }
        s
    }
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let s = Sections::parse(text, true)?;
        let base = RunConfig::from_sections(&s)?;
        let vary = match s.str("study", "vary")?.as_deref() {
            Some("N") => StudyParam::N,
            Some("eps") => StudyParam::Eps,
            Some("k") => StudyParam::K,
            Some(other) => return Err(field_err("study", "vary", format!("unknown parameter '{other}'"))),
            None => return Err(field_err("study", "vary", "missing")),
        };
        let values = s.reals("study", "values")?.ok_or_else(|| field_err("study", "values", "missing"))?;
        if values.is_empty() {
            return Err(field_err("study", "values", "empty"));
        }
        if base.reverse_at.is_none() {
            return Err(field_err("time", "reverse_at", "studies measure the reversibility error and need it"));
        }
        let cfg = StudyConfig { base, vary, values };
        for i in 0..cfg.values.len() {
            cfg.cell(i)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base.apply_env();
        Ok(cfg)
    }

    /// Configuration of the `i`-th study cell, writing into its own directory.
    pub fn cell(&self, i: usize) -> Result<RunConfig> {
        let v = self.values[i];
        let mut c = self.base.clone();
        let whole = |v: f64| -> Result<u64> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(field_err("study", "values", format!("{v} is not a whole number")))
            }
        };
        match self.vary {
            StudyParam::N => c.n = whole(v)? as u32,
            StudyParam::K => c.k = whole(v)? as usize,
            StudyParam::Eps => {
                c.eps = Some(v);
                c.eta = None;
            }
        }
        c.output_dir = self.base.output_dir.join(format!("{}_{}", self.vary.name(), v));
        c.snapshot_times.clear();
        c.resume = None;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[problem]\nname = \"sw1\"\n[space]\nscheme = \"sparse\"\nk = 1\nN = 5\n[time]\nt_end = 2\nreverse_at = 1\n";

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::parse(BASE).unwrap();
        assert_eq!(c.time.cfl, 0.1);
        assert_eq!(c.maxwell_flux, MaxwellFlux::Upwind);
        assert_eq!(c.workers, default_workers());
        let again = RunConfig::parse(&c.canonical_text()).unwrap();
        assert_eq!(again.canonical_text(), c.canonical_text());
        assert_eq!(RunConfig { output_dir: c.output_dir.clone(), workers: c.workers, ..again }, c);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::parse("[problem]\nname = \"sw3\"\n").unwrap_err().to_string();
        assert!(e.contains("[problem] name"), "{e}");
        let e = RunConfig::parse(&format!("{BASE}[output]\nsnapshot_times = 3\n")).unwrap_err().to_string();
        assert!(e.contains("[output] snapshot_times"), "{e}");
        let e = RunConfig::parse(&format!("{BASE}[space2]\n")).unwrap_err().to_string();
        assert!(e.contains("unknown section"), "{e}");
        let e = RunConfig::parse("[problem]\nname = sw1\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = RunConfig::parse(&BASE.replace("k = 1", "k = 1\nbogus = 2")).unwrap_err().to_string();
        assert!(e.contains("[space] bogus"), "{e}");
    }

    #[test]
    fn adaptive_consistency() {
        assert!(RunConfig::parse(&BASE.replace("sparse", "adaptive")).is_err());
        let c = RunConfig::parse(&BASE.replace("\"sparse\"", "\"adaptive\"\neps = 1e-3")).unwrap();
        assert_eq!(c.eta_or_default(), Some(1e-4));
        assert!(RunConfig::parse(&BASE.replace("N = 5", "N = 5\neps = 1e-3")).is_err());
        assert!(RunConfig::parse(&BASE.replace("\"sparse\"", "\"adaptive\"\neps = 1e-3\neta = 1e-2")).is_err());
    }

    #[test]
    fn study_cells() {
        let s = StudyConfig::parse(&format!("{BASE}[study]\nvary = \"N\"\nvalues = [5, 6, 7]\n")).unwrap();
        assert_eq!(s.cell(2).unwrap().n, 7);
        assert!(s.cell(0).unwrap().output_dir.ends_with("N_5"));
        assert!(StudyConfig::parse(&format!("{BASE}[study]\nvary = \"N\"\nvalues = [5.5]\n")).is_err());
        assert!(RunConfig::parse(&format!("{BASE}[study]\nvary = \"N\"\nvalues = [5]\n")).is_err());
    }
}
