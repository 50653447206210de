//! Observables, error norms and convergence rates.
//!
//! Scalar observables are evaluated from coefficients: the basis is
//! orthonormal on the physical box, so `int g^2 = sum c^2` and the integral of
//! an x-space function is its level-0 coefficient times `sqrt|Omega_x|`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis1d::quadrature::composite;
use crate::basis1d::{id_of, Basis1D};
use crate::error::{Error, Result};
use crate::fullgrid::{for_each_cell, sample_cells};
use crate::hiergrid::ElementKey;
use crate::operators::{DistributionField, EmField, PhaseDomain, SystemKind, VlasovSolver, VmState};
use crate::problems::{Fn1, Separable, SeparableProjector, SeparableTerm};
use crate::scalar::Real;

/// Lower bound reported for Log Fourier modes.
pub const LOG_FLOOR: f64 = -20.0;
/// Number of Log Fourier modes per field component.
pub const NUM_MODES: usize = 4;
/// Sampling points per finest cell and dimension for L-infinity estimates.
pub const LINF_POINTS: usize = 4;

const EXACT_PIECES: usize = 4096;
const EXACT_POINTS: usize = 10;

/// One row of the diagnostics table.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub momentum: [f64; 2],
    pub kinetic: [f64; 2],
    pub electric: [f64; 2],
    /// Magnetic energy (1D2V only).
    pub magnetic: Option<f64>,
    pub total_energy: f64,
    pub enstrophy: f64,
    /// `log_modes[c][n - 1]` is mode `n` of field component `c`.
    pub log_modes: Vec<[f64; NUM_MODES]>,
    pub active_elements: usize,
    pub wall_time: f64,
}

/// A table cell: real value or integer count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Real(f64),
    Count(u64),
}

impl DiagnosticsRecord {
    /// Column names in output order. `wall_time` is not part of the table.
    pub fn columns(system: SystemKind) -> Vec<String> {
        let mut cols: Vec<String> =
            ["t", "mass", "P1", "P2", "K1", "K2", "energy_E1", "energy_E2"].iter().map(|s| s.to_string()).collect();
        if system == SystemKind::Maxwell1D2V {
            cols.push("energy_B3".into());
        }
        cols.push("total_energy".into());
        cols.push("enstrophy".into());
        for name in system.field_names() {
            for n in 1..=NUM_MODES {
                cols.push(format!("logFM_{name}_{n}"));
            }
        }
        cols.push("active_elements".into());
        cols
    }

    /// Values in the order of [`DiagnosticsRecord::columns`].
    pub fn values(&self) -> Vec<Value> {
        let mut v = vec![
            self.t,
            self.mass,
            self.momentum[0],
            self.momentum[1],
            self.kinetic[0],
            self.kinetic[1],
            self.electric[0],
            self.electric[1],
        ];
        v.extend(self.magnetic);
        v.push(self.total_energy);
        v.push(self.enstrophy);
        for m in &self.log_modes {
            v.extend_from_slice(m);
        }
        let mut out: Vec<Value> = v.into_iter().map(Value::Real).collect();
        out.push(Value::Count(self.active_elements as u64));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| match v {
            Value::Real(x) => x.is_finite(),
            Value::Count(_) => true,
        })
    }
}

/// `log10(v)`, clamped below at [`LOG_FLOOR`].
pub fn log10_floor(v: f64) -> f64 {
    if v > 0.0 {
        v.log10().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

/// x-axis along which the modes of field component `c` are taken.
pub fn mode_axis(system: SystemKind, c: usize) -> usize {
    match system {
        SystemKind::Maxwell1D2V => 0,
        SystemKind::Ampere2D2V => c,
    }
}

fn x_domain(domain: &PhaseDomain, dx: usize) -> PhaseDomain {
    PhaseDomain { lo: domain.lo[..dx].to_vec(), hi: domain.hi[..dx].to_vec() }
}

fn axis_function(dx: usize, axis: usize, g: Fn1) -> Separable {
    let one: Fn1 = Arc::new(|_| 1.0);
    let factors = (0..dx).map(|m| if m == axis { g.clone() } else { one.clone() }).collect();
    Separable { terms: vec![SeparableTerm { coef: 1.0, factors }] }
}

fn dot<T: Real>(a: &[T], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y).sum()
}

fn dot_t<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

fn sum_sq<T: Real>(a: &[T]) -> f64 {
    a.iter().map(|v| v.as_f64() * v.as_f64()).sum()
}

/// Observable evaluator for one solver configuration.
#[derive(Clone, Debug)]
pub struct Diagnostics {
    system: SystemKind,
    x_volume: f64,
    /// Per field component and mode: projected `[sin, cos]` coefficients.
    trig: Vec<Vec<[Vec<f64>; 2]>>,
}

impl Diagnostics {
    /// `wave_numbers[m]` is the base wave number along x-axis `m`.
    pub fn new<T: Real>(solver: &VlasovSolver<T>, wave_numbers: &[f64]) -> Result<Self> {
        let system = solver.system;
        let dx = system.dx();
        if wave_numbers.len() != dx {
            return Err(Error::Shape { expected: dx, got: wave_numbers.len() });
        }
        let xdom = x_domain(&solver.domain, dx);
        let level = solver.max_level();
        let mut trig = Vec::new();
        for c in 0..system.field_names().len() {
            let axis = mode_axis(system, c);
            let mut modes = Vec::new();
            for n in 1..=NUM_MODES {
                let kn = n as f64 * wave_numbers[axis];
                let project = |g: Fn1| -> Result<Vec<f64>> {
                    Ok(SeparableProjector::new(&solver.basis, &axis_function(dx, axis, g), &xdom)?.full_grid(level))
                };
                let s = project(Arc::new(move |x: f64| (kn * x).sin()))?;
                let co = project(Arc::new(move |x: f64| (kn * x).cos()))?;
                modes.push([s, co]);
            }
            trig.push(modes);
        }
        Ok(Diagnostics { system, x_volume: xdom.volume(), trig })
    }

    /// `(1/|Omega_x|) sqrt(|int W sin|^2 + |int W cos|^2)` for mode `n >= 1` of
    /// component slot `c`.
    pub fn fourier_amplitude<T: Real>(&self, c: usize, w: &[T], n: usize) -> Result<f64> {
        if n == 0 || n > NUM_MODES {
            return Err(Error::Precondition(format!("mode {n} outside 1..={NUM_MODES}")));
        }
        let [s, co] = &self.trig[c][n - 1];
        if w.len() != s.len() {
            return Err(Error::Shape { expected: s.len(), got: w.len() });
        }
        Ok(dot(w, s).hypot(dot(w, co)) / self.x_volume)
    }

    /// Log Fourier mode, floored at [`LOG_FLOOR`].
    pub fn log_fourier_mode<T: Real>(&self, c: usize, w: &[T], n: usize) -> Result<f64> {
        Ok(log10_floor(self.fourier_amplitude(c, w, n)?))
    }

    pub fn log_modes<T: Real>(&self, em: &EmField<T>) -> Result<Vec<[f64; NUM_MODES]>> {
        em.comps
            .iter()
            .enumerate()
            .map(|(c, w)| {
                let mut out = [0.0; NUM_MODES];
                for (n, o) in out.iter_mut().enumerate() {
                    *o = self.log_fourier_mode(c, w, n + 1)?;
                }
                Ok(out)
            })
            .collect()
    }

    /// Mass, momenta, energies, enstrophy and Log Fourier modes of `state`.
    pub fn record<T: Real>(&self, solver: &VlasovSolver<T>, state: &VmState<T>, wall_time: f64) -> Result<DiagnosticsRecord> {
        if state.f.domain != solver.domain || state.em.system != self.system {
            return Err(Error::Precondition("state does not match the solver".into()));
        }
        let sx = self.x_volume.sqrt();
        let integral = |p: [usize; 2]| solver.moment(&state.f, &p)[0].as_f64() * sx;
        let vol = self.x_volume;
        let mass = integral([0, 0]) / vol;
        let mut momentum = [integral([1, 0]) / vol, integral([0, 1]) / vol];
        let kinetic = [integral([2, 0]) / (2.0 * vol), integral([0, 2]) / (2.0 * vol)];
        let comps = &state.em.comps;
        let electric = [sum_sq(&comps[0]) / (2.0 * vol), sum_sq(&comps[1]) / (2.0 * vol)];
        let magnetic = state.em.b3().map(|b| sum_sq(b) / (2.0 * vol));
        if let Some(b) = state.em.b3() {
            momentum[0] += dot_t(&comps[1], b) / vol;
            momentum[1] -= dot_t(&comps[0], b) / vol;
        }
        let total_energy = kinetic[0] + kinetic[1] + electric[0] + electric[1] + magnetic.unwrap_or(0.0);
        let enstrophy = sum_sq(&state.f.coeffs) / vol;
        Ok(DiagnosticsRecord {
            t: state.t,
            mass,
            momentum,
            kinetic,
            electric,
            magnetic,
            total_energy,
            enstrophy,
            log_modes: self.log_modes(&state.em)?,
            active_elements: state.f.set.len(),
            wall_time,
        })
    }
}

/// Exact `int_box g^2` of a separable function, from 1D integrals of factor
/// products on a fine composite Gauss rule.
pub fn separable_norm_sq(sep: &Separable, domain: &PhaseDomain) -> Result<f64> {
    let d = domain.dim();
    let rules: Vec<(Vec<f64>, Vec<f64>)> =
        (0..d).map(|m| composite(domain.lo[m], domain.hi[m], EXACT_PIECES, EXACT_POINTS)).collect();
    let mut samples = Vec::with_capacity(sep.terms.len());
    for t in &sep.terms {
        if t.factors.len() != d {
            return Err(Error::Shape { expected: d, got: t.factors.len() });
        }
        let per_dim: Vec<Vec<f64>> =
            (0..d).map(|m| rules[m].0.iter().map(|&x| t.factors[m](x)).collect()).collect();
        samples.push(per_dim);
    }
    let mut total = 0.0;
    for (a, ta) in sep.terms.iter().enumerate() {
        for (b, tb) in sep.terms.iter().enumerate() {
            let mut v = ta.coef * tb.coef;
            for m in 0..d {
                let w = &rules[m].1;
                v *= (0..w.len()).map(|q| w[q] * samples[a][m][q] * samples[b][m][q]).sum::<f64>();
            }
            total += v;
        }
    }
    Ok(total)
}

/// Reference for [`error_norms`].
pub enum Reference<'a, T> {
    /// Analytic distribution and field components (over the x-box).
    Analytic { f: &'a Separable, fields: &'a [Separable] },
    State(&'a VmState<T>),
}

/// Normalized error norms of one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorNorms {
    pub f_l2: f64,
    pub e_l2: f64,
    pub b_l2: Option<f64>,
    /// Only computed on request (dense phase-space sampling).
    pub f_linf: Option<f64>,
    pub e_linf: f64,
    pub b_linf: Option<f64>,
}

/// Midpoints of [`LINF_POINTS`] equal sub-intervals of every finest cell.
fn sampling_coords(level: usize) -> Vec<f64> {
    let cells = 1usize << level;
    let mut out = Vec::with_capacity(cells * LINF_POINTS);
    for c in 0..cells {
        for s in 0..LINF_POINTS {
            out.push((c as f64 + (s as f64 + 0.5) / LINF_POINTS as f64) / cells as f64);
        }
    }
    out
}

/// Values of `f_h` on the tensor grid `coords[0] x ... x coords[d-1]` of unit
/// coordinates (row-major, first dimension slowest). Points must avoid cell
/// boundaries of level `N`.
pub fn sample_distribution<T: Real>(basis: &Basis1D, f: &DistributionField<T>, coords: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = f.spec.d;
    let top = f.spec.n as usize;
    if coords.len() != d {
        return Err(Error::Shape { expected: d, got: coords.len() });
    }
    if basis.config.max_level < top || basis.k() != f.spec.k {
        return Err(Error::Precondition("basis does not cover the space".into()));
    }
    let n = basis.n();
    // tables[m][j][l] = (id, values) of the level-l function through point j.
    let mut scratch = vec![0.0; n];
    let tables: Vec<Vec<Vec<(u32, Vec<f64>)>>> = coords
        .iter()
        .map(|ys| {
            ys.iter()
                .map(|&y| {
                    (0..=top as u32)
                        .map(|l| {
                            let cell = if l == 0 { 0 } else { ((y * (1u64 << (l - 1)) as f64) as u32).min((1 << (l - 1)) - 1) };
                            let id = id_of(l, cell);
                            let mut vals = vec![0.0; n];
                            basis.interior(id, y, &mut vals, &mut scratch);
                            (id, vals)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut levels: Vec<Vec<u32>> = f.set.keys().iter().map(|k| k.levels()).collect();
    levels.sort();
    levels.dedup();
    let dims: Vec<usize> = coords.iter().map(|c| c.len()).collect();
    let total: usize = dims.iter().product();
    let scale = 1.0 / f.domain.volume().sqrt();
    let bs = f.block_size();
    let out = (0..total)
        .into_par_iter()
        .map(|p| {
            let mut j = vec![0usize; d];
            let mut rem = p;
            for m in (0..d).rev() {
                j[m] = rem % dims[m];
                rem /= dims[m];
            }
            let mut ids = [0u32; crate::hiergrid::MAX_DIM];
            let mut s = 0.0;
            for lv in &levels {
                for m in 0..d {
                    ids[m] = tables[m][j[m]][lv[m] as usize].0;
                }
                let Some(e) = f.set.get(&ElementKey::from_ids(&ids[..d])) else { continue };
                let blk = f.block(e);
                for (r, c) in blk.iter().enumerate().take(bs) {
                    let mut w = c.as_f64();
                    let mut rr = r;
                    for m in (0..d).rev() {
                        w *= tables[m][j[m]][lv[m] as usize].1[rr % n];
                        rr /= n;
                    }
                    s += w;
                }
            }
            s * scale
        })
        .collect();
    Ok(out)
}

/// `max |f_h - g|` over the L-infinity sampling grid.
fn distribution_linf<T: Real>(basis: &Basis1D, f: &DistributionField<T>, reference: &Reference<T>) -> Result<f64> {
    let d = f.spec.d;
    let coords = vec![sampling_coords(f.spec.n as usize); d];
    let mine = sample_distribution(basis, f, &coords)?;
    let theirs = match reference {
        Reference::State(s) => sample_distribution(basis, &s.f, &coords)?,
        Reference::Analytic { f: g, .. } => {
            let side = coords[0].len();
            (0..mine.len())
                .into_par_iter()
                .map(|p| {
                    let mut x = vec![0.0; d];
                    let mut rem = p;
                    for m in (0..d).rev() {
                        x[m] = f.domain.map(m, coords[m][rem % side]);
                        rem /= side;
                    }
                    g.eval(&x)
                })
                .collect()
        }
    };
    Ok(mine.iter().zip(&theirs).fold(0.0, |a: f64, (x, y)| a.max((x - y).abs())))
}

/// Physical point values of field component arrays on the L-infinity grid.
fn sample_field<T: Real>(solver: &VlasovSolver<T>, comp: &[T]) -> Result<Vec<f64>> {
    let t: Vec<f64> = (0..LINF_POINTS).map(|s| (s as f64 + 0.5) / LINF_POINTS as f64).collect();
    Ok(sample_cells(solver.field_shape(), &solver.field_cells(comp)?, &t))
}

fn sample_separable_on_cells<T: Real>(solver: &VlasovSolver<T>, g: &Separable) -> Vec<f64> {
    let shape = solver.field_shape();
    let dx = shape.dx;
    let cpd = shape.cells_per_dim();
    let npts = LINF_POINTS.pow(dx as u32);
    let mut out = vec![0.0; shape.num_cells() * npts];
    let mut x = vec![0.0; dx];
    for_each_cell(shape, |c, _| {
        for p in 0..npts {
            let (mut rem, mut pp) = (c, p);
            for m in (0..dx).rev() {
                let y = ((rem % cpd) as f64 + ((pp % LINF_POINTS) as f64 + 0.5) / LINF_POINTS as f64) / cpd as f64;
                x[m] = solver.domain.map(m, y);
                rem /= cpd;
                pp /= LINF_POINTS;
            }
            out[c * npts + p] = g.eval(&x);
        }
    });
    out
}

/// Normalized L2 errors (divided by `|Omega|` for `f`, by `|Omega_x|` for the
/// fields) and sampled L-infinity errors.
///
/// Against an analytic reference the L2 error is
/// `||g||^2 - ||P g||^2 + ||P g - f_h||^2` with `P` the projection onto the
/// stored space, so it is exact up to roundoff in the first difference.
/// The L-infinity error of `f` samples [`LINF_POINTS`]`^d` points per finest
/// cell and is only practical for small `N`.
pub fn error_norms<T: Real>(
    solver: &VlasovSolver<T>,
    state: &VmState<T>,
    reference: &Reference<T>,
    with_f_linf: bool,
) -> Result<ErrorNorms> {
    let f = &state.f;
    if f.domain != solver.domain {
        return Err(Error::Precondition("domain mismatch".into()));
    }
    let dx = solver.system.dx();
    let xdom = x_domain(&f.domain, dx);
    let ncomp = solver.system.field_names().len();
    let bs = f.block_size();
    let (f_sq, field_sq): (f64, Vec<f64>) = match reference {
        Reference::State(r) => {
            if r.f.domain != f.domain || r.f.spec.d != f.spec.d || r.f.spec.k != f.spec.k || r.em.comps.len() != ncomp {
                return Err(Error::Precondition("domain mismatch".into()));
            }
            let mut s = 0.0;
            for (e, key) in f.set.keys().iter().enumerate() {
                match r.f.set.get(key) {
                    Some(j) => s += f.block(e).iter().zip(r.f.block(j)).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>(),
                    None => s += sum_sq(f.block(e)),
                }
            }
            for (j, key) in r.f.set.keys().iter().enumerate() {
                if !f.set.contains(key) {
                    s += sum_sq(r.f.block(j));
                }
            }
            let fields = (0..ncomp)
                .map(|c| state.em.comps[c].iter().zip(&r.em.comps[c]).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum())
                .collect();
            (s, fields)
        }
        Reference::Analytic { f: g, fields } => {
            if fields.len() != ncomp {
                return Err(Error::Shape { expected: ncomp, got: fields.len() });
            }
            let proj = SeparableProjector::new(&solver.basis, g, &f.domain)?;
            let mut pg = vec![0.0; bs];
            let (mut p_sq, mut diff_sq) = (0.0, 0.0);
            for (e, key) in f.set.keys().iter().enumerate() {
                proj.block(key, &mut pg);
                p_sq += pg.iter().map(|v| v * v).sum::<f64>();
                diff_sq += pg.iter().zip(f.block(e)).map(|(a, b)| (a - b.as_f64()).powi(2)).sum::<f64>();
            }
            let s = (separable_norm_sq(g, &f.domain)? - p_sq).max(0.0) + diff_sq;
            let mut fs = Vec::with_capacity(ncomp);
            for (c, w) in fields.iter().enumerate() {
                let pw: Vec<f64> = SeparableProjector::new(&solver.basis, w, &xdom)?.full_grid(solver.max_level());
                let p_sq: f64 = pw.iter().map(|v| v * v).sum();
                let diff: f64 = pw.iter().zip(&state.em.comps[c]).map(|(a, b)| (a - b.as_f64()).powi(2)).sum();
                fs.push((separable_norm_sq(w, &xdom)? - p_sq).max(0.0) + diff);
            }
            (s, fs)
        }
    };
    let vx = xdom.volume();
    let f_l2 = (f_sq / f.domain.volume()).sqrt();
    let e_l2 = ((field_sq[0] + field_sq[1]) / vx).sqrt();
    let b_l2 = (ncomp > 2).then(|| (field_sq[2] / vx).sqrt());

    let mut linf = Vec::with_capacity(ncomp);
    for c in 0..ncomp {
        let mine = sample_field(solver, &state.em.comps[c])?;
        let theirs = match reference {
            Reference::State(r) => sample_field(solver, &r.em.comps[c])?,
            Reference::Analytic { fields, .. } => sample_separable_on_cells(solver, &fields[c]),
        };
        linf.push(mine.iter().zip(&theirs).fold(0.0, |a: f64, (x, y)| a.max((x - y).abs())));
    }
    let f_linf = if with_f_linf { Some(distribution_linf(&solver.basis, f, reference)?) } else { None };
    Ok(ErrorNorms {
        f_l2,
        e_l2,
        b_l2,
        f_linf,
        e_linf: linf[0].max(linf[1]),
        b_linf: (ncomp > 2).then(|| linf[2]),
    })
}

fn check_errors(errors: &[f64], xs: &[f64]) -> Result<()> {
    if errors.len() != xs.len() {
        return Err(Error::Shape { expected: errors.len(), got: xs.len() });
    }
    if errors.len() < 2 {
        return Err(Error::Precondition("at least two samples are needed".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::UndefinedRate(format!("error {e} is not positive")));
    }
    Ok(())
}

/// `log(e_{i-1}/e_i) / log(x_{i-1}/x_i)` for consecutive pairs.
pub fn rates_against(errors: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
    check_errors(errors, xs)?;
    errors
        .windows(2)
        .zip(xs.windows(2))
        .map(|(e, x)| {
            let den = (x[0] / x[1]).ln();
            if !(x[0] > 0.0 && x[1] > 0.0) || den == 0.0 || !den.is_finite() {
                return Err(Error::UndefinedRate(format!("abscissae {} and {} give no rate", x[0], x[1])));
            }
            Ok((e[0] / e[1]).ln() / den)
        })
        .collect()
}

/// Rate with respect to the refinement threshold.
pub fn rate_eps(errors: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    rates_against(errors, eps)
}

/// `log(e_{i-1}/e_i) / log(DOF_i/DOF_{i-1})`.
pub fn rate_dof(errors: &[f64], dofs: &[f64]) -> Result<Vec<f64>> {
    let inv: Vec<f64> = dofs.iter().map(|d| 1.0 / d).collect();
    rates_against(errors, &inv)
}

/// `log2(e_{N-1}/e_N)` for consecutive levels.
pub fn mesh_orders(errors: &[f64]) -> Result<Vec<f64>> {
    let h: Vec<f64> = (0..errors.len()).map(|i| 0.5f64.powi(i as i32)).collect();
    rates_against(errors, &h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis1d::quadrature::gauss_legendre;
    use crate::hiergrid::{ElementSet, SpaceSpec, Truncation};
    use crate::operators::FluxConfig;
    use crate::problems::{landau_setup, project_fields, project_separable, sw_setup, Problem, Strength};

    fn setup(problem: &Problem, k: usize, n: u32) -> (VlasovSolver<f64>, VmState<f64>) {
        let solver =
            VlasovSolver::<f64>::new(problem.system(), problem.domain(), k, n as usize, FluxConfig::default(), Truncation::Full)
                .unwrap();
        let spec = SpaceSpec { d: problem.system().d(), k, n, truncation: Truncation::Sparse };
        let set = Arc::new(ElementSet::from_spec(&spec).unwrap());
        let f = project_separable(&solver.basis, &problem.initial_f(), spec, &problem.domain(), set).unwrap();
        let em = project_fields(&solver.basis, problem).unwrap();
        (solver, VmState { t: 0.0, f, em })
    }

    fn waves(p: &Problem) -> Vec<f64> {
        p.wave_numbers()
    }

    #[test]
    fn zero_state_gives_zeros() {
        let p = sw_setup(1).unwrap();
        let (solver, mut state) = setup(&p, 1, 3);
        state.f.coeffs.iter_mut().for_each(|v| *v = 0.0);
        state.em.comps.iter_mut().flatten().for_each(|v| *v = 0.0);
        let r = Diagnostics::new(&solver, &waves(&p)).unwrap().record(&solver, &state, 0.0).unwrap();
        assert_eq!(r.mass, 0.0);
        assert_eq!(r.total_energy, 0.0);
        assert_eq!(r.momentum, [0.0, 0.0]);
        assert!(r.log_modes.iter().flatten().all(|&m| m == LOG_FLOOR));
        assert_eq!(r.values().len(), DiagnosticsRecord::columns(p.system()).len());
    }

    #[test]
    fn landau_initial_observables() {
        let p = landau_setup(Strength::Weak);
        let (solver, state) = setup(&p, 2, 4);
        let r = Diagnostics::new(&solver, &waves(&p)).unwrap().record(&solver, &state, 0.0).unwrap();
        // E1 = (alpha/k) sin(k x1): (1/2)(alpha/k)^2 (1/2).
        let expected = 0.01f64.powi(2) / (4.0 * 0.25);
        assert!((r.electric[0] - expected).abs() < 1e-6 * expected, "{}", r.electric[0]);
        assert!((r.electric[1] - expected).abs() < 1e-6 * expected);
        assert!((r.mass - 1.0).abs() < 1e-8, "{}", r.mass);
        assert!(r.momentum[0].abs() < 1e-12 && r.momentum[1].abs() < 1e-12);
        // Maxwellian: K_m = 1/2.
        assert!((r.kinetic[0] - 0.5).abs() < 1e-6, "{}", r.kinetic[0]);
        assert_eq!(r.total_energy, r.kinetic[0] + r.kinetic[1] + r.electric[0] + r.electric[1]);
        assert!(r.magnetic.is_none());
        // First mode of E1 is (alpha/k)/2.
        assert!((r.log_modes[0][0] - (0.01f64 / 0.5 / 2.0).log10()).abs() < 1e-6);
        assert!(r.log_modes[0][1] < -12.0);
    }

    #[test]
    fn sw_initial_momentum_vanishes() {
        let p = sw_setup(1).unwrap();
        let (solver, state) = setup(&p, 2, 4);
        let r = Diagnostics::new(&solver, &waves(&p)).unwrap().record(&solver, &state, 0.0).unwrap();
        assert!(r.momentum[0].abs() < 1e-13, "{}", r.momentum[0]);
        assert!((r.mass - 1.0).abs() < 1e-6, "{}", r.mass);
        assert!(r.magnetic.unwrap() > 0.0);
        assert!(r.is_finite());
    }

    #[test]
    fn sine_mode_and_orthogonality() {
        let p = sw_setup(1).unwrap();
        let (solver, _) = setup(&p, 2, 5);
        let dg = Diagnostics::new(&solver, &waves(&p)).unwrap();
        let k = p.wave_number();
        let xdom = x_domain(&solver.domain, 1);
        let proj = |g: Fn1| -> Vec<f64> {
            SeparableProjector::new(&solver.basis, &axis_function(1, 0, g), &xdom).unwrap().full_grid(5)
        };
        let w = proj(Arc::new(move |x| (k * x).sin()));
        assert!((dg.log_fourier_mode(0, &w, 1).unwrap() - 0.5f64.log10()).abs() < 1e-6);
        let c2 = proj(Arc::new(move |x| (2.0 * k * x).cos()));
        assert!(dg.log_fourier_mode(0, &c2, 1).unwrap() < -10.0);
        let zero = vec![0.0; w.len()];
        assert_eq!(dg.log_fourier_mode(0, &zero, 3).unwrap(), LOG_FLOOR);
        assert!(dg.log_fourier_mode(0, &w, 0).is_err());
    }

    #[test]
    fn parseval_matches_quadrature() {
        let p = sw_setup(1).unwrap();
        let (solver, state) = setup(&p, 1, 3);
        let (g, w) = gauss_legendre(3);
        let cells = 8;
        let coords: Vec<f64> = (0..cells).flat_map(|c| g.iter().map(move |y| (c as f64 + y) / cells as f64)).collect();
        let weights: Vec<f64> = (0..cells).flat_map(|_| w.iter().map(|v| v / cells as f64)).collect();
        let vals = sample_distribution(&solver.basis, &state.f, &vec![coords.clone(); 3]).unwrap();
        let m = coords.len();
        let mut quad = 0.0;
        for (p, v) in vals.iter().enumerate() {
            quad += weights[p / (m * m)] * weights[(p / m) % m] * weights[p % m] * v * v;
        }
        quad *= state.f.domain.volume();
        let pars = sum_sq(&state.f.coeffs);
        assert!((quad - pars).abs() < 1e-12 * pars, "{quad} {pars}");
    }

    #[test]
    fn state_errors() {
        let p = sw_setup(1).unwrap();
        let (solver, state) = setup(&p, 1, 3);
        let e = error_norms(&solver, &state, &Reference::State(&state), true).unwrap();
        assert_eq!((e.f_l2, e.e_l2, e.f_linf), (0.0, 0.0, Some(0.0)));
        // Adding the constant c moves the level-0 coefficient by c sqrt|Omega|.
        let c = 0.37;
        let mut shifted = state.clone();
        let root = shifted.f.set.get(&ElementKey::root(3)).unwrap();
        shifted.f.block_mut(root)[0] += c * state.f.domain.volume().sqrt();
        let e = error_norms(&solver, &shifted, &Reference::State(&state), true).unwrap();
        assert!((e.f_l2 - c).abs() < 1e-14);
        assert!((e.f_linf.unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn analytic_errors_decrease() {
        let p = sw_setup(1).unwrap();
        let f0 = p.initial_f();
        let fields = p.initial_fields();
        let mut prev = f64::INFINITY;
        for n in 3..=5 {
            let (solver, state) = setup(&p, 1, n);
            let e = error_norms(&solver, &state, &Reference::Analytic { f: &f0, fields: &fields }, false).unwrap();
            assert!(e.f_l2 < prev && e.f_l2 > 0.0);
            assert!(e.b_l2.unwrap() < 1e-3 && e.e_l2 == 0.0);
            prev = e.f_l2;
        }
    }

    #[test]
    fn analytic_error_of_projection_matches_sampling() {
        // Coarse full grid: the decomposition agrees with a direct quadrature.
        let p = landau_setup(Strength::Weak);
        let (solver, state) = setup(&p, 1, 2);
        let f0 = p.initial_f();
        let fields = p.initial_fields();
        let e = error_norms(&solver, &state, &Reference::Analytic { f: &f0, fields: &fields }, true).unwrap();
        let (g, w) = gauss_legendre(8);
        let cells = 4;
        let coords: Vec<f64> = (0..cells).flat_map(|c| g.iter().map(move |y| (c as f64 + y) / cells as f64)).collect();
        let weights: Vec<f64> = (0..cells).flat_map(|_| w.iter().map(|v| v / cells as f64)).collect();
        let vals = sample_distribution(&solver.basis, &state.f, &vec![coords.clone(); 4]).unwrap();
        let m = coords.len();
        let dom = &state.f.domain;
        let mut quad = 0.0;
        for (pt, v) in vals.iter().enumerate() {
            let idx = [pt / (m * m * m), (pt / (m * m)) % m, (pt / m) % m, pt % m];
            let x: Vec<f64> = (0..4).map(|d| dom.map(d, coords[idx[d]])).collect();
            let wt: f64 = idx.iter().map(|&i| weights[i]).product();
            quad += wt * (f0.eval(&x) - v).powi(2);
        }
        let direct = quad.sqrt();
        assert!((direct - e.f_l2).abs() < 1e-3 * e.f_l2, "{direct} {}", e.f_l2);
        assert!(e.f_linf.unwrap() >= e.f_l2 * 0.5);
    }

    #[test]
    fn rates() {
        assert!((mesh_orders(&[0.1, 0.05]).unwrap()[0] - 1.0).abs() < 1e-15);
        let o = mesh_orders(&[1.25e-1, 4.44e-2]).unwrap()[0];
        assert!((o - 1.49).abs() < 5e-3, "{o}");
        let rd = rate_dof(&[6.06e-2, 3.35e-2], &[1216.0, 2272.0]).unwrap()[0];
        let re = rate_eps(&[6.06e-2, 3.35e-2], &[5e-1, 1e-1]).unwrap()[0];
        assert!((rd - 0.95).abs() < 5e-3, "{rd}");
        assert!((re - 0.37).abs() < 5e-3, "{re}");
        assert!(matches!(mesh_orders(&[0.1, 0.0]), Err(Error::UndefinedRate(_))));
        assert!(matches!(mesh_orders(&[0.1, -1.0]), Err(Error::UndefinedRate(_))));
        assert!(matches!(mesh_orders(&[0.1]), Err(Error::Precondition(_))));
    }
}
