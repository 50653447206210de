//! Streaming Weibel (1D2V) and Landau damping (2D2V) set-ups, L2
//! projection of initial data, and the velocity reflection used by the
//! time-reversal accuracy protocol.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::basis1d::transform::hier_transform_1d;
use crate::basis1d::{cell_of, cells_at_level, legendre01, level_of, quadrature, support, Basis1D};
use crate::error::{Error, Result};
use crate::fullgrid::GridShape;
use crate::hiergrid::{ElementKey, ElementSet, SpaceSpec};
use crate::operators::{DistributionField, EmField, PhaseDomain, SystemKind, VmState};
use crate::scalar::Real;

/// Shareable 1D function.
pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `coef * prod_m factors[m](x_m)`.
#[derive(Clone)]
pub struct SeparableTerm {
    pub coef: f64,
    pub factors: Vec<Fn1>,
}

/// Finite sum of separable terms.
#[derive(Clone, Default)]
pub struct Separable {
    pub terms: Vec<SeparableTerm>,
}

impl fmt::Debug for Separable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Separable({} terms)", self.terms.len())
    }
}

impl Separable {
    pub fn zero() -> Self {
        Separable { terms: Vec::new() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coef * t.factors.iter().zip(x).map(|(g, &v)| g(v)).product::<f64>()).sum()
    }
}

fn one() -> Fn1 {
    Arc::new(|_| 1.0)
}

fn gauss(center: f64, beta: f64) -> Fn1 {
    Arc::new(move |v: f64| (-(v - center) * (v - center) / beta).exp())
}

/// Streaming Weibel parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwParams {
    pub beta: f64,
    pub delta: f64,
    pub v01: f64,
    pub v02: f64,
    pub k0: f64,
    pub b: f64,
    /// Half-width of the velocity box.
    pub vmax: f64,
}

impl SwParams {
    pub fn choice(choice: u8) -> Result<Self> {
        let base = SwParams { beta: 0.01, delta: 0.5, v01: 0.3, v02: 0.3, k0: 0.2, b: 0.001, vmax: 1.2 };
        match choice {
            1 => Ok(base),
            2 => Ok(SwParams { delta: 1.0 / 6.0, v01: 0.5, v02: 0.1, ..base }),
            _ => Err(Error::Config(format!("streaming Weibel choice must be 1 or 2, got {choice}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) || self.b < 0.0 || self.beta <= 0.0 || self.k0 <= 0.0 {
            return Err(Error::Config("invalid streaming Weibel parameters".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        2.0 * PI / self.k0
    }
}

/// Landau damping parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandauParams {
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub vmax: f64,
}

/// Weak or strong Landau damping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strength {
    Weak,
    Strong,
}

/// A benchmark problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Problem {
    Sw { choice: u8, params: SwParams },
    Landau { strength: Strength, params: LandauParams },
}

pub fn sw_setup(choice: u8) -> Result<Problem> {
    Ok(Problem::Sw { choice, params: SwParams::choice(choice)? })
}

pub fn landau_setup(strength: Strength) -> Problem {
    let alpha = match strength {
        Strength::Weak => 0.01,
        Strength::Strong => 0.5,
    };
    Problem::Landau { strength, params: LandauParams { alpha, k1: 0.5, k2: 0.5, vmax: 6.0 } }
}

impl Problem {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sw1" => sw_setup(1),
            "sw2" => sw_setup(2),
            "landau_weak" => Ok(landau_setup(Strength::Weak)),
            "landau_strong" => Ok(landau_setup(Strength::Strong)),
            _ => Err(Error::Config(format!("unknown problem '{name}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Sw { choice: 1, .. } => "sw1",
            Problem::Sw { .. } => "sw2",
            Problem::Landau { strength: Strength::Weak, .. } => "landau_weak",
            Problem::Landau { .. } => "landau_strong",
        }
    }

    pub fn system(&self) -> SystemKind {
        match self {
            Problem::Sw { .. } => SystemKind::Maxwell1D2V,
            Problem::Landau { .. } => SystemKind::Ampere2D2V,
        }
    }

    pub fn domain(&self) -> PhaseDomain {
        match self {
            Problem::Sw { params: p, .. } => {
                PhaseDomain { lo: vec![0.0, -p.vmax, -p.vmax], hi: vec![p.length(), p.vmax, p.vmax] }
            }
            Problem::Landau { params: p, .. } => PhaseDomain {
                lo: vec![0.0, 0.0, -p.vmax, -p.vmax],
                hi: vec![2.0 * PI / p.k1, 2.0 * PI / p.k2, p.vmax, p.vmax],
            },
        }
    }

    /// Wave number used for the Log Fourier modes.
    pub fn wave_number(&self) -> f64 {
        match self {
            Problem::Sw { params, .. } => params.k0,
            Problem::Landau { params, .. } => params.k1,
        }
    }

    /// Base wave number along each x-axis.
    pub fn wave_numbers(&self) -> Vec<f64> {
        match self {
            Problem::Sw { params, .. } => vec![params.k0],
            Problem::Landau { params, .. } => vec![params.k1, params.k2],
        }
    }

    /// Initial distribution function as a sum of separable terms.
    pub fn initial_f(&self) -> Separable {
        match *self {
            Problem::Sw { params: p, .. } => {
                let c = 1.0 / (PI * p.beta);
                Separable {
                    terms: vec![
                        SeparableTerm {
                            coef: c * p.delta,
                            factors: vec![one(), gauss(p.v01, p.beta), gauss(0.0, p.beta)],
                        },
                        SeparableTerm {
                            coef: c * (1.0 - p.delta),
                            factors: vec![one(), gauss(-p.v02, p.beta), gauss(0.0, p.beta)],
                        },
                    ],
                }
            }
            Problem::Landau { params: p, .. } => {
                let c = 1.0 / (2.0 * PI);
                let m = || gauss(0.0, 2.0);
                let (k1, k2) = (p.k1, p.k2);
                Separable {
                    terms: vec![
                        SeparableTerm { coef: c, factors: vec![one(), one(), m(), m()] },
                        SeparableTerm {
                            coef: c * p.alpha,
                            factors: vec![Arc::new(move |x: f64| (k1 * x).cos()), one(), m(), m()],
                        },
                        SeparableTerm {
                            coef: c * p.alpha,
                            factors: vec![one(), Arc::new(move |x: f64| (k2 * x).cos()), m(), m()],
                        },
                    ],
                }
            }
        }
    }

    /// Initial field components (in [`SystemKind::field_names`] order) as
    /// separable functions of the x coordinates.
    pub fn initial_fields(&self) -> Vec<Separable> {
        match *self {
            Problem::Sw { params: p, .. } => {
                let k0 = p.k0;
                vec![
                    Separable::zero(),
                    Separable::zero(),
                    Separable {
                        terms: vec![SeparableTerm { coef: p.b, factors: vec![Arc::new(move |x: f64| (k0 * x).sin())] }],
                    },
                ]
            }
            Problem::Landau { params: p, .. } => {
                let (k1, k2) = (p.k1, p.k2);
                vec![
                    Separable {
                        terms: vec![SeparableTerm {
                            coef: p.alpha / k1,
                            factors: vec![Arc::new(move |x: f64| (k1 * x).sin()), one()],
                        }],
                    },
                    Separable {
                        terms: vec![SeparableTerm {
                            coef: p.alpha / k2,
                            factors: vec![one(), Arc::new(move |x: f64| (k2 * x).sin())],
                        }],
                    },
                ]
            }
        }
    }
}

/// Number of Gauss points per finest cell used to project initial data.
pub const PROJECTION_POINTS: usize = 12;

/// Hierarchical 1D coefficients (orthonormal on [0, 1]) of `g(lo + len y)`
/// up to the finest level of `basis`.
pub fn project_1d(basis: &Basis1D, g: &dyn Fn(f64) -> f64, lo: f64, len: f64) -> Result<Vec<f64>> {
    let n = basis.n();
    let cells = basis.num_ids();
    let h = 1.0 / cells as f64;
    let (x, w) = quadrature::gauss_legendre(PROJECTION_POINTS.max(basis.k() + 2));
    let mut nodal = vec![0.0; cells * n];
    for c in 0..cells {
        for (xq, wq) in x.iter().zip(w.iter()) {
            let y = (c as f64 + xq) * h;
            let v = g(lo + len * y);
            if !v.is_finite() {
                return Err(Error::Input(format!("initial function is not finite at {}", lo + len * y)));
            }
            for i in 0..n {
                nodal[c * n + i] += wq * h.sqrt() * v * legendre01(i, *xq);
            }
        }
    }
    hier_transform_1d(basis, &nodal)
}

/// Precomputed 1D coefficient tables of a separable function.
#[derive(Clone, Debug)]
pub struct SeparableProjector {
    n: usize,
    d: usize,
    /// Per term: scaled coefficient and one table per dimension.
    terms: Vec<(f64, Vec<Vec<f64>>)>,
}

impl SeparableProjector {
    pub fn new(basis: &Basis1D, sep: &Separable, domain: &PhaseDomain) -> Result<Self> {
        let d = domain.dim();
        let scale = domain.volume().sqrt();
        let mut terms = Vec::new();
        for t in &sep.terms {
            if t.factors.len() != d {
                return Err(Error::Shape { expected: d, got: t.factors.len() });
            }
            let tables = (0..d)
                .map(|m| project_1d(basis, t.factors[m].as_ref(), domain.lo[m], domain.len(m)))
                .collect::<Result<Vec<_>>>()?;
            terms.push((t.coef * scale, tables));
        }
        Ok(SeparableProjector { n: basis.n(), d, terms })
    }

    /// Coefficient block of `key` (physical-orthonormal basis).
    pub fn block<T: Real>(&self, key: &ElementKey, out: &mut [T]) {
        let n = self.n;
        let bs = n.pow(self.d as u32);
        let mut acc = vec![0.0; bs];
        for (coef, tables) in &self.terms {
            for (r, a) in acc.iter_mut().enumerate() {
                let mut v = *coef;
                let mut rr = r;
                for m in (0..self.d).rev() {
                    v *= tables[m][key.id(m) as usize * n + rr % n];
                    rr /= n;
                }
                *a += v;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = T::lit(a);
        }
    }

    /// Full-grid hierarchical array (for configuration-space fields).
    pub fn full_grid<T: Real>(&self, level: usize) -> Vec<T> {
        let shape = GridShape { dx: self.d, n: self.n, level };
        let side = shape.side();
        let mut out = vec![T::zero(); shape.len(1)];
        for (o, val) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (coef, tables) in &self.terms {
                let mut v = *coef;
                let mut rem = o;
                for m in (0..self.d).rev() {
                    v *= tables[m][rem % side];
                    rem /= side;
                }
                s += v;
            }
            *val = T::lit(s);
        }
        out
    }
}

/// L2 projection of a separable function onto an element set.
pub fn project_separable<T: Real>(
    basis: &Basis1D,
    sep: &Separable,
    spec: SpaceSpec,
    domain: &PhaseDomain,
    set: Arc<ElementSet>,
) -> Result<DistributionField<T>> {
    let proj = SeparableProjector::new(basis, sep, domain)?;
    let mut f = DistributionField::zeros(spec, domain.clone(), set);
    let bs = f.block_size();
    let keys = f.set.clone();
    for (i, key) in keys.keys().iter().enumerate() {
        proj.block(key, &mut f.coeffs[i * bs..(i + 1) * bs]);
    }
    Ok(f)
}

/// L2 projection of a pointwise function by tensor Gauss quadrature on each
/// smooth piece of every element.
pub fn project_pointwise<T: Real>(
    basis: &Basis1D,
    func: &(dyn Fn(&[f64]) -> f64 + Sync),
    spec: SpaceSpec,
    domain: &PhaseDomain,
    set: Arc<ElementSet>,
    points: usize,
) -> Result<DistributionField<T>> {
    let mut f = DistributionField::zeros(spec, domain.clone(), set);
    let keys = f.set.clone();
    let bs = f.block_size();
    for (i, key) in keys.keys().iter().enumerate() {
        let blk = project_element(basis, func, key, domain, points)?;
        for (o, v) in f.coeffs[i * bs..(i + 1) * bs].iter_mut().zip(blk) {
            *o = T::lit(v);
        }
    }
    Ok(f)
}

/// Coefficient block of one element by direct quadrature.
pub fn project_element(
    basis: &Basis1D,
    func: &(dyn Fn(&[f64]) -> f64 + Sync),
    key: &ElementKey,
    domain: &PhaseDomain,
    points: usize,
) -> Result<Vec<f64>> {
    let d = key.dim();
    let n = basis.n();
    let (xq, wq) = quadrature::gauss_legendre(points.max(basis.k() + 2));
    // Per dimension: list of (y, weight, values[n]).
    let mut axes: Vec<Vec<(f64, f64, Vec<f64>)>> = Vec::with_capacity(d);
    let mut vals = vec![0.0; n];
    let mut ders = vec![0.0; n];
    for m in 0..d {
        let id = key.id(m);
        let (a, b) = support(id);
        let pieces = if level_of(id) == 0 { vec![(a, b)] } else { vec![(a, 0.5 * (a + b)), (0.5 * (a + b), b)] };
        let mut pts = Vec::new();
        for (pa, pb) in pieces {
            for (x, w) in xq.iter().zip(wq.iter()) {
                let y = pa + (pb - pa) * x;
                basis.interior(id, y, &mut vals, &mut ders);
                pts.push((y, w * (pb - pa), vals.clone()));
            }
        }
        axes.push(pts);
    }
    let scale = domain.volume().sqrt();
    let bs = n.pow(d as u32);
    let mut out = vec![0.0; bs];
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let total: usize = axes.iter().map(|a| a.len()).product();
    for _ in 0..total {
        let mut w = scale;
        for m in 0..d {
            let p = &axes[m][idx[m]];
            x[m] = domain.map(m, p.0);
            w *= p.1;
        }
        let v = func(&x);
        if !v.is_finite() {
            return Err(Error::Input(format!("initial function is not finite at {x:?}")));
        }
        for (r, o) in out.iter_mut().enumerate() {
            let mut b = w * v;
            let mut rr = r;
            for m in (0..d).rev() {
                b *= axes[m][idx[m]].2[rr % n];
                rr /= n;
            }
            *o += b;
        }
        for m in (0..d).rev() {
            idx[m] += 1;
            if idx[m] < axes[m].len() {
                break;
            }
            idx[m] = 0;
        }
    }
    Ok(out)
}

/// Initial fields projected onto the full configuration grid.
pub fn project_fields<T: Real>(basis: &Basis1D, problem: &Problem) -> Result<EmField<T>> {
    let system = problem.system();
    let dx = system.dx();
    let dom = problem.domain();
    let xdom = PhaseDomain { lo: dom.lo[..dx].to_vec(), hi: dom.hi[..dx].to_vec() };
    let mut em = EmField::zeros(system, basis.k(), basis.config.max_level);
    for (c, sep) in problem.initial_fields().iter().enumerate() {
        let proj = SeparableProjector::new(basis, sep, &xdom)?;
        em.comps[c] = proj.full_grid(basis.config.max_level);
    }
    Ok(em)
}

/// Reflected velocity id: cell `j` of level `l` maps to `2^(l-1) - 1 - j`.
#[inline]
pub fn reflect_id(id: u32) -> u32 {
    let l = level_of(id);
    if l == 0 {
        0
    } else {
        (1 << (l - 1)) + (cells_at_level(l) - 1 - cell_of(id))
    }
}

/// Sign picked up by function `i` (0-based) of `id` under `y -> 1 - y`.
#[inline]
pub fn reflect_sign(k: usize, id: u32, i: usize) -> bool {
    // true means negate
    if level_of(id) == 0 {
        i % 2 == 1
    } else {
        (i + 1 + k) % 2 == 1
    }
}

/// `(f(x, -xi), E, -B)`. Requires a velocity box symmetric about 0.
pub fn reverse_state<T: Real>(state: &VmState<T>) -> Result<VmState<T>> {
    let f = &state.f;
    let system = state.em.system;
    let dx = system.dx();
    let d = f.spec.d;
    for m in dx..d {
        let (lo, hi) = (f.domain.lo[m], f.domain.hi[m]);
        if (lo + hi).abs() > 1e-12 * (hi - lo) {
            return Err(Error::Unsupported("velocity box is not symmetric about zero".into()));
        }
    }
    let n = f.spec.k + 1;
    let k = f.spec.k;
    let bs = f.block_size();
    let reflect = |key: &ElementKey| {
        let mut out = *key;
        for m in dx..d {
            out = out.with_id(m, reflect_id(key.id(m)));
        }
        out
    };
    let new_keys: Vec<ElementKey> = f.set.keys().iter().map(reflect).collect();
    let same = new_keys.iter().all(|key| f.set.contains(key));
    let set = if same { f.set.clone() } else { Arc::new(ElementSet::from_keys(new_keys)) };
    let mut out = DistributionField::zeros(f.spec, f.domain.clone(), set.clone());
    for (i, key) in f.set.keys().iter().enumerate() {
        let j = set.get(&reflect(key)).expect("reflected key present");
        let src = f.block(i);
        let dst = &mut out.coeffs[j * bs..(j + 1) * bs];
        for r in 0..bs {
            let mut neg = false;
            let mut rr = r;
            for m in (0..d).rev() {
                let idx = rr % n;
                rr /= n;
                if m >= dx && reflect_sign(k, key.id(m), idx) {
                    neg = !neg;
                }
            }
            dst[r] = if neg { -src[r] } else { src[r] };
        }
    }
    let mut em = state.em.clone();
    if let Some(b) = system.field_names().iter().position(|s| *s == "B3") {
        em.comps[b].iter_mut().for_each(|v| *v = -*v);
    }
    Ok(VmState { t: state.t, f: out, em })
}
