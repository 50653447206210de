//! Semi-discrete right-hand sides of the Vlasov-Maxwell and Vlasov-Ampere
//! systems on hierarchical coefficients.
//!
//! Coefficients are taken with respect to basis functions that are
//! orthonormal on the physical box: `Phi = prod v(y) / sqrt(|Omega|)`. In one
//! direction `m` the Vlasov contribution reads
//! `(1/L_m) [ a (Vol - Avg) - (alpha_m / 2) Jump ] f`, where the speed `a`
//! factors into 1D multiplications (for `xi`) or a configuration-space field.
//! Products with fields are evaluated in two stages: for every velocity key
//! `b` the x-slice `f_b` is multiplied by the field on a full x-grid of level
//! `M_b` with exact cell integrals, then the velocity factors are applied as
//! ordinary Kronecker terms.

use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::basis1d::ops::OpCoeffs;
use crate::basis1d::{level_of, support, Basis1D, Basis1DConfig, BlockOp1D, Boundary, OpKind};
use crate::error::{Error, Result};
use crate::fullgrid::{self, GridShape, GridTools, MomentPyramid};
use crate::hiergrid::{ElementKey, ElementSet, KeyMap, SpaceSpec, Truncation};
use crate::kron::{apply_terms, PairList, Term};
use crate::scalar::Real;

/// The two reduced systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// Dimensions `(x2, xi1, xi2)`; fields `E1(x2), E2(x2), B3(x2)`.
    Maxwell1D2V,
    /// Dimensions `(x1, x2, xi1, xi2)`; fields `E1, E2`, no magnetic field.
    Ampere2D2V,
}

impl SystemKind {
    pub fn dx(&self) -> usize {
        match self {
            SystemKind::Maxwell1D2V => 1,
            SystemKind::Ampere2D2V => 2,
        }
    }

    pub fn dv(&self) -> usize {
        2
    }

    pub fn d(&self) -> usize {
        self.dx() + self.dv()
    }

    pub fn field_names(&self) -> &'static [&'static str] {
        match self {
            SystemKind::Maxwell1D2V => &["E1", "E2", "B3"],
            SystemKind::Ampere2D2V => &["E1", "E2"],
        }
    }

    /// Velocity component (0-based) transporting x-dimension `m`.
    pub fn velocity_of_x(&self, m: usize) -> usize {
        match self {
            SystemKind::Maxwell1D2V => 1,
            SystemKind::Ampere2D2V => m,
        }
    }
}

/// Phase-space box, x dimensions first.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PhaseDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(hi.iter()).any(|(a, b)| !(b > a)) {
            return Err(Error::Config("domain box must have hi > lo in every dimension".into()));
        }
        Ok(PhaseDomain { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn len(&self, m: usize) -> f64 {
        self.hi[m] - self.lo[m]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|m| self.len(m)).product()
    }

    pub fn volume_range(&self, r: std::ops::Range<usize>) -> f64 {
        r.map(|m| self.len(m)).product()
    }

    /// Physical coordinate of the unit-cube coordinate `y` in dimension `m`.
    #[inline]
    pub fn map(&self, m: usize, y: f64) -> f64 {
        self.lo[m] + self.len(m) * y
    }
}

/// Numerical flux for the Maxwell curl terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaxwellFlux {
    Upwind,
    /// `(E^+, B^-)`.
    AlternatingPlusMinus,
    /// `(E^-, B^+)`.
    AlternatingMinusPlus,
}

impl MaxwellFlux {
    pub fn name(&self) -> &'static str {
        match self {
            MaxwellFlux::Upwind => "upwind",
            MaxwellFlux::AlternatingPlusMinus => "alternating_plus_minus",
            MaxwellFlux::AlternatingMinusPlus => "alternating_minus_plus",
        }
    }
}

impl FromStr for MaxwellFlux {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind" => Ok(MaxwellFlux::Upwind),
            "alternating_plus_minus" => Ok(MaxwellFlux::AlternatingPlusMinus),
            "alternating_minus_plus" => Ok(MaxwellFlux::AlternatingMinusPlus),
            _ => Err(Error::Config(format!("unknown maxwell flux '{s}'"))),
        }
    }
}

/// Flux choices. The Vlasov flux is global Lax-Friedrichs; `lf_scale`
/// multiplies the dissipation (1 for Lax-Friedrichs, 0 for central).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxConfig {
    pub maxwell: MaxwellFlux,
    pub lf_scale: f64,
}

impl Default for FluxConfig {
    fn default() -> Self {
        FluxConfig { maxwell: MaxwellFlux::Upwind, lf_scale: 1.0 }
    }
}

/// Distribution function on an element set.
#[derive(Clone, Debug)]
pub struct DistributionField<T> {
    pub spec: SpaceSpec,
    pub domain: PhaseDomain,
    pub set: Arc<ElementSet>,
    /// One block of `(k+1)^d` coefficients per element, in set order.
    pub coeffs: Vec<T>,
}

impl<T: Real> DistributionField<T> {
    pub fn zeros(spec: SpaceSpec, domain: PhaseDomain, set: Arc<ElementSet>) -> Self {
        let coeffs = vec![T::zero(); set.len() * spec.block_size()];
        DistributionField { spec, domain, set, coeffs }
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.spec.block_size()
    }

    #[inline]
    pub fn block(&self, i: usize) -> &[T] {
        let bs = self.block_size();
        &self.coeffs[i * bs..(i + 1) * bs]
    }

    #[inline]
    pub fn block_mut(&mut self, i: usize) -> &mut [T] {
        let bs = self.block_size();
        &mut self.coeffs[i * bs..(i + 1) * bs]
    }

    /// Block L2 norm of element `i`.
    pub fn block_norm(&self, i: usize) -> f64 {
        self.block(i).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    /// Coefficients re-indexed onto another element set; missing elements
    /// are zero, elements absent from `set` are dropped.
    pub fn remapped(&self, set: Arc<ElementSet>) -> Self {
        let bs = self.block_size();
        let mut out = DistributionField::zeros(self.spec, self.domain.clone(), set);
        for (i, key) in out.set.clone().keys().iter().enumerate() {
            if let Some(j) = self.set.get(key) {
                out.coeffs[i * bs..(i + 1) * bs].copy_from_slice(self.block(j));
            }
        }
        out
    }
}

/// Electromagnetic field on the full configuration-space grid of level `N`.
///
/// Each component is a hierarchical coefficient array in the layout of
/// [`GridShape`] (`ncomp = 1`), orthonormal on the physical x-box.
#[derive(Clone, Debug, PartialEq)]
pub struct EmField<T> {
    pub system: SystemKind,
    pub k: usize,
    pub level: usize,
    pub comps: Vec<Vec<T>>,
}

impl<T: Real> EmField<T> {
    pub fn zeros(system: SystemKind, k: usize, level: usize) -> Self {
        let shape = GridShape { dx: system.dx(), n: k + 1, level };
        let comps = system.field_names().iter().map(|_| vec![T::zero(); shape.len(1)]).collect();
        EmField { system, k, level, comps }
    }

    pub fn shape(&self) -> GridShape {
        GridShape { dx: self.system.dx(), n: self.k + 1, level: self.level }
    }

    pub fn component(&self, name: &str) -> Option<&[T]> {
        let i = self.system.field_names().iter().position(|n| *n == name)?;
        Some(&self.comps[i])
    }

    /// Magnetic component, if the system has one.
    pub fn b3(&self) -> Option<&[T]> {
        self.component("B3")
    }

    /// `sum |c|^2` over all components (the physical L2 norm squared).
    pub fn norm_sq(&self) -> f64 {
        self.comps.iter().flatten().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}

/// Joint state advanced by the time integrators.
#[derive(Clone, Debug)]
pub struct VmState<T> {
    pub t: f64,
    pub f: DistributionField<T>,
    pub em: EmField<T>,
}

impl<T: Real> VmState<T> {
    pub fn is_finite(&self) -> bool {
        self.f.coeffs.iter().all(|v| v.is_finite()) && self.em.comps.iter().flatten().all(|v| v.is_finite())
    }
}

/// Speed bounds of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaBounds {
    /// Largest x-direction speed.
    pub alpha1: f64,
    /// Largest velocity-direction speed.
    pub alpha2: f64,
    /// Per-dimension speed bound, used both as the Lax-Friedrichs constant of
    /// that direction and for the step size.
    pub speeds: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OpRef {
    XTransport,
    XJump,
    VTransport,
    VJump,
    /// Multiplication by the physical velocity of the given phase dimension.
    VMult(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Src {
    F,
    /// Field component index.
    Field(usize),
}

#[derive(Clone, Debug)]
struct TermSpec {
    ops: Vec<(usize, OpRef)>,
    coef: f64,
    /// Multiply the coefficient by the speed bound of this dimension.
    alpha_dim: Option<usize>,
    src: Src,
}

/// Velocity-key grouping and layout of the field-product buffers.
///
/// A field term couples a test `(x, b')` to a trial `(x, b)` through a product
/// with a field `W(x)` and 1D operators in velocity. The x and velocity
/// factors commute, so each pair can be evaluated in either order. Pairs with
/// `|b|_1 <= |b'|_1` use the trial-side product `P(W f_b)` (stage "pre");
/// the others first apply the velocity operators and then multiply on the
/// test side (stage "post"). Either way the product grid of a key stays at
/// the finest x-level of its own elements.
#[derive(Debug)]
struct FieldPlan {
    /// Elements sharing each velocity key.
    members: Vec<Vec<u32>>,
    level: Vec<usize>,
    /// First G block of each velocity key.
    base: Vec<usize>,
    total_blocks: usize,
    /// Velocity keys of equal level, grouped for batched transforms.
    batches: Vec<Vec<usize>>,
    fields_used: Vec<usize>,
}

/// Test-side products of one field term.
#[derive(Debug)]
struct PostPlan {
    term: usize,
    field: usize,
    /// Intermediate keys `(x of a trial, velocity key of a test)`, grouped by
    /// velocity key.
    inter_keys: Vec<ElementKey>,
    /// Velocity operators from `f` to the intermediate keys.
    pairs: PairList,
    groups: Vec<PostGroup>,
    batches: Vec<Vec<usize>>,
}

#[derive(Debug)]
struct PostGroup {
    inter: std::ops::Range<usize>,
    tests: Vec<u32>,
    level: usize,
}

#[derive(Debug)]
struct Plan {
    set: Arc<ElementSet>,
    field: FieldPlan,
    pairs: Vec<PairList>,
    post: Vec<PostPlan>,
    /// Field levels needing cell matrices, per field component.
    levels: Vec<Vec<usize>>,
}

/// Grid entries per batched field-product transform.
const FIELD_BATCH: usize = 1 << 15;

/// Operator tables and cached pair lists for one system, degree and level.
#[derive(Debug)]
pub struct VlasovSolver<T: Real> {
    pub system: SystemKind,
    pub domain: PhaseDomain,
    pub basis: Basis1D,
    pub flux: FluxConfig,
    /// Truncation of the field space (`Full` or `Sparse`).
    pub field_space: Truncation,
    pub tools: GridTools<T>,
    x_transport: BlockOp1D<T>,
    x_jump: BlockOp1D<T>,
    v_transport: BlockOp1D<T>,
    v_jump: BlockOp1D<T>,
    v_mult: Vec<Option<BlockOp1D<T>>>,
    maxwell_e: BlockOp1D<T>,
    maxwell_b: BlockOp1D<T>,
    maxwell_jump: BlockOp1D<T>,
    /// `moments[m][p][id * n + i] = int v_{id,i}(y) xi_m(y)^p dy`, p = 0..=2,
    /// for velocity dimension `m` (0-based among velocity dimensions).
    pub moments: Vec<[Vec<f64>; 3]>,
    terms: Vec<TermSpec>,
    plan: Mutex<Option<Arc<Plan>>>,
}

impl<T: Real> VlasovSolver<T> {
    pub fn new(
        system: SystemKind,
        domain: PhaseDomain,
        k: usize,
        max_level: usize,
        flux: FluxConfig,
        field_space: Truncation,
    ) -> Result<Self> {
        if domain.dim() != system.d() {
            return Err(Error::Shape { expected: system.d(), got: domain.dim() });
        }
        if field_space == Truncation::Adaptive {
            return Err(Error::Config("field space must be full or sparse".into()));
        }
        if !(flux.lf_scale >= 0.0) {
            return Err(Error::Config("Lax-Friedrichs scale must be non-negative".into()));
        }
        let basis = Basis1D::new(Basis1DConfig { k, max_level })?;
        let dx = system.dx();
        let d = system.d();
        let tools = GridTools::new(&basis, dx);
        let x_transport = BlockOp1D::build_combination(&basis, Boundary::Periodic, OpCoeffs::transport());
        let x_jump = BlockOp1D::build(&basis, Boundary::Periodic, OpKind::EdgeJump);
        let v_transport = BlockOp1D::build_combination(&basis, Boundary::ZeroExterior, OpCoeffs::transport());
        let v_jump = BlockOp1D::build(&basis, Boundary::ZeroExterior, OpKind::EdgeJump);
        let v_mult = (0..d)
            .map(|m| {
                (m >= dx).then(|| {
                    BlockOp1D::build(
                        &basis,
                        Boundary::ZeroExterior,
                        OpKind::Multiply { lo: domain.lo[m], len: domain.len(m) },
                    )
                })
            })
            .collect();
        // -Vol + flux trace: the E equation uses the B trace and vice versa.
        let (tb, te) = match flux.maxwell {
            MaxwellFlux::Upwind => ((0.5, 0.5), (0.5, 0.5)),
            MaxwellFlux::AlternatingPlusMinus => ((1.0, 0.0), (0.0, 1.0)),
            MaxwellFlux::AlternatingMinusPlus => ((0.0, 1.0), (1.0, 0.0)),
        };
        let curl = |t: (f64, f64)| OpCoeffs { stiffness: -1.0, trace_left: t.0, trace_right: t.1, ..Default::default() };
        let maxwell_e = BlockOp1D::build_combination(&basis, Boundary::Periodic, curl(tb));
        let maxwell_b = BlockOp1D::build_combination(&basis, Boundary::Periodic, curl(te));
        let maxwell_jump = x_jump.clone();
        let moments = (dx..d).map(|m| velocity_moments(&basis, domain.lo[m], domain.len(m))).collect();
        let terms = term_specs(system, &domain);
        Ok(VlasovSolver {
            system,
            domain,
            basis,
            flux,
            field_space,
            tools,
            x_transport,
            x_jump,
            v_transport,
            v_jump,
            v_mult,
            maxwell_e,
            maxwell_b,
            maxwell_jump,
            moments,
            terms,
            plan: Mutex::new(None),
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.basis.k()
    }

    #[inline]
    pub fn max_level(&self) -> usize {
        self.basis.config.max_level
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.basis.n()
    }

    /// Shape of the field grid.
    pub fn field_shape(&self) -> GridShape {
        self.tools.shape(self.max_level())
    }

    fn op(&self, r: OpRef) -> &BlockOp1D<T> {
        match r {
            OpRef::XTransport => &self.x_transport,
            OpRef::XJump => &self.x_jump,
            OpRef::VTransport => &self.v_transport,
            OpRef::VJump => &self.v_jump,
            OpRef::VMult(m) => self.v_mult[m].as_ref().expect("velocity dimension"),
        }
    }

    fn plan_for(&self, set: &Arc<ElementSet>) -> Arc<Plan> {
        let mut guard = self.plan.lock().unwrap();
        if let Some(p) = guard.as_ref() {
            if Arc::ptr_eq(&p.set, set) {
                return p.clone();
            }
        }
        let p = Arc::new(self.build_plan(set.clone()));
        *guard = Some(p.clone());
        p
    }

    fn build_plan(&self, set: Arc<ElementSet>) -> Plan {
        let dx = self.system.dx();
        let d = self.system.d();
        let keys = set.keys();
        let xi_l1 = |k: &ElementKey| (dx..d).map(|m| k.level(m)).sum::<u32>();
        let x_linf = |k: &ElementKey| (0..dx).map(|m| k.level(m)).max().unwrap_or(0) as usize;
        // Group elements by velocity key.
        let mut xi_index: KeyMap<ElementKey, usize> = KeyMap::default();
        let mut xi_keys = Vec::new();
        let mut members: Vec<Vec<u32>> = Vec::new();
        let mut level = Vec::new();
        for (e, key) in keys.iter().enumerate() {
            let b = key.slice(dx..d);
            let slot = *xi_index.entry(b).or_insert_with(|| {
                xi_keys.push(b);
                members.push(Vec::new());
                level.push(0usize);
                xi_keys.len() - 1
            });
            members[slot].push(e as u32);
            level[slot] = level[slot].max(x_linf(key));
        }
        let field_terms: Vec<(usize, &TermSpec)> =
            self.terms.iter().enumerate().filter(|(_, t)| matches!(t.src, Src::Field(_))).collect();
        let term_ops = |t: &TermSpec| -> Vec<(usize, &BlockOp1D<T>)> {
            t.ops.iter().map(|(m, r)| (*m, self.op(*r))).collect()
        };
        // Trial-side grids must also cover the tests they feed.
        for (_, t) in &field_terms {
            let ops = term_ops(t);
            let reach: Vec<Vec<(usize, usize)>> = keys
                .par_iter()
                .map(|key| {
                    let (lx, lt) = (x_linf(key), xi_l1(key));
                    let mut out = Vec::new();
                    reach_keys(&ops, 0, *key, &mut |k2| {
                        if xi_l1(&k2) <= lt {
                            if let Some(&s) = xi_index.get(&k2.slice(dx..d)) {
                                out.push((s, lx));
                            }
                        }
                    });
                    out
                })
                .collect();
            for (s, lx) in reach.into_iter().flatten() {
                level[s] = level[s].max(lx);
            }
        }
        let mut base = Vec::with_capacity(xi_keys.len());
        let mut total = 0usize;
        for &m in &level {
            base.push(total);
            total += 1usize << (m * dx);
        }
        let mut fields_used: Vec<usize> = field_terms
            .iter()
            .map(|(_, t)| match t.src {
                Src::Field(i) => i,
                Src::F => unreachable!(),
            })
            .collect();
        fields_used.sort_unstable();
        fields_used.dedup();
        let ncomp = self.n().pow(self.system.dv() as u32);
        let grid_len = |l: usize| self.tools.shape(l).len(ncomp);
        let batches = level_batches(&level, &grid_len);
        let pairs = self
            .terms
            .iter()
            .map(|t| {
                let ops = term_ops(t);
                match t.src {
                    Src::F => PairList::build(keys, &ops, |_, k2| set.get(k2).map(|i| i as u32)),
                    Src::Field(_) => PairList::build(keys, &ops, |t, k2| {
                        if xi_l1(k2) > xi_l1(&keys[t]) {
                            return None;
                        }
                        let s = *xi_index.get(&k2.slice(dx..d))?;
                        let side = 1usize << level[s];
                        let mut pos = 0usize;
                        for m in 0..dx {
                            pos = pos * side + k2.id(m) as usize;
                        }
                        Some((base[s] + pos) as u32)
                    }),
                }
            })
            .collect();
        let mut post = Vec::new();
        for &(ti, t) in &field_terms {
            let ops = term_ops(t);
            let field = match t.src {
                Src::Field(w) => w,
                Src::F => unreachable!(),
            };
            let mut inter_keys = Vec::new();
            let mut groups = Vec::new();
            for (s, b) in xi_keys.iter().enumerate() {
                let probe = keys[members[s][0] as usize];
                let lb = xi_l1(&probe);
                let mut xs: KeyMap<ElementKey, ()> = KeyMap::default();
                reach_keys(&ops, 0, probe, &mut |k2| {
                    if xi_l1(&k2) > lb {
                        if let Some(&s2) = xi_index.get(&k2.slice(dx..d)) {
                            for &e in &members[s2] {
                                xs.insert(keys[e as usize].slice(0..dx), ());
                            }
                        }
                    }
                });
                if xs.is_empty() {
                    continue;
                }
                let mut xs: Vec<ElementKey> = xs.into_keys().collect();
                xs.sort_unstable_by(|a, b| a.ids().cmp(b.ids()));
                let start = inter_keys.len();
                let mut lv = level[s];
                for x in &xs {
                    lv = lv.max((0..dx).map(|m| x.level(m)).max().unwrap_or(0) as usize);
                    inter_keys.push(x.concat(b));
                }
                groups.push(PostGroup { inter: start..inter_keys.len(), tests: members[s].clone(), level: lv });
            }
            if groups.is_empty() {
                continue;
            }
            let pairs = PairList::build(&inter_keys, &ops, |t, k2| {
                if xi_l1(k2) > xi_l1(&inter_keys[t]) {
                    set.get(k2).map(|i| i as u32)
                } else {
                    None
                }
            });
            let lv: Vec<usize> = groups.iter().map(|g| g.level).collect();
            post.push(PostPlan { term: ti, field, inter_keys, pairs, groups, batches: level_batches(&lv, &grid_len) });
        }
        let nf = self.system.field_names().len();
        let mut levels: Vec<Vec<usize>> = vec![Vec::new(); nf];
        for &w in &fields_used {
            levels[w].extend(level.iter().copied());
        }
        for pp in &post {
            levels[pp.field].extend(pp.groups.iter().map(|g| g.level));
        }
        for l in levels.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        Plan {
            set,
            field: FieldPlan { members, level, base, total_blocks: total, batches, fields_used },
            pairs,
            post,
            levels,
        }
    }

    /// Number of stored pair entries per term for the given set (diagnostic).
    pub fn pair_counts(&self, set: &Arc<ElementSet>) -> Vec<usize> {
        let plan = self.plan_for(set);
        plan.pairs.iter().chain(plan.post.iter().map(|p| &p.pairs)).map(|p| p.len()).collect()
    }

    /// Per-cell Legendre coefficients of a field component at level `N`,
    /// scaled to physical values on the unit x-cube.
    pub fn field_cells(&self, comp: &[T]) -> Result<Vec<T>> {
        let shape = self.field_shape();
        if comp.len() != shape.len(1) {
            return Err(Error::Shape { expected: shape.len(1), got: comp.len() });
        }
        let mut cells = comp.to_vec();
        fullgrid::inverse(&self.tools.two_scale, shape, 1, &mut cells)?;
        let s = T::lit(1.0 / self.domain.volume_range(0..self.system.dx()).sqrt());
        cells.iter_mut().for_each(|v| *v *= s);
        Ok(cells)
    }

    /// Velocity moments of `f` against `prod_m xi_m^{p_m}`, as hierarchical
    /// coefficients on the full x-grid (orthonormal on the x-box).
    pub fn moment(&self, f: &DistributionField<T>, powers: &[usize]) -> Vec<T> {
        let dx = self.system.dx();
        let dv = self.system.dv();
        let n = self.n();
        let shape = self.field_shape();
        let nx = n.pow(dx as u32);
        let nv = n.pow(dv as u32);
        let mut out = vec![T::zero(); shape.len(1)];
        let scale = self.domain.volume_range(dx..dx + dv).sqrt();
        let mut w = vec![0.0; nv];
        let mut pos = vec![0usize; dx];
        for (e, key) in f.set.keys().iter().enumerate() {
            // Velocity weight of this element's block; skip when zero.
            let mut any = false;
            for (r, wr) in w.iter_mut().enumerate() {
                let mut v = scale;
                let mut rr = r;
                for m in (0..dv).rev() {
                    let i = rr % n;
                    rr /= n;
                    v *= self.moments[m][powers[m]][key.id(dx + m) as usize * n + i];
                }
                *wr = v;
                any |= v != 0.0;
            }
            if !any {
                continue;
            }
            let blk = f.block(e);
            for ix in 0..nx {
                let mut s = 0.0;
                for (r, wr) in w.iter().enumerate() {
                    s += blk[ix * nv + r].as_f64() * wr;
                }
                let mut rr = ix;
                for m in (0..dx).rev() {
                    pos[m] = key.id(m) as usize * n + rr % n;
                    rr /= n;
                }
                out[shape.offset(&pos, 1)] += T::lit(s);
            }
        }
        out
    }

    /// Current density `J_m = int f xi_m dxi` for each velocity component.
    pub fn compute_current(&self, f: &DistributionField<T>) -> Vec<Vec<T>> {
        let dv = self.system.dv();
        let mut j: Vec<Vec<T>> = (0..dv)
            .map(|m| {
                let mut p = vec![0; dv];
                p[m] = 1;
                self.moment(f, &p)
            })
            .collect();
        if let Some(mask) = self.field_mask() {
            for c in j.iter_mut() {
                apply_mask(c, &mask);
            }
        }
        j
    }

    /// Mask of retained field coefficients for a sparse field space.
    pub fn field_mask(&self) -> Option<Vec<bool>> {
        if self.field_space != Truncation::Sparse || self.system.dx() == 1 {
            return None;
        }
        let shape = self.field_shape();
        let n = self.n();
        let side = shape.side();
        let dx = self.system.dx();
        let nmax = self.max_level() as u32;
        Some(
            (0..shape.len(1))
                .map(|o| {
                    let mut rem = o;
                    let mut l1 = 0;
                    for _ in 0..dx {
                        l1 += level_of(((rem % side) / n) as u32);
                        rem /= side;
                    }
                    l1 <= nmax
                })
                .collect(),
        )
    }

    /// Sample values of every field component at Gauss points and cell ends.
    fn field_samples(&self, em: &EmField<T>) -> Result<Vec<Vec<f64>>> {
        let mut t = self.basis.nodes.clone();
        t.insert(0, 0.0);
        t.push(1.0);
        em.comps
            .iter()
            .map(|c| Ok(fullgrid::sample_cells(self.field_shape(), &self.field_cells(c)?, &t)))
            .collect()
    }

    /// Speed bounds from the current fields and the velocity box.
    pub fn alpha_bounds(&self, em: &EmField<T>) -> Result<AlphaBounds> {
        let dx = self.system.dx();
        let d = self.system.d();
        let vmax = |m: usize| self.domain.lo[m].abs().max(self.domain.hi[m].abs());
        let mut speeds = vec![0.0; d];
        for (m, s) in speeds.iter_mut().enumerate().take(dx) {
            *s = vmax(dx + self.system.velocity_of_x(m));
        }
        let samples = self.field_samples(em)?;
        match self.system {
            SystemKind::Maxwell1D2V => {
                let (e1, e2, b3) = (&samples[0], &samples[1], &samples[2]);
                let (v1, v2) = (vmax(1), vmax(2));
                for p in 0..e1.len() {
                    speeds[1] = speeds[1].max(e1[p].abs() + v2 * b3[p].abs());
                    speeds[2] = speeds[2].max(e2[p].abs() + v1 * b3[p].abs());
                }
            }
            SystemKind::Ampere2D2V => {
                for m in 0..2 {
                    speeds[dx + m] = samples[m].iter().fold(0.0f64, |a, v| a.max(v.abs()));
                }
            }
        }
        if speeds.iter().any(|s| !s.is_finite()) {
            return Err(Error::Blowup { t: f64::NAN, what: "non-finite field values".into() });
        }
        let alpha1 = speeds[..dx].iter().cloned().fold(0.0, f64::max);
        let alpha2 = speeds[dx..].iter().cloned().fold(0.0, f64::max);
        Ok(AlphaBounds { alpha1, alpha2, speeds })
    }

    /// Cell matrices of every field on the levels the plan needs.
    fn cell_matrices(&self, plan: &Plan, em: &EmField<T>) -> Result<Vec<Vec<Vec<T>>>> {
        let table = &self.tools.products;
        let mut mats = vec![Vec::new(); em.comps.len()];
        for (w, lv) in plan.levels.iter().enumerate() {
            if lv.is_empty() {
                continue;
            }
            let cells = self.field_cells(&em.comps[w])?;
            let pyr = MomentPyramid::new(table, self.field_shape(), &cells);
            let mut per_level = vec![Vec::new(); self.max_level() + 1];
            let built: Vec<(usize, Vec<T>)> = lv.par_iter().map(|&l| (l, pyr.level_matrices(table, l))).collect();
            for (l, m) in built {
                per_level[l] = m;
            }
            mats[w] = per_level;
        }
        Ok(mats)
    }

    /// Offsets (in units of `ncomp`) of the `n^dx` local entries of x-key
    /// `key` in a grid of `shape`.
    fn x_offsets(&self, shape: GridShape, key: &ElementKey, out: &mut [usize]) {
        let dx = self.system.dx();
        let n = shape.n;
        let mut pos = [0usize; 2];
        for (ix, o) in out.iter_mut().enumerate() {
            let mut rr = ix;
            for m in (0..dx).rev() {
                pos[m] = key.id(m) as usize * n + rr % n;
                rr /= n;
            }
            *o = shape.offset(&pos[..dx], 1);
        }
    }

    /// Multiplies `nb` components of per-cell data by each field in `mats`
    /// and transforms back; output has `mats.len() * nb` components.
    fn multiply_grid(&self, shape: GridShape, nb: usize, grid: &mut [T], mats: &[&[T]]) -> Vec<T> {
        fullgrid::inverse(&self.tools.two_scale, shape, nb, grid).expect("grid shape");
        let nw = mats.len();
        let mut prod = vec![T::zero(); grid.len() * nw];
        for (iw, m) in mats.iter().enumerate() {
            fullgrid::apply_cell_matrices(shape, nb, m, grid, &mut prod, nw * nb, iw * nb);
        }
        fullgrid::forward(&self.tools.two_scale, shape, nw * nb, &mut prod).expect("grid shape");
        prod
    }

    /// Trial-side products `P(W f_b)` for every velocity key, laid out as
    /// G blocks ordered by key and x position.
    fn field_products(&self, plan: &Plan, f: &DistributionField<T>, mats: &[Vec<Vec<T>>]) -> Vec<Vec<T>> {
        let fp = &plan.field;
        let nf = mats.len();
        if fp.fields_used.is_empty() {
            return vec![Vec::new(); nf];
        }
        let dx = self.system.dx();
        let n = self.n();
        let nx = n.pow(dx as u32);
        let ncomp = n.pow(self.system.dv() as u32);
        let bs = nx * ncomp;
        let nw = fp.fields_used.len();
        let chunks: Vec<Vec<T>> = fp
            .batches
            .par_iter()
            .map(|batch| {
                let level = fp.level[batch[0]];
                let shape = GridShape { dx, n, level };
                let nb = batch.len() * ncomp;
                let mut grid = vec![T::zero(); shape.len(nb)];
                let mut offs = vec![0usize; nx];
                for (kb, &s) in batch.iter().enumerate() {
                    for &e in &fp.members[s] {
                        self.x_offsets(shape, &f.set.keys()[e as usize], &mut offs);
                        let blk = f.block(e as usize);
                        for (ix, &o) in offs.iter().enumerate() {
                            let o = o * nb + kb * ncomp;
                            grid[o..o + ncomp].copy_from_slice(&blk[ix * ncomp..(ix + 1) * ncomp]);
                        }
                    }
                }
                let ms: Vec<&[T]> = fp.fields_used.iter().map(|&w| mats[w][level].as_slice()).collect();
                let prod = self.multiply_grid(shape, nb, &mut grid, &ms);
                // Gather into element-block layout: field, key, x position.
                let cpd = 1u32 << level;
                let npos = (cpd as usize).pow(dx as u32);
                let mut g = vec![T::zero(); nw * batch.len() * npos * bs];
                let mut ids = [0u32; 2];
                for p in 0..npos {
                    let mut rr = p as u32;
                    for m in (0..dx).rev() {
                        ids[m] = rr % cpd;
                        rr /= cpd;
                    }
                    self.x_offsets(shape, &ElementKey::from_ids(&ids[..dx]), &mut offs);
                    for (ix, &o) in offs.iter().enumerate() {
                        for iw in 0..nw {
                            for kb in 0..batch.len() {
                                let src = o * nw * nb + iw * nb + kb * ncomp;
                                let dst = ((iw * batch.len() + kb) * npos + p) * bs + ix * ncomp;
                                g[dst..dst + ncomp].copy_from_slice(&prod[src..src + ncomp]);
                            }
                        }
                    }
                }
                g
            })
            .collect();
        let mut gbuf: Vec<Vec<T>> = vec![Vec::new(); nf];
        for &w in &fp.fields_used {
            gbuf[w] = vec![T::zero(); fp.total_blocks * bs];
        }
        for (batch, g) in fp.batches.iter().zip(chunks.iter()) {
            let npos = 1usize << (fp.level[batch[0]] * dx);
            for (iw, &w) in fp.fields_used.iter().enumerate() {
                for (kb, &s) in batch.iter().enumerate() {
                    let src = (iw * batch.len() + kb) * npos * bs;
                    let dst = fp.base[s] * bs;
                    gbuf[w][dst..dst + npos * bs].copy_from_slice(&g[src..src + npos * bs]);
                }
            }
        }
        gbuf
    }

    /// Adds `scale * P(W h)` of one test-side term to `out`.
    fn post_products(&self, pp: &PostPlan, f: &DistributionField<T>, mats: &[Vec<Vec<T>>], scale: T, out: &mut [T]) {
        let d = self.system.d();
        let dx = self.system.dx();
        let n = self.n();
        let nx = n.pow(dx as u32);
        let ncomp = n.pow(self.system.dv() as u32);
        let bs = nx * ncomp;
        let spec = &self.terms[pp.term];
        let mut h = vec![T::zero(); pp.inter_keys.len() * bs];
        let term = Term { pairs: &pp.pairs, ops: spec.ops.iter().map(|(_, r)| self.op(*r)).collect(), scale: T::one(), src: &f.coeffs };
        apply_terms(&[term], n, d, &mut h);
        let results: Vec<Vec<(u32, Vec<T>)>> = pp
            .batches
            .par_iter()
            .map(|batch| {
                let level = pp.groups[batch[0]].level;
                let shape = GridShape { dx, n, level };
                let nb = batch.len() * ncomp;
                let mut grid = vec![T::zero(); shape.len(nb)];
                let mut offs = vec![0usize; nx];
                for (kb, &gi) in batch.iter().enumerate() {
                    for i in pp.groups[gi].inter.clone() {
                        self.x_offsets(shape, &pp.inter_keys[i], &mut offs);
                        let blk = &h[i * bs..(i + 1) * bs];
                        for (ix, &o) in offs.iter().enumerate() {
                            let o = o * nb + kb * ncomp;
                            grid[o..o + ncomp].copy_from_slice(&blk[ix * ncomp..(ix + 1) * ncomp]);
                        }
                    }
                }
                let prod = self.multiply_grid(shape, nb, &mut grid, &[mats[pp.field][level].as_slice()]);
                let mut res = Vec::new();
                for (kb, &gi) in batch.iter().enumerate() {
                    for &e in &pp.groups[gi].tests {
                        self.x_offsets(shape, &f.set.keys()[e as usize], &mut offs);
                        let mut blk = vec![T::zero(); bs];
                        for (ix, &o) in offs.iter().enumerate() {
                            let o = o * nb + kb * ncomp;
                            blk[ix * ncomp..(ix + 1) * ncomp].copy_from_slice(&prod[o..o + ncomp]);
                        }
                        res.push((e, blk));
                    }
                }
                res
            })
            .collect();
        for (e, blk) in results.into_iter().flatten() {
            let dst = &mut out[e as usize * bs..(e as usize + 1) * bs];
            for (a, b) in dst.iter_mut().zip(blk) {
                *a += scale * b;
            }
        }
    }

    /// Time derivative of the distribution coefficients with per-dimension
    /// Lax-Friedrichs constants `alpha` (see [`AlphaBounds::speeds`]).
    pub fn vlasov_rhs(&self, f: &DistributionField<T>, em: &EmField<T>, alpha: &[f64]) -> Result<Vec<T>> {
        let d = self.system.d();
        if f.spec.d != d || f.spec.k != self.k() {
            return Err(Error::Shape { expected: d, got: f.spec.d });
        }
        if alpha.len() != d {
            return Err(Error::Shape { expected: d, got: alpha.len() });
        }
        if em.comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { t: f64::NAN, what: "non-finite field coefficients".into() });
        }
        let plan = self.plan_for(&f.set);
        let mats = self.cell_matrices(&plan, em)?;
        let g = self.field_products(&plan, f, &mats);
        let terms: Vec<Term<'_, T>> = self
            .terms
            .iter()
            .zip(plan.pairs.iter())
            .filter_map(|(spec, pairs)| {
                let mut coef = spec.coef;
                if let Some(m) = spec.alpha_dim {
                    coef *= alpha[m] * self.flux.lf_scale;
                }
                if coef == 0.0 {
                    return None;
                }
                let src: &[T] = match spec.src {
                    Src::F => &f.coeffs,
                    Src::Field(w) => &g[w],
                };
                Some(Term {
                    pairs,
                    ops: spec.ops.iter().map(|(_, r)| self.op(*r)).collect(),
                    scale: T::lit(coef),
                    src,
                })
            })
            .collect();
        let mut out = vec![T::zero(); f.coeffs.len()];
        apply_terms(&terms, self.n(), d, &mut out);
        for pp in &plan.post {
            self.post_products(pp, f, &mats, T::lit(self.terms[pp.term].coef), &mut out);
        }
        Ok(out)
    }

    /// Time derivative of the fields for the current `j` (one array per
    /// velocity component).
    pub fn maxwell_rhs(&self, em: &EmField<T>, j: &[Vec<T>]) -> Result<EmField<T>> {
        let mut out = EmField::zeros(self.system, em.k, em.level);
        match self.system {
            SystemKind::Maxwell1D2V => {
                let l = T::lit(1.0 / self.domain.len(0));
                let (e1, b3) = (&em.comps[0], &em.comps[2]);
                let mut de1 = vec![T::zero(); e1.len()];
                let mut db3 = vec![T::zero(); e1.len()];
                self.maxwell_e.apply(b3, &mut de1);
                self.maxwell_b.apply(e1, &mut db3);
                if self.flux.maxwell == MaxwellFlux::Upwind {
                    let mut je = vec![T::zero(); e1.len()];
                    let mut jb = vec![T::zero(); e1.len()];
                    self.maxwell_jump.apply(e1, &mut je);
                    self.maxwell_jump.apply(b3, &mut jb);
                    let h = T::lit(0.5);
                    de1.iter_mut().zip(je).for_each(|(a, b)| *a -= h * b);
                    db3.iter_mut().zip(jb).for_each(|(a, b)| *a -= h * b);
                }
                for i in 0..e1.len() {
                    out.comps[0][i] = l * de1[i] - j[0][i];
                    out.comps[1][i] = -j[1][i];
                    out.comps[2][i] = l * db3[i];
                }
            }
            SystemKind::Ampere2D2V => {
                for (o, jj) in out.comps.iter_mut().zip(j.iter()) {
                    o.iter_mut().zip(jj.iter()).for_each(|(a, b)| *a = -*b);
                }
            }
        }
        if let Some(mask) = self.field_mask() {
            for c in out.comps.iter_mut() {
                apply_mask(c, &mask);
            }
        }
        Ok(out)
    }

    /// Joint right-hand side of `(f, E, B)`.
    pub fn rhs(&self, state: &VmState<T>, alpha: &[f64]) -> Result<VmState<T>> {
        let df = self.vlasov_rhs(&state.f, &state.em, alpha)?;
        let j = self.compute_current(&state.f);
        let dem = self.maxwell_rhs(&state.em, &j)?;
        let out = VmState {
            t: state.t,
            f: DistributionField { coeffs: df, ..state.f.clone_shape() },
            em: dem,
        };
        if !out.is_finite() {
            return Err(Error::Blowup { t: state.t, what: "non-finite right-hand side".into() });
        }
        Ok(out)
    }
}

impl<T: Real> DistributionField<T> {
    /// Same space, empty coefficient vector.
    pub fn clone_shape(&self) -> Self {
        DistributionField { spec: self.spec, domain: self.domain.clone(), set: self.set.clone(), coeffs: Vec::new() }
    }
}

fn apply_mask<T: Real>(c: &mut [T], mask: &[bool]) {
    for (v, &m) in c.iter_mut().zip(mask.iter()) {
        if !m {
            *v = T::zero();
        }
    }
}

/// Velocity-key slots grouped by level (ascending) into batches of at most
/// `FIELD_BATCH` grid entries (at least one key each). `per_key(l)` is the
/// number of grid entries of one key at level `l`.
fn level_batches(level: &[usize], per_key: impl Fn(usize) -> usize) -> Vec<Vec<usize>> {
    let mut lv: Vec<usize> = level.to_vec();
    lv.sort_unstable();
    lv.dedup();
    let mut batches = Vec::new();
    for &l in &lv {
        let cap = (FIELD_BATCH / per_key(l).max(1)).max(1);
        let slots: Vec<usize> = (0..level.len()).filter(|&s| level[s] == l).collect();
        batches.extend(slots.chunks(cap).map(|c| c.to_vec()));
    }
    batches
}

fn reach_keys<T: Real>(ops: &[(usize, &BlockOp1D<T>)], depth: usize, key: ElementKey, f: &mut impl FnMut(ElementKey)) {
    if depth == ops.len() {
        f(key);
        return;
    }
    let (m, op) = ops[depth];
    for &(q, _) in &op.rows[key.id(m) as usize] {
        reach_keys(ops, depth + 1, key.with_id(m, q), f);
    }
}

fn term_specs(system: SystemKind, domain: &PhaseDomain) -> Vec<TermSpec> {
    use OpRef::*;
    let t = |ops: Vec<(usize, OpRef)>, coef: f64, alpha_dim: Option<usize>, src: Src| TermSpec { ops, coef, alpha_dim, src };
    let mut v = match system {
        SystemKind::Maxwell1D2V => vec![
            t(vec![(0, XTransport), (2, VMult(2))], 1.0, None, Src::F),
            t(vec![(0, XJump)], -0.5, Some(0), Src::F),
            t(vec![(1, VTransport)], 1.0, None, Src::Field(0)),
            t(vec![(1, VTransport), (2, VMult(2))], 1.0, None, Src::Field(2)),
            t(vec![(1, VJump)], -0.5, Some(1), Src::F),
            t(vec![(2, VTransport)], 1.0, None, Src::Field(1)),
            t(vec![(1, VMult(1)), (2, VTransport)], -1.0, None, Src::Field(2)),
            t(vec![(2, VJump)], -0.5, Some(2), Src::F),
        ],
        SystemKind::Ampere2D2V => vec![
            t(vec![(0, XTransport), (2, VMult(2))], 1.0, None, Src::F),
            t(vec![(0, XJump)], -0.5, Some(0), Src::F),
            t(vec![(1, XTransport), (3, VMult(3))], 1.0, None, Src::F),
            t(vec![(1, XJump)], -0.5, Some(1), Src::F),
            t(vec![(2, VTransport)], 1.0, None, Src::Field(0)),
            t(vec![(2, VJump)], -0.5, Some(2), Src::F),
            t(vec![(3, VTransport)], 1.0, None, Src::Field(1)),
            t(vec![(3, VJump)], -0.5, Some(3), Src::F),
        ],
    };
    // Each term is a derivative in the direction of its transport or jump
    // factor; fold in 1/L of that direction.
    for spec in v.iter_mut() {
        spec.ops.sort_by_key(|o| o.0);
        let dir = spec
            .ops
            .iter()
            .find(|(_, r)| matches!(r, XTransport | XJump | VTransport | VJump))
            .map(|o| o.0)
            .expect("directional factor");
        spec.coef /= domain.len(dir);
    }
    v
}

/// 1D velocity moments `int v_{id,i}(y) (lo + len y)^p dy` for `p = 0, 1, 2`.
fn velocity_moments(basis: &Basis1D, lo: f64, len: f64) -> [Vec<f64>; 3] {
    let n = basis.n();
    let ids = basis.num_ids();
    let mut out = [vec![0.0; ids * n], vec![0.0; ids * n], vec![0.0; ids * n]];
    let mut vals = vec![0.0; n];
    let mut ders = vec![0.0; n];
    for id in 0..ids as u32 {
        let (a, b) = support(id);
        let pieces: Vec<(f64, f64)> =
            if level_of(id) == 0 { vec![(a, b)] } else { vec![(a, 0.5 * (a + b)), (0.5 * (a + b), b)] };
        for (pa, pb) in pieces {
            for (x, w) in basis.nodes.iter().zip(basis.weights.iter()) {
                let y = pa + (pb - pa) * x;
                let wt = w * (pb - pa);
                basis.interior(id, y, &mut vals, &mut ders);
                let xi = lo + len * y;
                for i in 0..n {
                    let base = wt * vals[i];
                    out[0][id as usize * n + i] += base;
                    out[1][id as usize * n + i] += base * xi;
                    out[2][id as usize * n + i] += base * xi * xi;
                }
            }
        }
    }
    // Wavelets are orthogonal to polynomials of degree <= k.
    for (p, m) in out.iter_mut().enumerate() {
        if p <= basis.k() {
            m[n..].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

impl<T: Real> DistributionField<T> {
    /// Point value at unit-cube coordinates `y` with one-sided limits per
    /// dimension (`Side::Left` is the limit from below).
    pub fn eval_unit(&self, basis: &Basis1D, y: &[f64], sides: &[crate::basis1d::Side]) -> f64 {
        let d = self.spec.d;
        let n = basis.n();
        let mut vals = vec![[0.0f64; 4]; d];
        let mut s = 0.0;
        for (e, key) in self.set.keys().iter().enumerate() {
            let mut zero = false;
            for m in 0..d {
                basis.trace(key.id(m), y[m], sides[m], &mut vals[m]);
                if vals[m][..n].iter().all(|v| *v == 0.0) {
                    zero = true;
                    break;
                }
            }
            if zero {
                continue;
            }
            for (r, c) in self.block(e).iter().enumerate() {
                let mut v = c.as_f64();
                let mut rr = r;
                for m in (0..d).rev() {
                    v *= vals[m][rr % n];
                    rr /= n;
                }
                s += v;
            }
        }
        s / self.domain.volume().sqrt()
    }
}

