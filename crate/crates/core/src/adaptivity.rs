//! Adaptive multiresolution: projection of initial data and the
//! predict / refine / evolve / coarsen cycle.
//!
//! The refinement and coarsening tests compare the L2 norm of an element's
//! coefficient block, in the physical-orthonormal basis, against the
//! thresholds.

use std::collections::HashSet;
use std::hash::BuildHasherDefault;
use std::sync::Arc;

use rayon::prelude::*;

use crate::basis1d::Basis1D;
use crate::error::{Error, Result};
use crate::hiergrid::{ElementKey, ElementSet, KeyHasher, KeyMap, SpaceSpec, Truncation};
use crate::operators::{DistributionField, PhaseDomain, VlasovSolver, VmState};
use crate::problems::{project_element, Separable, SeparableProjector, PROJECTION_POINTS};
use crate::scalar::Real;
use crate::timeint::{self, Scheme};

type KeySet = HashSet<ElementKey, BuildHasherDefault<KeyHasher>>;

/// Thresholds of the adaptive scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    pub n: u32,
    pub k: usize,
    /// Refinement threshold.
    pub eps: f64,
    /// Coarsening threshold.
    pub eta: f64,
}

impl AdaptConfig {
    /// `eta` defaults to `eps / 10`.
    pub fn new(n: u32, k: usize, eps: f64) -> Result<Self> {
        let c = AdaptConfig { n, k, eps, eta: eps / 10.0 };
        c.validate()?;
        Ok(c)
    }

    pub fn with_eta(self, eta: f64) -> Result<Self> {
        let c = AdaptConfig { eta, ..self };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta < self.eps) {
            return Err(Error::Config("eta must satisfy 0 < eta < eps".into()));
        }
        Ok(())
    }
}

/// Active table `H` with per-element child counts, and leaf table `L`.
#[derive(Clone, Debug, Default)]
pub struct HashTables {
    d: usize,
    max_level: u32,
    active: KeyMap<ElementKey, u32>,
    leaves: KeySet,
}

impl HashTables {
    /// Only the level-0 element.
    pub fn root(d: usize, max_level: u32) -> Self {
        let mut t = HashTables { d, max_level, ..Default::default() };
        t.insert(ElementKey::root(d));
        t
    }

    /// Tables holding `keys` and everything needed to close them under parents.
    pub fn from_keys(d: usize, max_level: u32, keys: &[ElementKey]) -> Result<Self> {
        let mut t = HashTables::root(d, max_level);
        let mut sorted = keys.to_vec();
        sorted.sort();
        for k in sorted {
            if k.dim() != d || k.levels().iter().any(|&l| l > max_level) {
                return Err(Error::Precondition(format!("key {:?} outside the space", k.ids())));
            }
            t.insert(k);
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, key: &ElementKey) -> bool {
        self.active.contains_key(key)
    }

    pub fn is_leaf(&self, key: &ElementKey) -> bool {
        self.leaves.contains(key)
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn children_count(&self, key: &ElementKey) -> Option<u32> {
        self.active.get(key).copied()
    }

    pub fn keys_sorted(&self) -> Vec<ElementKey> {
        let mut v: Vec<ElementKey> = self.active.keys().copied().collect();
        v.sort();
        v
    }

    pub fn leaves_sorted(&self) -> Vec<ElementKey> {
        let mut v: Vec<ElementKey> = self.leaves.iter().copied().collect();
        v.sort();
        v
    }

    pub fn element_set(&self) -> Arc<ElementSet> {
        Arc::new(ElementSet::from_keys(self.keys_sorted()))
    }

    /// Adds `key` after its missing ancestors; returns the new keys in
    /// insertion order.
    pub fn insert(&mut self, key: ElementKey) -> Vec<ElementKey> {
        let mut added = Vec::new();
        self.insert_into(key, &mut added);
        added
    }

    fn insert_into(&mut self, key: ElementKey, added: &mut Vec<ElementKey>) {
        if self.active.contains_key(&key) {
            return;
        }
        let parents = key.parents();
        for p in &parents {
            self.insert_into(*p, added);
        }
        for p in &parents {
            *self.active.get_mut(p).expect("parent inserted") += 1;
            self.leaves.remove(p);
        }
        self.active.insert(key, 0);
        self.leaves.insert(key);
        added.push(key);
    }

    /// Removes a leaf other than the root. Parents left without children
    /// become leaves.
    pub fn remove_leaf(&mut self, key: &ElementKey) -> bool {
        if !self.leaves.contains(key) || *key == ElementKey::root(self.d) {
            return false;
        }
        self.leaves.remove(key);
        self.active.remove(key);
        for p in key.parents() {
            let c = self.active.get_mut(&p).expect("closed table");
            *c -= 1;
            if *c == 0 {
                self.leaves.insert(p);
            }
        }
        true
    }

    /// Checks closure, child counts and the leaf table.
    pub fn audit(&self) -> Result<()> {
        let mut counts: KeyMap<ElementKey, u32> = self.active.keys().map(|k| (*k, 0)).collect();
        for k in self.active.keys() {
            for p in k.parents() {
                match counts.get_mut(&p) {
                    Some(c) => *c += 1,
                    None => return Err(Error::Precondition(format!("hole: parent of {:?} missing", k.ids()))),
                }
            }
        }
        for (k, c) in &counts {
            if self.active[k] != *c {
                return Err(Error::Precondition(format!("child count of {:?} is {}, expected {c}", k.ids(), self.active[k])));
            }
            if (*c == 0) != self.leaves.contains(k) {
                return Err(Error::Precondition(format!("leaf table wrong at {:?}", k.ids())));
            }
        }
        if self.leaves.iter().any(|k| !self.active.contains_key(k)) {
            return Err(Error::Precondition("leaf outside the active table".into()));
        }
        Ok(())
    }
}

fn block_norm<T: Real>(block: &[T]) -> f64 {
    block.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}

fn adaptive_spec(d: usize, cfg: &AdaptConfig) -> SpaceSpec {
    SpaceSpec { d, k: cfg.k, n: cfg.n, truncation: Truncation::Adaptive }
}

/// Coefficient block of one element (physical-orthonormal basis).
pub type BlockSource<'a> = dyn Fn(&ElementKey, &mut [f64]) -> Result<()> + Sync + 'a;

/// Adaptive multiresolution projection starting from the level-0 element.
///
/// Every pass visits the elements added by the previous pass; one whose
/// block norm exceeds `eps` gets all its children (with parent closure),
/// whose blocks are then computed from `source`. Each element is tested once
/// even if a sibling's closure gave it children in the same pass, so the
/// result does not depend on the visiting order.
pub fn adaptive_project<T: Real>(
    cfg: &AdaptConfig,
    domain: &PhaseDomain,
    source: &BlockSource,
) -> Result<(HashTables, DistributionField<T>)> {
    cfg.validate()?;
    let d = domain.dim();
    let spec = adaptive_spec(d, cfg);
    let bs = spec.block_size();
    let mut tables = HashTables::root(d, cfg.n);
    let mut blocks: KeyMap<ElementKey, Vec<f64>> = KeyMap::default();
    let compute = |keys: &[ElementKey]| -> Result<Vec<Vec<f64>>> {
        keys.par_iter()
            .map(|k| {
                let mut b = vec![0.0; bs];
                source(k, &mut b)?;
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Input(format!("non-finite projection at {:?}", k.ids())));
                }
                Ok(b)
            })
            .collect()
    };
    let mut frontier = vec![ElementKey::root(d)];
    blocks.insert(frontier[0], compute(&frontier)?.pop().expect("root block"));
    while !frontier.is_empty() {
        let mut added = Vec::new();
        for key in &frontier {
            if block_norm(&blocks[key]) <= cfg.eps {
                continue;
            }
            for child in key.children(cfg.n) {
                added.extend(tables.insert(child));
            }
        }
        let new_blocks = compute(&added)?;
        for (k, b) in added.iter().zip(new_blocks) {
            blocks.insert(*k, b);
        }
        added.sort();
        frontier = added;
    }
    let set = tables.element_set();
    let mut f = DistributionField::zeros(spec, domain.clone(), set.clone());
    for (i, key) in set.keys().iter().enumerate() {
        for (o, v) in f.block_mut(i).iter_mut().zip(&blocks[key]) {
            *o = T::lit(*v);
        }
    }
    Ok((tables, f))
}

/// [`adaptive_project`] of a separable function.
pub fn adaptive_project_separable<T: Real>(
    cfg: &AdaptConfig,
    basis: &Basis1D,
    sep: &Separable,
    domain: &PhaseDomain,
) -> Result<(HashTables, DistributionField<T>)> {
    let proj = SeparableProjector::new(basis, sep, domain)?;
    adaptive_project(cfg, domain, &|k: &ElementKey, out: &mut [f64]| {
        proj.block(k, out);
        Ok(())
    })
}

/// [`adaptive_project`] of a pointwise function (Gauss quadrature per element).
pub fn adaptive_project_pointwise<T: Real>(
    cfg: &AdaptConfig,
    basis: &Basis1D,
    func: &(dyn Fn(&[f64]) -> f64 + Sync),
    domain: &PhaseDomain,
) -> Result<(HashTables, DistributionField<T>)> {
    adaptive_project(cfg, domain, &|k: &ElementKey, out: &mut [f64]| {
        out.copy_from_slice(&project_element(basis, func, k, domain, PROJECTION_POINTS)?);
        Ok(())
    })
}

/// One forward-Euler step of the Vlasov equation on the current space with
/// the fields frozen.
pub fn predict<T: Real>(solver: &VlasovSolver<T>, state: &VmState<T>, dt: f64, alpha: &[f64]) -> Result<DistributionField<T>> {
    let r = solver.vlasov_rhs(&state.f, &state.em, alpha)?;
    let mut f = state.f.clone();
    let dt = T::lit(dt);
    for (c, v) in f.coeffs.iter_mut().zip(&r) {
        *c += dt * *v;
    }
    if f.coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Blowup { t: state.t + dt.as_f64(), what: "non-finite prediction".into() });
    }
    Ok(f)
}

/// Adds the children of every element of `f_pred` whose block norm exceeds
/// `eps`. Returns the number of added elements.
pub fn refine<T: Real>(tables: &mut HashTables, f_pred: &DistributionField<T>, eps: f64) -> usize {
    let before = tables.len();
    for (e, key) in f_pred.set.keys().iter().enumerate() {
        if tables.contains(key) && block_norm(f_pred.block(e)) > eps {
            for child in key.children(tables.max_level) {
                tables.insert(child);
            }
        }
    }
    tables.len() - before
}

/// Removes leaves with block norm below `eta` until none qualifies, and
/// returns `f` on the reduced table. Removed coefficients are dropped.
pub fn coarsen<T: Real>(tables: &mut HashTables, f: &DistributionField<T>, eta: f64) -> (DistributionField<T>, usize) {
    let mut removed = 0;
    let mut candidates = tables.leaves_sorted();
    while !candidates.is_empty() {
        let mut next = Vec::new();
        for key in &candidates {
            if !tables.is_leaf(key) {
                continue;
            }
            let small = match f.set.get(key) {
                Some(e) => block_norm(f.block(e)) < eta,
                None => true,
            };
            if small && tables.remove_leaf(key) {
                removed += 1;
                next.extend(key.parents().into_iter().filter(|p| tables.is_leaf(p)));
            }
        }
        next.sort();
        next.dedup();
        candidates = next;
    }
    let out = if removed == 0 && f.set.len() == tables.len() { f.clone() } else { f.remapped(tables.element_set()) };
    (out, removed)
}

/// Outcome of one adaptive step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepStats {
    pub refined: usize,
    pub coarsened: usize,
}

/// Predict, refine, evolve and coarsen over one step of size `dt`.
pub fn adaptive_step<T: Real>(
    solver: &VlasovSolver<T>,
    cfg: &AdaptConfig,
    tables: &mut HashTables,
    state: &VmState<T>,
    scheme: Scheme,
    dt: f64,
    alpha: &[f64],
) -> Result<(VmState<T>, StepStats)> {
    let pred = predict(solver, state, dt, alpha)?;
    let refined = refine(tables, &pred, cfg.eps);
    let start = if refined == 0 {
        state.clone()
    } else {
        VmState { t: state.t, f: state.f.remapped(tables.element_set()), em: state.em.clone() }
    };
    let mut next = timeint::step(scheme, &start, dt, state.t, |u| solver.rhs(u, alpha))?;
    next.t = state.t + dt;
    let (f, coarsened) = coarsen(tables, &next.f, cfg.eta);
    next.f = f;
    Ok((next, StepStats { refined, coarsened }))
}

/// Elements per level vector in the given order, as `(levels, count)`.
pub fn level_histogram(set: &ElementSet) -> Vec<(Vec<u32>, usize)> {
    let mut counts: std::collections::BTreeMap<Vec<u32>, usize> = Default::default();
    for k in set.keys() {
        *counts.entry(k.levels()).or_default() += 1;
    }
    counts.into_iter().collect()
}
