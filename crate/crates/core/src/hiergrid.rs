//! Multi-indices, tensor elements and the full / sparse / adaptive spaces.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hash, Hasher};

use crate::basis1d::{cell_of, cells_at_level, id_of, level_of};
use crate::error::{Error, Result};

/// Largest supported phase-space dimension.
pub const MAX_DIM: usize = 6;

/// Multiplicative hasher for small integer keys.
#[derive(Default, Clone, Copy)]
pub struct KeyHasher(u64);

impl Hasher for KeyHasher {
    #[inline]
    fn finish(&self) -> u64 {
        self.0
    }
    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.write_u64(*b as u64);
        }
    }
    #[inline]
    fn write_u8(&mut self, i: u8) {
        self.write_u64(i as u64);
    }
    #[inline]
    fn write_u32(&mut self, i: u32) {
        self.write_u64(i as u64);
    }
    #[inline]
    fn write_u64(&mut self, i: u64) {
        self.0 = (self.0.rotate_left(5) ^ i).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
    }
    #[inline]
    fn write_usize(&mut self, i: usize) {
        self.write_u64(i as u64);
    }
}

pub type KeyMap<K, V> = HashMap<K, V, BuildHasherDefault<KeyHasher>>;

/// Level vector `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    dim: u8,
    levels: [u8; MAX_DIM],
}

impl MultiIndex {
    pub fn new(levels: &[u32]) -> Self {
        assert!(levels.len() <= MAX_DIM);
        let mut l = [0u8; MAX_DIM];
        for (d, v) in levels.iter().enumerate() {
            l[d] = *v as u8;
        }
        MultiIndex { dim: levels.len() as u8, levels: l }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn levels(&self) -> Vec<u32> {
        self.levels[..self.dim()].iter().map(|&v| v as u32).collect()
    }

    pub fn l1(&self) -> u32 {
        self.levels[..self.dim()].iter().map(|&v| v as u32).sum()
    }

    pub fn linf(&self) -> u32 {
        self.levels[..self.dim()].iter().map(|&v| v as u32).max().unwrap_or(0)
    }

    /// Number of cells of `W_l`: `prod_m max(1, 2^(l_m - 1))`.
    pub fn cell_count(&self) -> u64 {
        self.levels[..self.dim()].iter().map(|&l| cells_at_level(l as u32) as u64).product()
    }
}

/// One tensor element `(l, j)`, stored as compact 1D ids per dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ElementKey {
    dim: u8,
    ids: [u32; MAX_DIM],
}

impl ElementKey {
    pub fn from_ids(ids: &[u32]) -> Self {
        assert!(ids.len() <= MAX_DIM);
        let mut a = [0u32; MAX_DIM];
        a[..ids.len()].copy_from_slice(ids);
        ElementKey { dim: ids.len() as u8, ids: a }
    }

    pub fn new(levels: &[u32], cells: &[u32]) -> Result<Self> {
        if levels.len() != cells.len() || levels.len() > MAX_DIM {
            return Err(Error::Precondition("level and cell vectors differ in length".into()));
        }
        let mut ids = [0u32; MAX_DIM];
        for m in 0..levels.len() {
            if cells[m] >= cells_at_level(levels[m]) {
                return Err(Error::Precondition(format!(
                    "cell {} invalid at level {}",
                    cells[m], levels[m]
                )));
            }
            ids[m] = id_of(levels[m], cells[m]);
        }
        Ok(ElementKey { dim: levels.len() as u8, ids })
    }

    pub fn root(dim: usize) -> Self {
        ElementKey { dim: dim as u8, ids: [0; MAX_DIM] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn ids(&self) -> &[u32] {
        &self.ids[..self.dim as usize]
    }

    #[inline]
    pub fn id(&self, m: usize) -> u32 {
        self.ids[m]
    }

    #[inline]
    pub fn level(&self, m: usize) -> u32 {
        level_of(self.ids[m])
    }

    #[inline]
    pub fn cell(&self, m: usize) -> u32 {
        cell_of(self.ids[m])
    }

    pub fn levels(&self) -> Vec<u32> {
        self.ids().iter().map(|&i| level_of(i)).collect()
    }

    pub fn cells(&self) -> Vec<u32> {
        self.ids().iter().map(|&i| cell_of(i)).collect()
    }

    pub fn multi_index(&self) -> MultiIndex {
        MultiIndex::new(&self.levels())
    }

    #[inline]
    pub fn l1(&self) -> u32 {
        self.ids().iter().map(|&i| level_of(i)).sum()
    }

    #[inline]
    pub fn linf(&self) -> u32 {
        self.ids().iter().map(|&i| level_of(i)).max().unwrap_or(0)
    }

    /// Sub-key made of dimensions `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ElementKey {
        ElementKey::from_ids(&self.ids[range])
    }

    /// Concatenation of two keys.
    pub fn concat(&self, other: &ElementKey) -> ElementKey {
        let mut ids = self.ids().to_vec();
        ids.extend_from_slice(other.ids());
        ElementKey::from_ids(&ids)
    }

    #[inline]
    pub fn with_id(&self, m: usize, id: u32) -> ElementKey {
        let mut k = *self;
        k.ids[m] = id;
        k
    }

    /// Direct parents: one level lowered in one dimension.
    pub fn parents(&self) -> Vec<ElementKey> {
        let mut out = Vec::new();
        for m in 0..self.dim() {
            if let Some(p) = parent_id(self.ids[m]) {
                out.push(self.with_id(m, p));
            }
        }
        out
    }

    /// Direct children with every level component at most `max_level`.
    pub fn children(&self, max_level: u32) -> Vec<ElementKey> {
        let mut out = Vec::new();
        for m in 0..self.dim() {
            if self.level(m) >= max_level {
                continue;
            }
            for c in child_ids(self.ids[m]) {
                out.push(self.with_id(m, c));
            }
        }
        out
    }
}

/// Parent of a 1D id: level 1 maps to level 0, otherwise the cell halves.
#[inline]
pub fn parent_id(id: u32) -> Option<u32> {
    match id {
        0 => None,
        1 => Some(0),
        _ => Some(id / 2),
    }
}

/// Children of a 1D id.
#[inline]
pub fn child_ids(id: u32) -> Vec<u32> {
    if id == 0 {
        vec![1]
    } else {
        vec![2 * id, 2 * id + 1]
    }
}

impl Ord for ElementKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dim
            .cmp(&other.dim)
            .then_with(|| self.l1().cmp(&other.l1()))
            .then_with(|| {
                for m in 0..self.dim() {
                    let c = self.level(m).cmp(&other.level(m));
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                Ordering::Equal
            })
            .then_with(|| {
                for m in 0..self.dim() {
                    let c = self.cell(m).cmp(&other.cell(m));
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                Ordering::Equal
            })
    }
}

impl PartialOrd for ElementKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Approximation-space truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Truncation {
    Full,
    Sparse,
    Adaptive,
}

impl Truncation {
    pub fn name(&self) -> &'static str {
        match self {
            Truncation::Full => "full",
            Truncation::Sparse => "sparse",
            Truncation::Adaptive => "adaptive",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            Truncation::Full => 0,
            Truncation::Sparse => 1,
            Truncation::Adaptive => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Truncation::Full),
            1 => Some(Truncation::Sparse),
            2 => Some(Truncation::Adaptive),
            _ => None,
        }
    }
}

impl std::str::FromStr for Truncation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Truncation::Full),
            "sparse" => Ok(Truncation::Sparse),
            "adaptive" => Ok(Truncation::Adaptive),
            _ => Err(Error::Config(format!("unknown scheme '{s}'"))),
        }
    }
}

/// Dimension, degree, finest level and truncation of a space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpaceSpec {
    pub d: usize,
    pub k: usize,
    pub n: u32,
    pub truncation: Truncation,
}

impl SpaceSpec {
    /// Membership of a level vector.
    pub fn admits_levels(&self, levels: &[u32]) -> bool {
        match self.truncation {
            Truncation::Full | Truncation::Adaptive => levels.iter().all(|&l| l <= self.n),
            Truncation::Sparse => levels.iter().sum::<u32>() <= self.n,
        }
    }

    pub fn admits(&self, key: &ElementKey) -> bool {
        key.dim() == self.d && self.admits_levels(&key.levels())
    }

    pub fn block_size(&self) -> usize {
        (self.k + 1).pow(self.d as u32)
    }
}

/// All admissible level vectors in the deterministic order.
pub fn enumerate_levels(spec: &SpaceSpec) -> Result<Vec<MultiIndex>> {
    if spec.truncation == Truncation::Adaptive {
        return Err(Error::Precondition("adaptive spaces are built by the adaptivity module".into()));
    }
    if spec.d == 0 || spec.d > MAX_DIM {
        return Err(Error::Precondition(format!("dimension {} unsupported", spec.d)));
    }
    let mut out = Vec::new();
    let mut l = vec![0u32; spec.d];
    loop {
        if spec.admits_levels(&l) {
            out.push(MultiIndex::new(&l));
        }
        let mut m = 0;
        loop {
            if m == spec.d {
                out.sort_by(|a, b| a.l1().cmp(&b.l1()).then_with(|| a.levels().cmp(&b.levels())));
                return Ok(out);
            }
            l[m] += 1;
            if l[m] <= spec.n {
                break;
            }
            l[m] = 0;
            m += 1;
        }
    }
}

/// Every admissible element, sorted by `(|l|_1, l, j)`.
pub fn enumerate_space(spec: &SpaceSpec) -> Result<Vec<ElementKey>> {
    let mut out = Vec::new();
    for mi in enumerate_levels(spec)? {
        let levels = mi.levels();
        let counts: Vec<u32> = levels.iter().map(|&l| cells_at_level(l)).collect();
        let mut cells = vec![0u32; spec.d];
        'cells: loop {
            out.push(ElementKey::new(&levels, &cells)?);
            // Last dimension fastest keeps lexicographic cell order.
            let mut m = spec.d;
            loop {
                if m == 0 {
                    break 'cells;
                }
                m -= 1;
                cells[m] += 1;
                if cells[m] < counts[m] {
                    break;
                }
                cells[m] = 0;
            }
        }
    }
    Ok(out)
}

/// Degrees of freedom of a full or sparse space.
pub fn dof_count(spec: &SpaceSpec) -> Result<u64> {
    let cells: u64 = enumerate_levels(spec)?.iter().map(|m| m.cell_count()).sum();
    Ok(cells * spec.block_size() as u64)
}

/// Sorted element set with a key index.
#[derive(Clone, Debug, Default)]
pub struct ElementSet {
    keys: Vec<ElementKey>,
    index: KeyMap<ElementKey, usize>,
}

impl ElementSet {
    pub fn from_keys(mut keys: Vec<ElementKey>) -> Self {
        keys.sort();
        keys.dedup();
        let index = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        ElementSet { keys, index }
    }

    pub fn from_spec(spec: &SpaceSpec) -> Result<Self> {
        Ok(Self::from_keys(enumerate_space(spec)?))
    }

    #[inline]
    pub fn keys(&self) -> &[ElementKey] {
        &self.keys
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    #[inline]
    pub fn get(&self, key: &ElementKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    #[inline]
    pub fn contains(&self, key: &ElementKey) -> bool {
        self.index.contains_key(key)
    }
}
