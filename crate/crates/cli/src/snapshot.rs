//! `.skin` snapshot files.
//!
//! Little-endian layout:
//!
//! | field | type |
//! |---|---|
//! | magic `SKIN` | 4 bytes |
//! | version | u32 |
//! | d, k, N | u32 each |
//! | truncation code | u8 |
//! | time | f64 |
//! | step count | u64 |
//! | domain lower corner, upper corner | f64 x d each |
//! | element count | u64 |
//! | per element in key order: levels, cells, coefficients | u32 x d, u32 x d, f64 x (k+1)^d |
//! | field level, component count | u32 each |
//! | per component: length, coefficients | u64, f64 x length |
//!
//! The system is implied by `d`: 3 is Vlasov-Maxwell 1D2V, 4 is
//! Vlasov-Ampere 2D2V.

use std::path::Path;
use std::sync::Arc;

use sgvm::hiergrid::{ElementKey, ElementSet, SpaceSpec, Truncation};
use sgvm::operators::{DistributionField, EmField, PhaseDomain, SystemKind, VmState};
use sgvm::State;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"SKIN";
pub const VERSION: u32 = 1;

/// A saved state with the number of steps taken to reach it.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: u64,
    pub state: State,
}

pub fn system_of_dim(d: usize) -> Option<SystemKind> {
    match d {
        3 => Some(SystemKind::Maxwell1D2V),
        4 => Some(SystemKind::Ampere2D2V),
        _ => None,
    }
}

pub fn encode(snap: &Snapshot) -> Vec<u8> {
    let f = &snap.state.f;
    let spec = f.spec;
    let mut out = Vec::with_capacity(64 + f.coeffs.len() * 8 + f.set.len() * 8 * spec.d);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, spec.d as u32, spec.k as u32, spec.n] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(spec.truncation.code());
    out.extend_from_slice(&snap.state.t.to_le_bytes());
    out.extend_from_slice(&snap.step.to_le_bytes());
    for v in f.domain.lo.iter().chain(&f.domain.hi) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(f.set.len() as u64).to_le_bytes());
    for (i, key) in f.set.keys().iter().enumerate() {
        for v in key.levels().into_iter().chain(key.cells()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in f.block(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let em = &snap.state.em;
    out.extend_from_slice(&(em.level as u32).to_le_bytes());
    out.extend_from_slice(&(em.comps.len() as u32).to_le_bytes());
    for c in &em.comps {
        out.extend_from_slice(&(c.len() as u64).to_le_bytes());
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CliError::Snapshot(format!("truncated file at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Length prefix that cannot exceed the remaining bytes.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u64()?;
        let rest = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(item_bytes as u64) > rest {
            return Err(CliError::Snapshot(format!("truncated file: {n} items announced, {rest} bytes left")));
        }
        Ok(n as usize)
    }
}

pub fn decode(buf: &[u8]) -> Result<Snapshot> {
    let bad = |m: String| CliError::Snapshot(m);
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("not a .skin file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
    }
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n = r.u32()?;
    let system = system_of_dim(d).ok_or_else(|| bad(format!("unsupported dimension {d}")))?;
    let code = r.u8()?;
    let truncation = Truncation::from_code(code).ok_or_else(|| bad(format!("unknown truncation code {code}")))?;
    let t = r.f64()?;
    let step = r.u64()?;
    let lo = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let hi = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let domain = PhaseDomain::new(lo, hi)?;
    let spec = SpaceSpec { d, k, n, truncation };
    let bs = spec.block_size();
    let count = r.count(8 * d + 8 * bs)?;
    let mut keys = Vec::with_capacity(count);
    let mut blocks = Vec::with_capacity(count * bs);
    for _ in 0..count {
        let levels = (0..d).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let cells = (0..d).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if levels.iter().any(|l| *l > n) {
            return Err(bad(format!("element level {levels:?} exceeds N = {n}")));
        }
        keys.push(ElementKey::new(&levels, &cells)?);
        for _ in 0..bs {
            blocks.push(r.f64()?);
        }
    }
    if keys.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("elements are not in strictly increasing key order".into()));
    }
    let set = Arc::new(ElementSet::from_keys(keys));
    let f = DistributionField { spec, domain, set, coeffs: blocks };
    let level = r.u32()? as usize;
    let ncomp = r.u32()? as usize;
    let mut em = EmField::zeros(system, k, level);
    if ncomp != em.comps.len() {
        return Err(bad(format!("{ncomp} field components, expected {}", em.comps.len())));
    }
    for c in em.comps.iter_mut() {
        let len = r.count(8)?;
        if len != c.len() {
            return Err(bad(format!("field component of length {len}, expected {}", c.len())));
        }
        for v in c.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != buf.len() {
        return Err(bad(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Snapshot { step, state: VmState { t, f, em } })
}

pub fn write(path: &Path, snap: &Snapshot) -> Result<()> {
    std::fs::write(path, encode(snap)).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Snapshot> {
    let buf = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&buf)
}
