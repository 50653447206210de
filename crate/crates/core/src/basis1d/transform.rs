//! Orthogonal change of basis between per-cell Legendre coefficients on the
//! finest mesh and hierarchical coefficients.
//!
//! Layouts (length `(k+1) 2^M`): per-cell data is `[cell][i]`, hierarchical
//! data is `[id][i]` with the compact 1D ids of [`super::id_of`].

use super::{legendre01, Basis1D};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Two-scale filter for one parent cell and its two children.
///
/// Row block 0 maps child coefficients to the parent Legendre coefficients,
/// row block 1 to the wavelet coefficients. The matrix is orthogonal.
#[derive(Clone, Debug)]
pub struct TwoScale<T> {
    pub n: usize,
    /// `2n x 2n`, row-major. Columns: `[child0 (n), child1 (n)]`.
    pub g: Vec<T>,
}

impl<T: Real> TwoScale<T> {
    pub fn new(basis: &Basis1D) -> Self {
        let n = basis.n();
        let m = 2 * n;
        let mut g = vec![0.0f64; m * m];
        let (x, w) = (&basis.nodes, &basis.weights);
        for half in 0..2 {
            for (xi, wi) in x.iter().zip(w.iter()) {
                let t = 0.5 * (half as f64 + xi);
                let wt = 0.5 * wi;
                let xa = 2.0 * t - 1.0;
                for j in 0..n {
                    let child = 2f64.sqrt() * legendre01(j, *xi);
                    let col = half * n + j;
                    for i in 0..n {
                        g[i * m + col] += wt * legendre01(i, t) * child;
                        let wav = 2f64.sqrt() * basis.table.eval(i, xa, half == 1);
                        g[(n + i) * m + col] += wt * wav * child;
                    }
                }
            }
        }
        TwoScale { n, g: g.into_iter().map(T::lit).collect() }
    }

    /// Two-scale filter of orthonormal Legendre polynomials of degree
    /// `< n_poly` (parent rows, child columns). Used to restrict moments.
    pub fn legendre_restriction(n_poly: usize) -> [Vec<T>; 2] {
        let (x, w) = super::quadrature::gauss_legendre(n_poly + 1);
        let mut out = [vec![T::zero(); n_poly * n_poly], vec![T::zero(); n_poly * n_poly]];
        for (half, o) in out.iter_mut().enumerate() {
            for r in 0..n_poly {
                for s in 0..n_poly {
                    let mut acc = 0.0;
                    for (xi, wi) in x.iter().zip(w.iter()) {
                        let t = 0.5 * (half as f64 + xi);
                        acc += 0.5 * wi * legendre01(r, t) * 2f64.sqrt() * legendre01(s, *xi);
                    }
                    o[r * n_poly + s] = T::lit(acc);
                }
            }
        }
        out
    }
}

/// Per-cell Legendre data at level `m` to hierarchical coefficients, applied
/// along one axis of a `[outer][(k+1) 2^m][inner]` array.
pub fn forward_axis<T: Real>(
    ts: &TwoScale<T>,
    m: usize,
    data: &mut [T],
    outer: usize,
    inner: usize,
) -> Result<()> {
    let n = ts.n;
    let len = n << m;
    if data.len() != outer * len * inner {
        return Err(Error::Shape { expected: outer * len * inner, got: data.len() });
    }
    let mut s = vec![T::zero(); len * inner];
    let mut tmp = vec![T::zero(); 2 * n * inner];
    for o in 0..outer {
        let base = o * len * inner;
        let lane = &mut data[base..base + len * inner];
        s.copy_from_slice(lane);
        for level in (1..=m).rev() {
            let parents = 1usize << (level - 1);
            for p in 0..parents {
                let src = &s[2 * p * n * inner..(2 * p + 2) * n * inner];
                apply_g(&ts.g, 2 * n, src, &mut tmp, inner);
                // Wavelet part lands at its hierarchical id.
                let id = parents + p;
                lane[id * n * inner..(id + 1) * n * inner]
                    .copy_from_slice(&tmp[n * inner..2 * n * inner]);
                s[p * n * inner..(p + 1) * n * inner].copy_from_slice(&tmp[..n * inner]);
            }
        }
        lane[..n * inner].copy_from_slice(&s[..n * inner]);
    }
    Ok(())
}

/// Inverse of [`forward_axis`].
pub fn inverse_axis<T: Real>(
    ts: &TwoScale<T>,
    m: usize,
    data: &mut [T],
    outer: usize,
    inner: usize,
) -> Result<()> {
    let n = ts.n;
    let len = n << m;
    if data.len() != outer * len * inner {
        return Err(Error::Shape { expected: outer * len * inner, got: data.len() });
    }
    let mut s = vec![T::zero(); len * inner];
    let mut src = vec![T::zero(); 2 * n * inner];
    let mut tmp = vec![T::zero(); 2 * n * inner];
    for o in 0..outer {
        let base = o * len * inner;
        let lane = &mut data[base..base + len * inner];
        s[..n * inner].copy_from_slice(&lane[..n * inner]);
        for level in 1..=m {
            let parents = 1usize << (level - 1);
            // Process parents from the last so that in-place expansion of
            // `s` never overwrites an unread parent.
            for p in (0..parents).rev() {
                let id = parents + p;
                src[..n * inner].copy_from_slice(&s[p * n * inner..(p + 1) * n * inner]);
                src[n * inner..].copy_from_slice(&lane[id * n * inner..(id + 1) * n * inner]);
                apply_gt(&ts.g, 2 * n, &src, &mut tmp, inner);
                s[2 * p * n * inner..(2 * p + 2) * n * inner].copy_from_slice(&tmp);
            }
        }
        lane.copy_from_slice(&s);
    }
    Ok(())
}

#[inline]
fn apply_g<T: Real>(g: &[T], m: usize, src: &[T], dst: &mut [T], inner: usize) {
    dst.iter_mut().for_each(|v| *v = T::zero());
    for r in 0..m {
        let d = &mut dst[r * inner..(r + 1) * inner];
        for c in 0..m {
            let w = g[r * m + c];
            if w == T::zero() {
                continue;
            }
            let s = &src[c * inner..(c + 1) * inner];
            for (dv, sv) in d.iter_mut().zip(s.iter()) {
                *dv += w * *sv;
            }
        }
    }
}

#[inline]
fn apply_gt<T: Real>(g: &[T], m: usize, src: &[T], dst: &mut [T], inner: usize) {
    dst.iter_mut().for_each(|v| *v = T::zero());
    for r in 0..m {
        let s = &src[r * inner..(r + 1) * inner];
        for c in 0..m {
            let w = g[r * m + c];
            if w == T::zero() {
                continue;
            }
            let d = &mut dst[c * inner..(c + 1) * inner];
            for (dv, sv) in d.iter_mut().zip(s.iter()) {
                *dv += w * *sv;
            }
        }
    }
}

/// Forward transform of a single vector of per-cell coefficients at level `N`.
pub fn hier_transform_1d<T: Real>(basis: &Basis1D, nodal: &[T]) -> Result<Vec<T>> {
    let ts = TwoScale::<T>::new(basis);
    let mut out = nodal.to_vec();
    forward_axis(&ts, basis.config.max_level, &mut out, 1, 1)?;
    Ok(out)
}

/// Inverse of [`hier_transform_1d`].
pub fn inverse_hier_transform_1d<T: Real>(basis: &Basis1D, hier: &[T]) -> Result<Vec<T>> {
    let ts = TwoScale::<T>::new(basis);
    let mut out = hier.to_vec();
    inverse_axis(&ts, basis.config.max_level, &mut out, 1, 1)?;
    Ok(out)
}
