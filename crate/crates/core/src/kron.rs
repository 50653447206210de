//! Tensor-product operators on hierarchical element sets.
//!
//! A term is a Kronecker product of 1D block operators on a subset of the
//! dimensions (identity elsewhere). For each test element the pair list holds
//! every source block reached through the nonzero 1D blocks, together with
//! the 1D block ids, so application is a sum of small sum-factorized tensor
//! contractions. Entries of a test are grouped by their trial id in the first
//! operator dimension so that factor is applied once per group.

use rayon::prelude::*;

use crate::basis1d::BlockOp1D;
use crate::hiergrid::ElementKey;
use crate::scalar::Real;

/// Source blocks and 1D block ids of one tensor term.
#[derive(Clone, Debug, Default)]
pub struct PairList {
    /// Dimensions carrying a non-identity factor, in application order.
    pub dims: Vec<usize>,
    /// `offsets[t]..offsets[t+1]` are the entries of test `t`.
    pub offsets: Vec<u32>,
    /// Source block index of each entry.
    pub src: Vec<u32>,
    /// `dims.len()` block ids per entry.
    pub blocks: Vec<u32>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Builds the list for `tests`; `lookup` maps a reached key and its test
    /// to a source block index, or `None` when it is not present.
    pub fn build<T, F>(tests: &[ElementKey], ops: &[(usize, &BlockOp1D<T>)], lookup: F) -> Self
    where
        T: Real,
        F: Fn(usize, &ElementKey) -> Option<u32> + Sync,
    {
        let nops = ops.len();
        let per_test: Vec<(Vec<u32>, Vec<u32>)> = tests
            .par_iter()
            .enumerate()
            .map(|(t, key)| {
                let mut src = Vec::new();
                let mut blocks = Vec::new();
                let mut ids = vec![0u32; nops];
                collect(ops, 0, t, *key, &lookup, &mut ids, &mut src, &mut blocks);
                (src, blocks)
            })
            .collect();
        let mut out = PairList { dims: ops.iter().map(|o| o.0).collect(), ..Default::default() };
        out.offsets.reserve(tests.len() + 1);
        out.offsets.push(0);
        for (s, b) in per_test {
            out.src.extend_from_slice(&s);
            out.blocks.extend_from_slice(&b);
            out.offsets.push(out.src.len() as u32);
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn collect<T: Real, F: Fn(usize, &ElementKey) -> Option<u32>>(
    ops: &[(usize, &BlockOp1D<T>)],
    depth: usize,
    t: usize,
    key: ElementKey,
    lookup: &F,
    ids: &mut [u32],
    src: &mut Vec<u32>,
    blocks: &mut Vec<u32>,
) {
    if depth == ops.len() {
        if let Some(s) = lookup(t, &key) {
            src.push(s);
            blocks.extend_from_slice(ids);
        }
        return;
    }
    let (m, op) = ops[depth];
    for &(q, b) in &op.rows[key.id(m) as usize] {
        ids[depth] = b;
        collect(ops, depth + 1, t, key.with_id(m, q), lookup, ids, src, blocks);
    }
}

/// `dst = (I x .. x A x .. x I) src` with `A` (n x n) acting on axis `m` of a
/// block with `d` axes of length `n`. Accumulates when `add` is set.
#[inline]
pub fn apply_axis<T: Real>(a: &[T], n: usize, d: usize, m: usize, src: &[T], dst: &mut [T], scale: T, add: bool) {
    match n {
        1 => apply_axis_n::<T, 1>(a, d, m, src, dst, scale, add),
        2 => apply_axis_n::<T, 2>(a, d, m, src, dst, scale, add),
        3 => apply_axis_n::<T, 3>(a, d, m, src, dst, scale, add),
        4 => apply_axis_n::<T, 4>(a, d, m, src, dst, scale, add),
        _ => apply_axis_dyn(a, n, d, m, src, dst, scale, add),
    }
}

#[inline]
fn apply_axis_n<T: Real, const N: usize>(a: &[T], d: usize, m: usize, src: &[T], dst: &mut [T], scale: T, add: bool) {
    let stride = N.pow((d - 1 - m) as u32);
    let outer = N.pow(m as u32);
    let mut w = [[T::zero(); N]; N];
    for i in 0..N {
        for j in 0..N {
            w[i][j] = scale * a[i * N + j];
        }
    }
    if stride == 1 {
        for (x, y) in src.chunks_exact(N).zip(dst.chunks_exact_mut(N)).take(outer) {
            for i in 0..N {
                let mut acc = T::zero();
                for j in 0..N {
                    acc += w[i][j] * x[j];
                }
                if add {
                    y[i] += acc;
                } else {
                    y[i] = acc;
                }
            }
        }
        return;
    }
    if !add {
        dst.iter_mut().for_each(|v| *v = T::zero());
    }
    for o in 0..outer {
        let base = o * N * stride;
        for i in 0..N {
            for j in 0..N {
                let wij = w[i][j];
                if wij == T::zero() {
                    continue;
                }
                let (s0, d0) = (base + j * stride, base + i * stride);
                let srow = &src[s0..s0 + stride];
                let drow = &mut dst[d0..d0 + stride];
                for (y, x) in drow.iter_mut().zip(srow.iter()) {
                    *y += wij * *x;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_axis_dyn<T: Real>(a: &[T], n: usize, d: usize, m: usize, src: &[T], dst: &mut [T], scale: T, add: bool) {
    let stride = n.pow((d - 1 - m) as u32);
    let outer = n.pow(m as u32);
    if !add {
        dst.iter_mut().for_each(|v| *v = T::zero());
    }
    for o in 0..outer {
        let base = o * n * stride;
        for i in 0..n {
            let drow = &mut dst[base + i * stride..base + (i + 1) * stride];
            for j in 0..n {
                let w = scale * a[i * n + j];
                if w == T::zero() {
                    continue;
                }
                let srow = &src[base + j * stride..base + (j + 1) * stride];
                for (y, x) in drow.iter_mut().zip(srow.iter()) {
                    *y += w * *x;
                }
            }
        }
    }
}

/// One tensor term ready to apply: pair list, 1D operators and a scale.
pub struct Term<'a, T> {
    pub pairs: &'a PairList,
    pub ops: Vec<&'a BlockOp1D<T>>,
    pub scale: T,
    /// Source vector, in blocks of the element size.
    pub src: &'a [T],
}

/// `dst[t] += sum_terms scale * (x_m A_m) src[s]` for every test `t`,
/// parallel over tests; each test is owned by one task so the result does not
/// depend on the number of workers.
pub fn apply_terms<T: Real>(terms: &[Term<'_, T>], n: usize, d: usize, dst: &mut [T]) {
    let bs = n.pow(d as u32);
    dst.par_chunks_mut(bs).enumerate().for_each_init(
        || (vec![T::zero(); bs], vec![T::zero(); bs], vec![T::zero(); bs]),
        |(acc, t1, t2), (t, y)| {
            for term in terms {
                apply_one(term, t, n, d, bs, y, acc, t1, t2);
            }
        },
    );
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn apply_one<T: Real>(
    term: &Term<'_, T>,
    t: usize,
    n: usize,
    d: usize,
    bs: usize,
    y: &mut [T],
    acc: &mut [T],
    t1: &mut [T],
    t2: &mut [T],
) {
    let pl = term.pairs;
    let nops = pl.dims.len();
    let (lo, hi) = (pl.offsets[t] as usize, pl.offsets[t + 1] as usize);
    if lo == hi {
        return;
    }
    let src_block = |e: usize| {
        let s = pl.src[e] as usize * bs;
        &term.src[s..s + bs]
    };
    match nops {
        0 => {
            for e in lo..hi {
                for (a, b) in y.iter_mut().zip(src_block(e)) {
                    *a += term.scale * *b;
                }
            }
        }
        1 => {
            let m = pl.dims[0];
            for e in lo..hi {
                let a = term.ops[0].block(pl.blocks[e]);
                apply_axis(a, n, d, m, src_block(e), y, term.scale, true);
            }
        }
        _ => {
            // Group by the first-dimension block, sum the inner chains, then
            // apply the first factor once per group.
            let mut e = lo;
            while e < hi {
                let b0 = pl.blocks[e * nops];
                acc.iter_mut().for_each(|v| *v = T::zero());
                while e < hi && pl.blocks[e * nops] == b0 {
                    let ids = &pl.blocks[e * nops..(e + 1) * nops];
                    let a = term.ops[1].block(ids[1]);
                    if nops == 2 {
                        apply_axis(a, n, d, pl.dims[1], src_block(e), acc, T::one(), true);
                    } else {
                        t2.copy_from_slice(src_block(e));
                        for j in (2..nops).rev() {
                            let aj = term.ops[j].block(ids[j]);
                            apply_axis(aj, n, d, pl.dims[j], t2, t1, T::one(), false);
                            t2.copy_from_slice(t1);
                        }
                        apply_axis(a, n, d, pl.dims[1], t2, acc, T::one(), true);
                    }
                    e += 1;
                }
                let a = term.ops[0].block(b0);
                apply_axis(a, n, d, pl.dims[0], acc, y, term.scale, true);
            }
        }
    }
}
