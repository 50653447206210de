//! Sparse block matrices of 1D operators in the hierarchical basis.
//!
//! Entry `[p][q]` of a block pairs test id `p` (row) with trial id `q`
//! (column); inside a block, rows index the test polynomial and columns the
//! trial polynomial. Edge terms use the convention
//! `sum_e jump_p(e) * trace_q(e)` with `jump = left trace - right trace`.

use super::{breakpoints, cells_at_level, id_of, level_of, support, Basis1D, Side};
use crate::scalar::Real;

/// Relative size below which an assembled block counts as zero.
const ZERO_TOL: f64 = 1e-13;

/// Treatment of the two ends of [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// 0 and 1 are the same edge.
    Periodic,
    /// The exterior state is zero.
    ZeroExterior,
}

/// Operator flavors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    /// `int phi_q phi_p`, the identity in an orthonormal basis.
    Mass,
    /// `int phi_q phi_p'`.
    Stiffness,
    /// `sum_e {phi_q}(e) [phi_p](e)`.
    EdgeAverage,
    /// `sum_e [phi_q](e) [phi_p](e)`.
    EdgeJump,
    /// `sum_e phi_q(e^-) [phi_p](e)`.
    TraceLeft,
    /// `sum_e phi_q(e^+) [phi_p](e)`.
    TraceRight,
    /// Zero-exterior boundary edges only: `sum_{e in {0,1}} [phi_q][phi_p]`.
    Boundary,
    /// `int (lo + len y) phi_q phi_p`: multiplication by a mapped coordinate.
    Multiply { lo: f64, len: f64 },
}

/// Linear combination of the elementary 1D bilinear forms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OpCoeffs {
    pub mass: f64,
    pub stiffness: f64,
    pub trace_left: f64,
    pub trace_right: f64,
    pub boundary_jump: f64,
    /// `(weight, lo, len)` for multiplication by `lo + len y`.
    pub multiply: Option<(f64, f64, f64)>,
}

impl OpCoeffs {
    pub fn of(kind: OpKind) -> Self {
        let mut c = OpCoeffs::default();
        match kind {
            OpKind::Mass => c.mass = 1.0,
            OpKind::Stiffness => c.stiffness = 1.0,
            OpKind::EdgeAverage => {
                c.trace_left = 0.5;
                c.trace_right = 0.5;
            }
            OpKind::EdgeJump => {
                c.trace_left = 1.0;
                c.trace_right = -1.0;
            }
            OpKind::TraceLeft => c.trace_left = 1.0,
            OpKind::TraceRight => c.trace_right = 1.0,
            OpKind::Boundary => c.boundary_jump = 1.0,
            OpKind::Multiply { lo, len } => c.multiply = Some((1.0, lo, len)),
        }
        c
    }

    /// Transport form `int phi_q phi_p' - sum_e {phi_q}[phi_p]`.
    pub fn transport() -> Self {
        OpCoeffs { stiffness: 1.0, trace_left: -0.5, trace_right: -0.5, ..Default::default() }
    }
}

/// Sparse block matrix over the 1D ids `0..2^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOp1D<T> {
    /// Block size `k + 1`.
    pub n: usize,
    pub num_ids: usize,
    /// For each test id, `(trial id, block index)` sorted by trial id.
    pub rows: Vec<Vec<(u32, u32)>>,
    /// Blocks of `n * n` entries, row-major.
    pub blocks: Vec<T>,
}

impl<T: Real> BlockOp1D<T> {
    pub fn build(basis: &Basis1D, boundary: Boundary, kind: OpKind) -> Self {
        Self::build_combination(basis, boundary, OpCoeffs::of(kind))
    }

    /// Assembles `sum_c w_c A_c` with exact quadrature and exact traces.
    pub fn build_combination(basis: &Basis1D, boundary: Boundary, c: OpCoeffs) -> Self {
        let n = basis.n();
        let num_ids = basis.num_ids();
        let max_level = basis.config.max_level as u32;
        let mut rows = Vec::with_capacity(num_ids);
        let mut blocks = Vec::new();
        let mut block = vec![0.0f64; n * n];
        let volume = c.stiffness != 0.0 || c.multiply.is_some();
        let edges = c.trace_left != 0.0 || c.trace_right != 0.0 || c.boundary_jump != 0.0;
        for p in 0..num_ids as u32 {
            let mut row = Vec::new();
            for q in candidates(p, max_level, boundary) {
                block.iter_mut().for_each(|v| *v = 0.0);
                if c.mass != 0.0 && p == q {
                    for i in 0..n {
                        block[i * n + i] += c.mass;
                    }
                }
                if volume {
                    volume_block(basis, p, q, &c, &mut block);
                }
                if edges {
                    edge_block(basis, p, q, boundary, &c, &mut block);
                }
                // Couplings that vanish exactly (vanishing moments, disjoint
                // supports) come out of quadrature at roundoff size.
                let lvl = super::level_of(p).max(super::level_of(q));
                let tol = ZERO_TOL * 2f64.powi(lvl as i32);
                if block.iter().any(|v| v.abs() > tol) {
                    row.push((q, (blocks.len() / (n * n)) as u32));
                    blocks.extend(block.iter().map(|v| T::lit(*v)));
                }
            }
            rows.push(row);
        }
        BlockOp1D { n, num_ids, rows, blocks }
    }

    #[inline]
    pub fn block(&self, b: u32) -> &[T] {
        let s = self.n * self.n;
        &self.blocks[b as usize * s..(b as usize + 1) * s]
    }

    /// Looks up the block for `(p, q)`.
    pub fn get(&self, p: u32, q: u32) -> Option<&[T]> {
        let row = &self.rows[p as usize];
        row.binary_search_by_key(&q, |e| e.0).ok().map(|i| self.block(row[i].1))
    }

    /// Dense matrix of size `n 2^N` (test rows, trial columns).
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let dim = self.n * self.num_ids;
        let mut m = vec![vec![T::zero(); dim]; dim];
        for (p, row) in self.rows.iter().enumerate() {
            for &(q, b) in row {
                let blk = self.block(b);
                for i in 0..self.n {
                    for j in 0..self.n {
                        m[p * self.n + i][q as usize * self.n + j] = blk[i * self.n + j];
                    }
                }
            }
        }
        m
    }

    /// Applies the operator to a full hierarchical vector.
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let n = self.n;
        for (p, row) in self.rows.iter().enumerate() {
            let yp = &mut y[p * n..(p + 1) * n];
            yp.iter_mut().for_each(|v| *v = T::zero());
            for &(q, b) in row {
                let blk = self.block(b);
                let xq = &x[q as usize * n..(q as usize + 1) * n];
                for i in 0..n {
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc += blk[i * n + j] * xq[j];
                    }
                    yp[i] += acc;
                }
            }
        }
    }

    /// Number of stored blocks.
    pub fn nnz_blocks(&self) -> usize {
        self.blocks.len() / (self.n * self.n)
    }
}

/// Trial ids whose closed support meets the closed support of `p`,
/// including periodic wrap-around neighbours.
fn candidates(p: u32, max_level: u32, boundary: Boundary) -> Vec<u32> {
    let (a, b) = support(p);
    let mut out = Vec::new();
    for lq in 0..=max_level {
        let ncell = cells_at_level(lq);
        let w = if lq == 0 { 1.0 } else { 0.5f64.powi(lq as i32 - 1) };
        let lo = ((a / w).ceil() as i64 - 1).max(0) as u32;
        let hi = ((b / w).floor() as i64).min(ncell as i64 - 1) as u32;
        let mut cells: Vec<u32> = (lo..=hi).collect();
        if boundary == Boundary::Periodic {
            if a == 0.0 {
                cells.push(ncell - 1);
            }
            if b == 1.0 {
                cells.push(0);
            }
        }
        cells.sort_unstable();
        cells.dedup();
        out.extend(cells.into_iter().map(|j| id_of(lq, j)));
    }
    out
}

/// Volume integrals over the common refinement of the two supports.
fn volume_block(basis: &Basis1D, p: u32, q: u32, c: &OpCoeffs, block: &mut [f64]) {
    let n = basis.n();
    let (lp, lq) = (level_of(p), level_of(q));
    let (pa, pb) = support(p);
    let (qa, qb) = support(q);
    let (a, b) = (pa.max(qa), pb.min(qb));
    if b <= a {
        return;
    }
    // Fine-on-coarse stiffness vanishes: the derivative of the coarser test
    // is a polynomial of degree < k on the trial's support.
    let stiffness = if lq > lp { 0.0 } else { c.stiffness };
    let finest = lp.max(lq);
    let pieces = if finest == 0 { 1 } else { 2 };
    let width = (b - a) / pieces as f64;
    let mut vp = [0.0; 4];
    let mut dp = [0.0; 4];
    let mut vq = [0.0; 4];
    let mut dq = [0.0; 4];
    for piece in 0..pieces {
        let lo = a + width * piece as f64;
        for (x, w) in basis.nodes.iter().zip(basis.weights.iter()) {
            let y = lo + width * x;
            let wt = width * w;
            basis.interior(p, y, &mut vp, &mut dp);
            basis.interior(q, y, &mut vq, &mut dq);
            let m = c.multiply.map(|(s, lo, len)| s * (lo + len * y)).unwrap_or(0.0);
            for i in 0..n {
                for j in 0..n {
                    block[i * n + j] += wt * (stiffness * vq[j] * dp[i] + m * vq[j] * vp[i]);
                }
            }
        }
    }
}

/// One edge of the mesh as seen by traces: `(left point, right point)`.
/// For the periodic wrap edge the left trace is taken at 1 and the right at 0.
fn edge_positions(p: u32, boundary: Boundary) -> Vec<(f64, f64, bool)> {
    let mut out = Vec::new();
    let mut wrap = false;
    for e in breakpoints(p) {
        let on_boundary = e == 0.0 || e == 1.0;
        if on_boundary && boundary == Boundary::Periodic {
            if !wrap {
                out.push((1.0, 0.0, true));
                wrap = true;
            }
        } else {
            out.push((e, e, on_boundary));
        }
    }
    out
}

fn trace_at(basis: &Basis1D, id: u32, left_pt: f64, right_pt: f64, out_l: &mut [f64], out_r: &mut [f64]) {
    // Zero exterior: the left trace at 0 and the right trace at 1 vanish.
    basis.trace(id, left_pt, Side::Left, out_l);
    basis.trace(id, right_pt, Side::Right, out_r);
}

fn edge_block(basis: &Basis1D, p: u32, q: u32, boundary: Boundary, c: &OpCoeffs, block: &mut [f64]) {
    let n = basis.n();
    let mut pl = [0.0; 4];
    let mut pr = [0.0; 4];
    let mut ql = [0.0; 4];
    let mut qr = [0.0; 4];
    for (lpt, rpt, on_boundary) in edge_positions(p, boundary) {
        trace_at(basis, p, lpt, rpt, &mut pl, &mut pr);
        trace_at(basis, q, lpt, rpt, &mut ql, &mut qr);
        let bj = if on_boundary && boundary == Boundary::ZeroExterior { c.boundary_jump } else { 0.0 };
        for i in 0..n {
            let jp = pl[i] - pr[i];
            if jp == 0.0 {
                continue;
            }
            for j in 0..n {
                block[i * n + j] +=
                    jp * (c.trace_left * ql[j] + c.trace_right * qr[j] + bj * (ql[j] - qr[j]));
            }
        }
    }
}
