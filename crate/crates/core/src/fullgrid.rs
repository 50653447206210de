//! Full tensor grids over the configuration space.
//!
//! Arrays are laid out as `[xid_0, i_0][xid_1, i_1]..[comp]`: along each axis
//! the 1D position `id * (k+1) + i` runs over `(k+1) 2^M` entries, and `comp`
//! trailing components are carried along. The same layout holds per-cell
//! Legendre data, with cell indices in place of hierarchical ids.

use crate::basis1d::transform::{forward_axis, inverse_axis};
use crate::basis1d::{legendre01, quadrature, Basis1D, TwoScale};
use crate::error::Result;
use crate::scalar::Real;

/// Shape of a full grid at level `level` in `dx` dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridShape {
    pub dx: usize,
    pub n: usize,
    pub level: usize,
}

impl GridShape {
    #[inline]
    pub fn side(&self) -> usize {
        self.n << self.level
    }

    #[inline]
    pub fn cells_per_dim(&self) -> usize {
        1 << self.level
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.cells_per_dim().pow(self.dx as u32)
    }

    #[inline]
    pub fn len(&self, ncomp: usize) -> usize {
        self.side().pow(self.dx as u32) * ncomp
    }

    /// Offset of entry `(pos_0, .., pos_{dx-1})` with `pos_m = id_m * n + i_m`.
    #[inline]
    pub fn offset(&self, pos: &[usize], ncomp: usize) -> usize {
        let side = self.side();
        let mut o = 0;
        for &p in pos {
            o = o * side + p;
        }
        o * ncomp
    }
}

/// Per-cell Legendre data to hierarchical coefficients along every axis.
pub fn forward<T: Real>(ts: &TwoScale<T>, shape: GridShape, ncomp: usize, data: &mut [T]) -> Result<()> {
    let side = shape.side();
    for axis in 0..shape.dx {
        let outer = side.pow(axis as u32);
        let inner = side.pow((shape.dx - 1 - axis) as u32) * ncomp;
        forward_axis(ts, shape.level, data, outer, inner)?;
    }
    Ok(())
}

/// Hierarchical coefficients to per-cell Legendre data along every axis.
pub fn inverse<T: Real>(ts: &TwoScale<T>, shape: GridShape, ncomp: usize, data: &mut [T]) -> Result<()> {
    let side = shape.side();
    for axis in 0..shape.dx {
        let outer = side.pow(axis as u32);
        let inner = side.pow((shape.dx - 1 - axis) as u32) * ncomp;
        inverse_axis(ts, shape.level, data, outer, inner)?;
    }
    Ok(())
}

/// Calls `f(cell, offsets)` for every cell, where `offsets[r]` is the array
/// offset (in units of `ncomp`) of local index tuple `r` (row-major in `dx`).
pub fn for_each_cell(shape: GridShape, mut f: impl FnMut(usize, &[usize])) {
    let n = shape.n;
    let local = n.pow(shape.dx as u32);
    let cpd = shape.cells_per_dim();
    let mut offs = vec![0usize; local];
    let mut cell = vec![0usize; shape.dx];
    let mut pos = vec![0usize; shape.dx];
    for c in 0..shape.num_cells() {
        let mut rem = c;
        for m in (0..shape.dx).rev() {
            cell[m] = rem % cpd;
            rem /= cpd;
        }
        for (r, o) in offs.iter_mut().enumerate() {
            let mut rr = r;
            for m in (0..shape.dx).rev() {
                pos[m] = cell[m] * n + rr % n;
                rr /= n;
            }
            *o = shape.offset(&pos, 1);
        }
        f(c, &offs);
    }
}

/// Triple-product tables of orthonormal Legendre polynomials on [0, 1].
#[derive(Clone, Debug)]
pub struct ProductTable<T> {
    pub n: usize,
    /// Number of moment polynomials, `2k + 1`.
    pub np: usize,
    /// `gamma[(i * n + j) * np + r] = int L_i L_j L_r`.
    pub gamma: Vec<T>,
    /// Restriction of degree `< np` moments from a child to its parent.
    pub restrict: [Vec<T>; 2],
}

impl<T: Real> ProductTable<T> {
    pub fn new(k: usize) -> Self {
        let n = k + 1;
        let np = 2 * k + 1;
        let (x, w) = quadrature::gauss_legendre(2 * k + 2);
        let mut gamma = vec![T::zero(); n * n * np];
        for i in 0..n {
            for j in 0..n {
                for r in 0..np {
                    let s: f64 = x
                        .iter()
                        .zip(w.iter())
                        .map(|(x, w)| w * legendre01(i, *x) * legendre01(j, *x) * legendre01(r, *x))
                        .sum();
                    gamma[(i * n + j) * np + r] = T::lit(s);
                }
            }
        }
        ProductTable { n, np, gamma, restrict: TwoScale::<T>::legendre_restriction(np) }
    }
}

/// Moments of a configuration-space field against degree `<= 2k` Legendre
/// polynomials on every cell of every level `0..=N`.
#[derive(Clone, Debug)]
pub struct MomentPyramid<T> {
    pub dx: usize,
    pub np: usize,
    /// `levels[M]` holds `np^dx` moments per cell, cells row-major.
    pub levels: Vec<Vec<T>>,
}

impl<T: Real> MomentPyramid<T> {
    /// Builds the pyramid from per-cell Legendre coefficients at level `N`
    /// (layout of [`GridShape`] with `ncomp = 1`).
    pub fn new(table: &ProductTable<T>, shape: GridShape, cells: &[T]) -> Self {
        let (dx, n, np) = (shape.dx, table.n, table.np);
        let mom = np.pow(dx as u32);
        let mut top = vec![T::zero(); shape.num_cells() * mom];
        for_each_cell(shape, |c, offs| {
            for (r, &o) in offs.iter().enumerate() {
                let mut idx = 0;
                for m in 0..dx {
                    idx = idx * np + (r / n.pow((dx - 1 - m) as u32)) % n;
                }
                top[c * mom + idx] = cells[o];
            }
        });
        let mut levels = vec![top];
        for level in (0..shape.level).rev() {
            let child = levels.last().unwrap();
            let parent = restrict_level(table, dx, level, child);
            levels.push(parent);
        }
        levels.reverse();
        MomentPyramid { dx, np, levels }
    }

    /// Cell matrix `X[r][s] = int_C W l_r l_s` (unit-cube measure) for cell
    /// `c` at `level`, with `r, s` tuples over `n^dx`.
    pub fn cell_matrix(&self, table: &ProductTable<T>, level: usize, c: usize, out: &mut [T], tmp: &mut [T]) {
        let (n, np, dx) = (table.n, table.np, self.dx);
        let mom = np.pow(dx as u32);
        let mu = &self.levels[level][c * mom..(c + 1) * mom];
        let scale = T::lit(2f64.powf(level as f64 * dx as f64 / 2.0));
        let g = &table.gamma;
        match dx {
            1 => {
                for i in 0..n {
                    for j in 0..n {
                        let mut s = T::zero();
                        for r in 0..np {
                            s += g[(i * n + j) * np + r] * mu[r];
                        }
                        out[i * n + j] = scale * s;
                    }
                }
            }
            2 => {
                // tmp[r0][i1][j1] = sum_r1 gamma[i1 j1 r1] mu[r0 r1]
                for r0 in 0..np {
                    for i1 in 0..n {
                        for j1 in 0..n {
                            let mut s = T::zero();
                            for r1 in 0..np {
                                s += g[(i1 * n + j1) * np + r1] * mu[r0 * np + r1];
                            }
                            tmp[(r0 * n + i1) * n + j1] = s;
                        }
                    }
                }
                let nn = n * n;
                for i0 in 0..n {
                    for i1 in 0..n {
                        for j0 in 0..n {
                            for j1 in 0..n {
                                let mut s = T::zero();
                                for r0 in 0..np {
                                    s += g[(i0 * n + j0) * np + r0] * tmp[(r0 * n + i1) * n + j1];
                                }
                                out[(i0 * n + i1) * nn + j0 * n + j1] = scale * s;
                            }
                        }
                    }
                }
            }
            _ => unimplemented!("configuration space of dimension {dx}"),
        }
    }

    /// All cell matrices of one level.
    pub fn level_matrices(&self, table: &ProductTable<T>, level: usize) -> Vec<T> {
        let nl = table.n.pow(self.dx as u32);
        let cells = 1usize << (level * self.dx);
        let mut out = vec![T::zero(); cells * nl * nl];
        let mut tmp = vec![T::zero(); table.np * table.n * table.n];
        for c in 0..cells {
            self.cell_matrix(table, level, c, &mut out[c * nl * nl..(c + 1) * nl * nl], &mut tmp);
        }
        out
    }
}

fn restrict_level<T: Real>(table: &ProductTable<T>, dx: usize, level: usize, child: &[T]) -> Vec<T> {
    let np = table.np;
    let mom = np.pow(dx as u32);
    let cpd = 1usize << level;
    let ccpd = cpd * 2;
    let ncell = cpd.pow(dx as u32);
    let mut parent = vec![T::zero(); ncell * mom];
    let mut pc = vec![0usize; dx];
    let mut cc = vec![0usize; dx];
    let mut buf = vec![T::zero(); mom];
    let mut buf2 = vec![T::zero(); mom];
    for p in 0..ncell {
        let mut rem = p;
        for m in (0..dx).rev() {
            pc[m] = rem % cpd;
            rem /= cpd;
        }
        let out = &mut parent[p * mom..(p + 1) * mom];
        for corner in 0..(1usize << dx) {
            let mut ci = 0;
            for m in 0..dx {
                let half = (corner >> (dx - 1 - m)) & 1;
                cc[m] = 2 * pc[m] + half;
                ci = ci * ccpd + cc[m];
            }
            buf.copy_from_slice(&child[ci * mom..(ci + 1) * mom]);
            // Apply the 1D restriction along each moment axis.
            for m in 0..dx {
                let half = (corner >> (dx - 1 - m)) & 1;
                let r = &table.restrict[half];
                let stride = np.pow((dx - 1 - m) as u32);
                let outer = mom / (np * stride);
                buf2.iter_mut().for_each(|v| *v = T::zero());
                for o in 0..outer {
                    for a in 0..np {
                        for b in 0..np {
                            let w = r[a * np + b];
                            for s in 0..stride {
                                buf2[(o * np + a) * stride + s] += w * buf[(o * np + b) * stride + s];
                            }
                        }
                    }
                }
                std::mem::swap(&mut buf, &mut buf2);
            }
            for (o, v) in out.iter_mut().zip(buf.iter()) {
                *o += *v;
            }
        }
    }
    parent
}

/// Applies the cell matrices of one level to per-cell data with `ncomp`
/// components (layout of [`GridShape`]). The result goes to components
/// `offset..offset + ncomp` of `out`, which has `out_ncomp` components.
pub fn apply_cell_matrices<T: Real>(
    shape: GridShape,
    ncomp: usize,
    mats: &[T],
    data: &[T],
    out: &mut [T],
    out_ncomp: usize,
    offset: usize,
) {
    let nl = shape.n.pow(shape.dx as u32);
    for_each_cell(shape, |c, offs| {
        let x = &mats[c * nl * nl..(c + 1) * nl * nl];
        for (r, &or) in offs.iter().enumerate() {
            let o = or * out_ncomp + offset;
            let dst = &mut out[o..o + ncomp];
            dst.iter_mut().for_each(|v| *v = T::zero());
            for (s, &os) in offs.iter().enumerate() {
                let w = x[r * nl + s];
                let src = &data[os * ncomp..(os + 1) * ncomp];
                for (d, v) in dst.iter_mut().zip(src.iter()) {
                    *d += w * *v;
                }
            }
        }
    });
}

/// Point values of per-cell Legendre data at local coordinates `t` inside
/// each cell (row-major tuples over `t.len()^dx`), one output per cell and
/// point.
pub fn sample_cells<T: Real>(shape: GridShape, cells: &[T], t: &[f64]) -> Vec<f64> {
    let n = shape.n;
    let np = t.len();
    let dx = shape.dx;
    let cpd = shape.cells_per_dim() as f64;
    let scale = cpd.powf(dx as f64 / 2.0);
    let vals: Vec<Vec<f64>> = t.iter().map(|&x| (0..n).map(|i| legendre01(i, x)).collect()).collect();
    let npts = np.pow(dx as u32);
    let mut out = vec![0.0; shape.num_cells() * npts];
    for_each_cell(shape, |c, offs| {
        for p in 0..npts {
            let mut s = 0.0;
            for (r, &o) in offs.iter().enumerate() {
                let mut w = scale;
                let (mut pp, mut rr) = (p, r);
                for _ in 0..dx {
                    w *= vals[pp % np][rr % n];
                    pp /= np;
                    rr /= n;
                }
                s += w * cells[o].as_f64();
            }
            out[c * npts + p] = s;
        }
    });
    out
}

/// Cached two-scale filter, product table and shapes for one `(dx, k, N)`.
#[derive(Clone, Debug)]
pub struct GridTools<T> {
    pub dx: usize,
    pub k: usize,
    pub max_level: usize,
    pub two_scale: TwoScale<T>,
    pub products: ProductTable<T>,
}

impl<T: Real> GridTools<T> {
    pub fn new(basis: &Basis1D, dx: usize) -> Self {
        GridTools {
            dx,
            k: basis.k(),
            max_level: basis.config.max_level,
            two_scale: TwoScale::new(basis),
            products: ProductTable::new(basis.k()),
        }
    }

    pub fn shape(&self, level: usize) -> GridShape {
        GridShape { dx: self.dx, n: self.k + 1, level }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis1d::Basis1DConfig;

    fn tools(k: usize, n: usize, dx: usize) -> GridTools<f64> {
        GridTools::new(&Basis1D::new(Basis1DConfig { k, max_level: n }).unwrap(), dx)
    }

    #[test]
    fn round_trip_2d() {
        let t = tools(2, 3, 2);
        let shape = t.shape(3);
        let v: Vec<f64> = (0..shape.len(2)).map(|i| ((i * 7919 % 113) as f64) / 57.0 - 1.0).collect();
        let mut w = v.clone();
        forward(&t.two_scale, shape, 2, &mut w).unwrap();
        let e0: f64 = v.iter().map(|x| x * x).sum();
        let e1: f64 = w.iter().map(|x| x * x).sum();
        assert!((e0 - e1).abs() < 1e-12 * e0);
        inverse(&t.two_scale, shape, 2, &mut w).unwrap();
        for (a, b) in v.iter().zip(w.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    /// Brute-force `int_C W l_r l_s` for a 1D field against the pyramid.
    #[test]
    fn cell_matrices_match_quadrature_1d() {
        let k = 2;
        let nlev = 3;
        let t = tools(k, nlev, 1);
        let shape = t.shape(nlev);
        let w: Vec<f64> = (0..shape.len(1)).map(|i| ((i * 31 % 17) as f64) / 9.0 - 0.8).collect();
        let pyr = MomentPyramid::new(&t.products, shape, &w);
        let (xq, wq) = quadrature::gauss_legendre(k + 2);
        for level in 0..=nlev {
            let mats = pyr.level_matrices(&t.products, level);
            let ncell = 1 << level;
            let h = 1.0 / ncell as f64;
            for c in 0..ncell {
                for r in 0..=k {
                    for s in 0..=k {
                        // Integrate over the fine cells inside c.
                        let mut acc = 0.0;
                        let fine = 1 << (nlev - level);
                        let hf = h / fine as f64;
                        for f in 0..fine {
                            let fc = c * fine + f;
                            for (x, wt) in xq.iter().zip(wq.iter()) {
                                let y = (fc as f64 + x) * hf;
                                let wval: f64 = (0..=k)
                                    .map(|i| w[fc * (k + 1) + i] * legendre01(i, *x) / hf.sqrt())
                                    .sum();
                                let tl = (y - c as f64 * h) / h;
                                acc += wt * hf * wval * legendre01(r, tl) * legendre01(s, tl) / h;
                            }
                        }
                        let got = mats[c * (k + 1) * (k + 1) + r * (k + 1) + s];
                        assert!((got - acc).abs() < 1e-12, "level {level} cell {c} ({r},{s}): {got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn cell_matrices_of_constant_field_are_scaled_identity() {
        let t = tools(1, 2, 2);
        let shape = t.shape(2);
        // W = 3: per-cell constant coefficient 3 * sqrt(cell volume).
        let mut w = vec![0.0; shape.len(1)];
        for_each_cell(shape, |_, offs| w[offs[0]] = 3.0 * 0.25);
        let pyr = MomentPyramid::new(&t.products, shape, &w);
        for level in 0..=2 {
            let m = pyr.level_matrices(&t.products, level);
            let nl = 4;
            for c in 0..(1 << (2 * level)) {
                for r in 0..nl {
                    for s in 0..nl {
                        let want = if r == s { 3.0 } else { 0.0 };
                        assert!((m[c * 16 + r * nl + s] - want).abs() < 1e-13);
                    }
                }
            }
        }
    }
}
