//! One-dimensional nested spaces on [0, 1]: orthonormal Legendre scaling
//! functions at level 0, Alpert multiwavelets at levels `l >= 1`, Gauss
//! quadrature, the hierarchical transform and sparse 1D operator matrices.
//!
//! A 1D hierarchical element `(l, j)` is addressed by a compact id:
//! `0` for level 0 and `2^(l-1) + j` for `l >= 1`, so the ids of all levels
//! up to `N` fill `0..2^N`.

pub mod alpert;
pub mod ops;
pub mod quadrature;
pub mod transform;

pub use alpert::AlpertTable;
pub use ops::{BlockOp1D, Boundary, OpKind};
pub use transform::TwoScale;

use crate::error::{Error, Result};

/// Configuration of the 1D hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Basis1DConfig {
    /// Polynomial degree.
    pub k: usize,
    /// Finest level `N`.
    pub max_level: usize,
}

/// Direction of a one-sided limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Limit from below, `y -> y0^-`.
    Left,
    /// Limit from above, `y -> y0^+`.
    Right,
}

/// Value and derivative of one basis function at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveletEval {
    pub level: u32,
    pub cell: u32,
    /// 1-based polynomial index.
    pub index: usize,
    pub x: f64,
    pub value: f64,
    pub derivative: f64,
}

/// Level of a compact 1D id.
#[inline]
pub fn level_of(id: u32) -> u32 {
    if id == 0 {
        0
    } else {
        32 - id.leading_zeros()
    }
}

/// Cell index of a compact 1D id.
#[inline]
pub fn cell_of(id: u32) -> u32 {
    if id == 0 {
        0
    } else {
        id - (1 << (level_of(id) - 1))
    }
}

/// Compact id of `(level, cell)`.
#[inline]
pub fn id_of(level: u32, cell: u32) -> u32 {
    if level == 0 {
        0
    } else {
        (1 << (level - 1)) + cell
    }
}

/// Number of cells of the hierarchical level `l`: `max(1, 2^(l-1))`.
#[inline]
pub fn cells_at_level(level: u32) -> u32 {
    if level == 0 {
        1
    } else {
        1 << (level - 1)
    }
}

/// Closed support `[a, b]` of the basis functions with this id.
#[inline]
pub fn support(id: u32) -> (f64, f64) {
    let l = level_of(id);
    if l == 0 {
        return (0.0, 1.0);
    }
    let w = 0.5f64.powi(l as i32 - 1);
    let j = cell_of(id) as f64;
    (j * w, (j + 1.0) * w)
}

/// Points where the functions with this id may be discontinuous.
pub fn breakpoints(id: u32) -> Vec<f64> {
    let (a, b) = support(id);
    if level_of(id) == 0 {
        vec![a, b]
    } else {
        vec![a, 0.5 * (a + b), b]
    }
}

/// Orthonormal Legendre polynomial `sqrt(2i+1) P_i(2y-1)` on [0, 1], 0-based `i`.
#[inline]
pub fn legendre01(i: usize, y: f64) -> f64 {
    let (p, _) = quadrature::legendre_with_deriv(i, 2.0 * y - 1.0);
    ((2 * i + 1) as f64).sqrt() * p
}

/// Derivative of [`legendre01`].
#[inline]
pub fn legendre01_deriv(i: usize, y: f64) -> f64 {
    let (_, dp) = quadrature::legendre_with_deriv(i, 2.0 * y - 1.0);
    2.0 * ((2 * i + 1) as f64).sqrt() * dp
}

/// Precomputed 1D hierarchical basis.
#[derive(Clone, Debug)]
pub struct Basis1D {
    pub config: Basis1DConfig,
    pub table: AlpertTable,
    /// Gauss nodes on [0, 1] with `k + 2` points.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Basis1D {
    pub fn new(config: Basis1DConfig) -> Result<Self> {
        if config.k > 3 {
            return Err(Error::Config(format!(
                "polynomial degree {} not supported (0..=3)",
                config.k
            )));
        }
        if config.max_level > 24 {
            return Err(Error::Config(format!("max level {} too large", config.max_level)));
        }
        let (nodes, weights) = quadrature::gauss_legendre(config.k + 2);
        Ok(Basis1D { config, table: AlpertTable::for_degree(config.k), nodes, weights })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.config.k
    }

    /// Number of functions per element, `k + 1`.
    #[inline]
    pub fn n(&self) -> usize {
        self.config.k + 1
    }

    /// Number of 1D ids up to the finest level, `2^N`.
    #[inline]
    pub fn num_ids(&self) -> usize {
        1 << self.config.max_level
    }

    /// One-sided values of all `k + 1` functions of `id` at `y`.
    ///
    /// Outside the closed support, and outside [0, 1], the values are zero.
    pub fn trace(&self, id: u32, y: f64, side: Side, out: &mut [f64]) {
        let n = self.n();
        let (a, b) = support(id);
        let inside = match side {
            Side::Left => y > a && y <= b,
            Side::Right => y >= a && y < b,
        };
        if !inside {
            out[..n].iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let l = level_of(id);
        if l == 0 {
            for (i, o) in out[..n].iter_mut().enumerate() {
                *o = legendre01(i, y);
            }
            return;
        }
        let mid = 0.5 * (a + b);
        let right_piece = match side {
            Side::Left => y > mid,
            Side::Right => y >= mid,
        };
        let scale = 2f64.powf(l as f64 / 2.0);
        let x = 2.0 * (y - a) / (b - a) - 1.0;
        for (i, o) in out[..n].iter_mut().enumerate() {
            *o = scale * self.table.eval(i, x, right_piece);
        }
    }

    /// Values and derivatives at a point strictly inside a piece of `id`.
    pub fn interior(&self, id: u32, y: f64, vals: &mut [f64], ders: &mut [f64]) {
        let n = self.n();
        let l = level_of(id);
        if l == 0 {
            for i in 0..n {
                vals[i] = legendre01(i, y);
                ders[i] = legendre01_deriv(i, y);
            }
            return;
        }
        let (a, b) = support(id);
        if y <= a || y >= b {
            vals[..n].iter_mut().for_each(|v| *v = 0.0);
            ders[..n].iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let scale = 2f64.powf(l as f64 / 2.0);
        let dscale = scale * 2.0 / (b - a);
        let x = 2.0 * (y - a) / (b - a) - 1.0;
        let right_piece = x > 0.0;
        for i in 0..n {
            vals[i] = scale * self.table.eval(i, x, right_piece);
            ders[i] = dscale * self.table.eval_deriv(i, x, right_piece);
        }
    }

    /// Point value with the half-open cell convention.
    ///
    /// `y = 0` and `y = 1` use the one-sided trace from inside the domain;
    /// interior breakpoints of the function are rejected.
    pub fn eval(&self, id: u32, i: usize, y: f64) -> Result<f64> {
        if i >= self.n() {
            return Err(Error::Precondition(format!("index {} out of range", i + 1)));
        }
        if !(0.0..=1.0).contains(&y) || y.is_nan() {
            return Err(Error::Precondition(format!("point {y} outside [0, 1]")));
        }
        let mut buf = [0.0; 4];
        if y == 0.0 {
            self.trace(id, y, Side::Right, &mut buf);
        } else if y == 1.0 {
            self.trace(id, y, Side::Left, &mut buf);
        } else {
            if breakpoints(id).contains(&y) {
                return Err(Error::Precondition(format!(
                    "point {y} is an interior edge; use a one-sided trace"
                )));
            }
            self.trace(id, y, Side::Left, &mut buf);
        }
        Ok(buf[i])
    }

    /// Value and derivative of `v_{i,l}^j` at an interior point.
    pub fn eval_full(&self, level: u32, cell: u32, index: usize, x: f64) -> Result<WaveletEval> {
        check_level_cell(level, cell)?;
        let id = id_of(level, cell);
        let value = self.eval(id, index - 1, x)?;
        let mut v = [0.0; 4];
        let mut d = [0.0; 4];
        let (a, b) = support(id);
        let derivative = if x > a && x < b {
            self.interior(id, x, &mut v, &mut d);
            d[index - 1]
        } else {
            0.0
        };
        Ok(WaveletEval { level, cell, index, x, value, derivative })
    }
}

fn check_level_cell(level: u32, cell: u32) -> Result<()> {
    if cell >= cells_at_level(level) {
        return Err(Error::Precondition(format!("cell {cell} invalid at level {level}")));
    }
    Ok(())
}

/// Level-0 orthonormal Legendre value, 1-based `i`.
pub fn eval_scaling(k: usize, i: usize, x: f64) -> Result<f64> {
    if i == 0 || i > k + 1 {
        return Err(Error::Precondition(format!("index {i} outside 1..={}", k + 1)));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Precondition(format!("point {x} outside [0, 1]")));
    }
    Ok(legendre01(i - 1, x))
}

/// Multiwavelet `v_{i,l}^j(x)` for `l >= 1`, 1-based `i`.
pub fn eval_wavelet(k: usize, l: u32, j: u32, i: usize, x: f64) -> Result<f64> {
    if k > 3 {
        return Err(Error::Config(format!("no generator table for k = {k}")));
    }
    if l == 0 {
        return Err(Error::Precondition("wavelet level must be at least 1".into()));
    }
    if i == 0 || i > k + 1 {
        return Err(Error::Precondition(format!("index {i} outside 1..={}", k + 1)));
    }
    check_level_cell(l, j)?;
    let basis = Basis1D::new(Basis1DConfig { k, max_level: l as usize })?;
    basis.eval(id_of(l, j), i - 1, x)
}
