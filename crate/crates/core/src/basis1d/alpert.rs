//! Alpert multiwavelet generators on (-1, 1).
//!
//! For degree `k` the generators `f_1..f_{k+1}` are piecewise polynomials of
//! degree `k` on (-1, 0) and (0, 1), orthogonal to all polynomials of degree
//! `k`, with `f_i` additionally orthogonal to `x^{k+1} .. x^{k+i-1}`. The
//! construction is carried out in exact rational arithmetic; only the final
//! normalization uses floating point.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

type Q = BigRational;

/// Piecewise polynomial on (-1, 0) and (0, 1), monomial coefficients.
#[derive(Clone, Debug)]
struct Piecewise {
    left: Vec<Q>,
    right: Vec<Q>,
}

/// Integral of x^n over (0, 1).
fn mono_right(n: usize) -> Q {
    Q::new(BigInt::one(), BigInt::from(n as i64 + 1))
}

/// Integral of x^n over (-1, 0).
fn mono_left(n: usize) -> Q {
    let v = mono_right(n);
    if n % 2 == 0 {
        v
    } else {
        -v
    }
}

fn inner(a: &Piecewise, b: &Piecewise) -> Q {
    let mut s = Q::zero();
    for (i, ai) in a.left.iter().enumerate() {
        for (j, bj) in b.left.iter().enumerate() {
            s += ai * bj * mono_left(i + j);
        }
    }
    for (i, ai) in a.right.iter().enumerate() {
        for (j, bj) in b.right.iter().enumerate() {
            s += ai * bj * mono_right(i + j);
        }
    }
    s
}

fn monomial(n: usize, deg: usize) -> Piecewise {
    let mut c = vec![Q::zero(); deg.max(n) + 1];
    c[n] = Q::one();
    Piecewise { left: c.clone(), right: c }
}

fn combine(terms: &[(Q, &Piecewise)], len: usize) -> Piecewise {
    let mut left = vec![Q::zero(); len];
    let mut right = vec![Q::zero(); len];
    for (w, p) in terms {
        for (i, c) in p.left.iter().enumerate() {
            left[i] += w * c;
        }
        for (i, c) in p.right.iter().enumerate() {
            right[i] += w * c;
        }
    }
    Piecewise { left, right }
}

/// One nonzero vector of the null space of an `r x (r+1)` rational matrix.
fn null_vector(mut m: Vec<Vec<Q>>, cols: usize) -> Vec<Q> {
    let rows = m.len();
    let mut pivot_cols = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let Some(p) = (row..rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(row, p);
        let inv = Q::one() / m[row][col].clone();
        for c in 0..cols {
            m[row][c] = &m[row][c] * &inv;
        }
        for r in 0..rows {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in 0..cols {
                    let t = &factor * &m[row][c];
                    m[r][c] -= t;
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
    }
    let free = (0..cols)
        .find(|c| !pivot_cols.contains(c))
        .expect("null space must be nontrivial");
    let mut v = vec![Q::zero(); cols];
    v[free] = Q::one();
    for (r, &pc) in pivot_cols.iter().enumerate() {
        v[pc] = -m[r][free].clone();
    }
    v
}

/// Normalized generators as monomial coefficients on each half.
#[derive(Clone, Debug, PartialEq)]
pub struct AlpertTable {
    pub k: usize,
    /// `right[i][n]`: coefficient of `x^n` of `f_{i+1}` on (0, 1).
    pub right: Vec<Vec<f64>>,
    /// `left[i][n]`: coefficient of `x^n` of `f_{i+1}` on (-1, 0).
    pub left: Vec<Vec<f64>>,
}

impl AlpertTable {
    /// Builds the table by exact Gram-Schmidt on the monomial complement.
    pub fn generate(k: usize) -> Self {
        let n = k + 1;
        // sign(x) x^j minus its projection onto P_k spans the complement W.
        let mono: Vec<Piecewise> = (0..=2 * k + 1).map(|p| monomial(p, k)).collect();
        let gram_pk: Vec<Vec<Q>> = (0..n)
            .map(|a| (0..n).map(|b| inner(&mono[a], &mono[b])).collect())
            .collect();
        let mut w = Vec::with_capacity(n);
        for j in 0..n {
            let mut s = monomial(j, k);
            for c in s.left.iter_mut() {
                *c = -c.clone();
            }
            let rhs: Vec<Q> = (0..n).map(|a| inner(&mono[a], &s)).collect();
            let proj = solve(gram_pk.clone(), rhs);
            let mut terms: Vec<(Q, &Piecewise)> = vec![(Q::one(), &s)];
            for (a, c) in proj.iter().enumerate() {
                terms.push((-c.clone(), &mono[a]));
            }
            w.push(combine(&terms, n));
        }

        let mut f: Vec<Option<Piecewise>> = vec![None; n];
        for i in (1..=n).rev() {
            let mut rows: Vec<Vec<Q>> = Vec::new();
            for p in 1..i {
                let xm = &mono[k + p];
                rows.push(w.iter().map(|wj| inner(wj, xm)).collect());
            }
            for m in (i + 1)..=n {
                let fm = f[m - 1].as_ref().unwrap();
                rows.push(w.iter().map(|wj| inner(wj, fm)).collect());
            }
            let v = null_vector(rows, n);
            let terms: Vec<(Q, &Piecewise)> = v.iter().cloned().zip(w.iter()).collect();
            f[i - 1] = Some(combine(&terms, n));
        }

        let mut right = Vec::with_capacity(n);
        let mut left = Vec::with_capacity(n);
        for p in f.into_iter().map(Option::unwrap) {
            let norm2 = inner(&p, &p).to_f64().unwrap();
            let mut scale = 1.0 / norm2.sqrt();
            let at_one: Q = p.right.iter().fold(Q::zero(), |acc, c| acc + c);
            if at_one.is_negative() {
                scale = -scale;
            }
            right.push(p.right.iter().map(|c| c.to_f64().unwrap() * scale).collect());
            left.push(p.left.iter().map(|c| c.to_f64().unwrap() * scale).collect());
        }
        AlpertTable { k, right, left }
    }

    /// Closed-form generators for `k = 3`.
    pub fn explicit_k3() -> Self {
        let s1 = (15.0f64 / 34.0).sqrt();
        let s2 = (1.0f64 / 42.0).sqrt();
        let s3 = 0.5 * (35.0f64 / 34.0).sqrt();
        let s4 = 0.5 * (5.0f64 / 42.0).sqrt();
        let right: Vec<Vec<f64>> = vec![
            vec![s1, 4.0 * s1, -30.0 * s1, 28.0 * s1],
            vec![-4.0 * s2, 105.0 * s2, -300.0 * s2, 210.0 * s2],
            vec![-5.0 * s3, 48.0 * s3, -105.0 * s3, 64.0 * s3],
            vec![-16.0 * s4, 105.0 * s4, -192.0 * s4, 105.0 * s4],
        ];
        let left = right
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let parity = if (i + 1 + 3) % 2 == 0 { 1.0 } else { -1.0 };
                r.iter()
                    .enumerate()
                    .map(|(n, c)| if n % 2 == 0 { parity * c } else { -parity * c })
                    .collect()
            })
            .collect();
        AlpertTable { k: 3, right, left }
    }

    /// Table used by the solver: closed form for `k = 3`, generated otherwise.
    pub fn for_degree(k: usize) -> Self {
        if k == 3 {
            Self::explicit_k3()
        } else {
            Self::generate(k)
        }
    }

    /// Value of `f_{i+1}` at `x`, choosing the piece by `right_piece`.
    pub fn eval(&self, i: usize, x: f64, right_piece: bool) -> f64 {
        let c = if right_piece { &self.right[i] } else { &self.left[i] };
        horner(c, x)
    }

    /// Derivative of `f_{i+1}` at `x` on the selected piece.
    pub fn eval_deriv(&self, i: usize, x: f64, right_piece: bool) -> f64 {
        let c = if right_piece { &self.right[i] } else { &self.left[i] };
        let mut acc = 0.0;
        for n in (1..c.len()).rev() {
            acc = acc * x + n as f64 * c[n];
        }
        acc
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Solves a small nonsingular rational system.
fn solve(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Vec<Q> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).find(|&r| !a[r][col].is_zero()).expect("singular");
        a.swap(col, p);
        b.swap(col, p);
        let inv = Q::one() / a[col][col].clone();
        for c in col..n {
            a[col][c] = &a[col][c] * &inv;
        }
        b[col] = &b[col] * &inv;
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col].clone();
                for c in col..n {
                    let t = &factor * &a[col][c];
                    a[r][c] -= t;
                }
                let t = &factor * &b[col];
                b[r] -= t;
            }
        }
    }
    b
}
