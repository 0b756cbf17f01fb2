//! Exact integer and modular linear algebra.
//!
//! Everything here works on arbitrary-precision integers; nothing is ever
//! rounded. Matrices are plain values: every public operation returns a new
//! matrix and leaves its inputs untouched.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_bigint::{BigInt, RandBigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Arbitrary-precision signed integer.
pub type Int = BigInt;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("{0} is not invertible modulo {1}")]
    NotInvertible(Int, Int),
    #[error("matrix is singular modulo {0}")]
    Singular(Int),
    #[error("modulus must be at least 2, got {0}")]
    InvalidModulus(Int),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A modulus `q >= 2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Int", into = "Int")]
pub struct Modulus(Int);

impl Modulus {
    pub fn new(q: impl Into<Int>) -> Result<Self, LinalgError> {
        let q = q.into();
        if q < Int::from(2) {
            return Err(LinalgError::InvalidModulus(q));
        }
        Ok(Modulus(q))
    }

    pub fn value(&self) -> &Int {
        &self.0
    }

    /// Reduce into `[0, q)`.
    pub fn reduce(&self, a: &Int) -> Int {
        a.mod_floor(&self.0)
    }

    /// Symmetric representative in `(-q/2, q/2]`.
    pub fn center(&self, a: &Int) -> Int {
        let r = self.reduce(a);
        if &r * 2 > self.0 {
            r - &self.0
        } else {
            r
        }
    }

    pub fn bits(&self) -> u64 {
        self.0.bits()
    }
}

impl TryFrom<Int> for Modulus {
    type Error = LinalgError;
    fn try_from(q: Int) -> Result<Self, Self::Error> {
        Modulus::new(q)
    }
}

impl From<Modulus> for Int {
    fn from(m: Modulus) -> Int {
        m.0
    }
}

impl fmt::Display for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Dense row-major matrix of arbitrary-precision integers.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Int>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![Int::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Int::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Int>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(IntMatrix { rows, cols, data })
    }

    /// Build from rows. Every row must have the same length; an empty
    /// iterator produces a `0 x cols` matrix with `cols = 0`.
    pub fn from_rows<R>(rows: impl IntoIterator<Item = R>) -> Result<Self, LinalgError>
    where
        R: IntoIterator,
        R::Item: Into<Int>,
    {
        let mut data = Vec::new();
        let mut n_rows = 0;
        let mut n_cols = None;
        for row in rows {
            let before = data.len();
            data.extend(row.into_iter().map(Into::into));
            let len = data.len() - before;
            match n_cols {
                None => n_cols = Some(len),
                Some(c) if c != len => {
                    return Err(LinalgError::Dimension(format!(
                        "row {n_rows} has {len} entries, expected {c}"
                    )))
                }
                _ => {}
            }
            n_rows += 1;
        }
        Ok(IntMatrix {
            rows: n_rows,
            cols: n_cols.unwrap_or(0),
            data,
        })
    }

    /// Convenience constructor for small literal matrices.
    pub fn from_i64(rows: &[&[i64]]) -> Self {
        Self::from_rows(rows.iter().map(|r| r.iter().copied()))
            .expect("rows of equal length")
    }

    pub fn diag(entries: &[i64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = Int::from(e);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[Int] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vecs(&self) -> Vec<Vec<Int>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<Int> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn entries(&self) -> &[Int] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].clone();
            }
        }
        t
    }

    pub fn mul(&self, other: &IntMatrix) -> Result<IntMatrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = IntMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = &other[(k, j)];
                    if !b.is_zero() {
                        out[(i, j)] += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Product reduced into `[0, q)`.
    pub fn mul_mod(&self, other: &IntMatrix, q: &Modulus) -> Result<IntMatrix, LinalgError> {
        Ok(self.mul(other)?.reduce_mod(q))
    }

    pub fn reduce_mod(&self, q: &Modulus) -> IntMatrix {
        IntMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| q.reduce(x)).collect(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> IntMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        IntMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, idx: &[usize]) -> IntMatrix {
        let mut out = IntMatrix::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            for (jj, &j) in idx.iter().enumerate() {
                out[(i, jj)] = self[(i, j)].clone();
            }
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &IntMatrix) -> Result<IntMatrix, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::Dimension("hconcat row mismatch".into()));
        }
        let rows = (0..self.rows).map(|i| {
            self.row(i)
                .iter()
                .chain(other.row(i))
                .cloned()
                .collect::<Vec<_>>()
        });
        IntMatrix::from_rows(rows).map(|m| IntMatrix {
            cols: self.cols + other.cols,
            ..m
        })
    }

    /// Vertical concatenation.
    pub fn vconcat(&self, other: &IntMatrix) -> Result<IntMatrix, LinalgError> {
        if self.cols != other.cols {
            return Err(LinalgError::Dimension("vconcat column mismatch".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(IntMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|x| x.is_zero() || x.is_one())
    }

    pub fn max_bits(&self) -> u64 {
        self.data.iter().map(|x| x.bits()).max().unwrap_or(0)
    }

    /// Row-major decimal strings.
    pub fn to_strings(&self) -> Vec<String> {
        self.data.iter().map(|x| x.to_string()).collect()
    }

    pub fn from_strings(rows: usize, cols: usize, data: &[String]) -> Result<Self, LinalgError> {
        let parsed = data
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<Int>()
                    .map_err(|_| LinalgError::Dimension(format!("not an integer: {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        IntMatrix::from_vec(rows, cols, parsed)
    }
}

impl Index<(usize, usize)> for IntMatrix {
    type Output = Int;
    fn index(&self, (i, j): (usize, usize)) -> &Int {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for IntMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Int {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "IntMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

/// Extended Euclid: `(g, s, t)` with `g = gcd(a, b) >= 0` and `s*a + t*b = g`.
pub fn egcd(a: &Int, b: &Int) -> (Int, Int, Int) {
    let (mut old_r, mut r) = (a.clone(), b.clone());
    let (mut old_s, mut s) = (Int::one(), Int::zero());
    let (mut old_t, mut t) = (Int::zero(), Int::one());
    while !r.is_zero() {
        let quot = old_r.div_floor(&r);
        let next_r = &old_r - &quot * &r;
        old_r = std::mem::replace(&mut r, next_r);
        let next_s = &old_s - &quot * &s;
        old_s = std::mem::replace(&mut s, next_s);
        let next_t = &old_t - &quot * &t;
        old_t = std::mem::replace(&mut t, next_t);
    }
    if old_r.is_negative() {
        (-old_r, -old_s, -old_t)
    } else {
        (old_r, old_s, old_t)
    }
}

/// Inverse of `a` modulo `q`, in `[0, q)`.
pub fn mod_inv(a: &Int, q: &Modulus) -> Result<Int, LinalgError> {
    let a = q.reduce(a);
    let (g, s, _) = egcd(&a, q.value());
    if !g.is_one() {
        return Err(LinalgError::NotInvertible(a, q.value().clone()));
    }
    Ok(q.reduce(&s))
}

fn row_axpy(target: &mut [Int], factor: &Int, source: &[Int]) {
    // target -= factor * source
    if factor.is_zero() {
        return;
    }
    for (t, s) in target.iter_mut().zip(source) {
        if !s.is_zero() {
            *t -= factor * s;
        }
    }
}

/// Row-style Hermite Normal Form of the row lattice of `m`.
///
/// The result is upper echelon with positive pivots, every entry above a
/// pivot lies in `[0, pivot)`, and zero rows are dropped. Two matrices span
/// the same row lattice iff their HNFs are equal.
pub fn hnf(m: &IntMatrix) -> IntMatrix {
    let mut rows = m.row_vecs();
    let n = rows.len();
    let cols = m.cols();
    let mut pr = 0;
    for col in 0..cols {
        if pr == n {
            break;
        }
        loop {
            // smallest nonzero |entry| in this column among the unfinished rows
            let best = (pr..n)
                .filter(|&i| !rows[i][col].is_zero())
                .min_by(|&i, &j| rows[i][col].abs().cmp(&rows[j][col].abs()));
            let Some(best) = best else { break };
            rows.swap(pr, best);
            let mut done = true;
            for i in pr + 1..n {
                if rows[i][col].is_zero() {
                    continue;
                }
                let quot = rows[i][col].div_floor(&rows[pr][col]);
                let (head, tail) = rows.split_at_mut(i);
                row_axpy(&mut tail[0], &quot, &head[pr]);
                if !rows[i][col].is_zero() {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if rows[pr][col].is_zero() {
            continue;
        }
        if rows[pr][col].is_negative() {
            for x in rows[pr].iter_mut() {
                *x = -&*x;
            }
        }
        for i in 0..pr {
            let quot = rows[i][col].div_floor(&rows[pr][col]);
            let (head, tail) = rows.split_at_mut(pr);
            row_axpy(&mut head[i], &quot, &tail[0]);
        }
        pr += 1;
    }
    rows.truncate(pr);
    IntMatrix {
        rows: pr,
        cols,
        data: rows.into_iter().flatten().collect(),
    }
}

/// True when `v` lies in the row lattice of `basis`.
pub fn lattice_contains(basis: &IntMatrix, v: &[Int]) -> bool {
    let h = hnf(basis);
    let mut r: Vec<Int> = v.to_vec();
    let mut pr = 0;
    for col in 0..basis.cols() {
        if pr < h.rows() && !h[(pr, col)].is_zero() {
            let p = &h[(pr, col)];
            let (quot, rem) = r[col].div_mod_floor(p);
            if !rem.is_zero() {
                return false;
            }
            row_axpy(&mut r, &quot, h.row(pr));
            pr += 1;
        } else if !r[col].is_zero() {
            return false;
        }
    }
    true
}

/// Euclidean row elimination of a square matrix mod q: returns the upper
/// triangular form together with the sign of the accumulated row swaps.
fn triangularize_mod(m: &IntMatrix, q: &Modulus, aug: Option<&mut Vec<Vec<Int>>>) -> (Vec<Vec<Int>>, bool) {
    let n = m.rows();
    let mut rows: Vec<Vec<Int>> = m.reduce_mod(q).row_vecs();
    let mut negate = false;
    let mut aug = aug;
    for col in 0..n {
        loop {
            let best = (col..n)
                .filter(|&i| !rows[i][col].is_zero())
                .min_by(|&i, &j| rows[i][col].cmp(&rows[j][col]));
            let Some(best) = best else { break };
            if best != col {
                rows.swap(col, best);
                if let Some(a) = aug.as_deref_mut() {
                    a.swap(col, best);
                }
                negate = !negate;
            }
            let mut done = true;
            for i in col + 1..n {
                if rows[i][col].is_zero() {
                    continue;
                }
                let quot = rows[i][col].div_floor(&rows[col][col]);
                let (head, tail) = rows.split_at_mut(i);
                row_axpy(&mut tail[0], &quot, &head[col]);
                for x in tail[0].iter_mut() {
                    *x = q.reduce(x);
                }
                if let Some(a) = aug.as_deref_mut() {
                    let (ah, at) = a.split_at_mut(i);
                    row_axpy(&mut at[0], &quot, &ah[col]);
                    for x in at[0].iter_mut() {
                        *x = q.reduce(x);
                    }
                }
                if !rows[i][col].is_zero() {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
    }
    (rows, negate)
}

/// Determinant reduced into `[0, q)`.
pub fn det_mod(m: &IntMatrix, q: &Modulus) -> Result<Int, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Dimension("determinant of a non-square matrix".into()));
    }
    let (rows, negate) = triangularize_mod(m, q, None);
    let mut d = Int::one();
    for (i, r) in rows.iter().enumerate() {
        d = q.reduce(&(d * &r[i]));
    }
    if negate {
        d = q.reduce(&-d);
    }
    Ok(d)
}

/// Inverse modulo q. Works for composite q as long as the determinant is a
/// unit.
pub fn inverse_mod(m: &IntMatrix, q: &Modulus) -> Result<IntMatrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::Dimension("inverse of a non-square matrix".into()));
    }
    let n = m.rows();
    let mut aug = IntMatrix::identity(n).row_vecs();
    let (mut rows, _) = triangularize_mod(m, q, Some(&mut aug));
    for col in 0..n {
        let inv = mod_inv(&rows[col][col], q).map_err(|_| LinalgError::Singular(q.value().clone()))?;
        for x in rows[col].iter_mut() {
            *x = q.reduce(&(&*x * &inv));
        }
        for x in aug[col].iter_mut() {
            *x = q.reduce(&(&*x * &inv));
        }
    }
    // back substitution
    for col in (0..n).rev() {
        for i in 0..col {
            let f = rows[i][col].clone();
            if f.is_zero() {
                continue;
            }
            let (head, tail) = rows.split_at_mut(col);
            row_axpy(&mut head[i], &f, &tail[0]);
            for x in head[i].iter_mut() {
                *x = q.reduce(x);
            }
            let (ah, at) = aug.split_at_mut(col);
            row_axpy(&mut ah[i], &f, &at[0]);
            for x in ah[i].iter_mut() {
                *x = q.reduce(x);
            }
        }
    }
    IntMatrix::from_rows(aug)
}

/// Rank over the rationals (fraction-free elimination).
pub fn rank(m: &IntMatrix) -> usize {
    let mut rows = m.row_vecs();
    let n = rows.len();
    let mut r = 0;
    let mut prev = Int::one();
    for col in 0..m.cols() {
        if r == n {
            break;
        }
        let Some(p) = (r..n).find(|&i| !rows[i][col].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        for i in r + 1..n {
            for j in col + 1..m.cols() {
                let v = &rows[r][col] * &rows[i][j] - &rows[i][col] * &rows[r][j];
                rows[i][j] = v / &prev;
            }
            rows[i][col] = Int::zero();
        }
        prev = rows[r][col].clone();
        r += 1;
    }
    r
}

/// Basis (as rows) of the rational null space `{z : m z = 0}`, in reduced
/// echelon coordinates: one vector per free column with a 1 in that column.
pub fn kernel_rational(m: &IntMatrix) -> Vec<Vec<BigRational>> {
    let cols = m.cols();
    let mut rows: Vec<Vec<BigRational>> = (0..m.rows())
        .map(|i| m.row(i).iter().map(|x| BigRational::from_integer(x.clone())).collect())
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..cols {
        let Some(p) = (r..rows.len()).find(|&i| !rows[i][col].is_zero()) else {
            continue;
        };
        rows.swap(r, p);
        let inv = rows[r][col].recip();
        for x in rows[r].iter_mut() {
            *x *= &inv;
        }
        for i in 0..rows.len() {
            if i != r && !rows[i][col].is_zero() {
                let f = rows[i][col].clone();
                let (src, dst) = if i < r {
                    let (a, b) = rows.split_at_mut(r);
                    (&b[0], &mut a[i])
                } else {
                    let (a, b) = rows.split_at_mut(i);
                    (&a[r], &mut b[0])
                };
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    if !s.is_zero() {
                        *d -= &f * s;
                    }
                }
            }
        }
        pivots.push(col);
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut z = vec![BigRational::zero(); cols];
            z[f] = BigRational::one();
            for (pi, &pc) in pivots.iter().enumerate() {
                z[pc] = -rows[pi][f].clone();
            }
            z
        })
        .collect()
}

/// Solve `c * basis = v` over the rationals. Returns `None` when `v` is not
/// in the rational row space.
pub fn solve_left_rational(basis: &IntMatrix, v: &[Int]) -> Option<Vec<BigRational>> {
    // Null space of [basis; v]^T restricted to last coordinate = -1.
    let k = basis.rows();
    let mut t = IntMatrix::zeros(basis.cols(), k + 1);
    for i in 0..k {
        for j in 0..basis.cols() {
            t[(j, i)] = basis[(i, j)].clone();
        }
    }
    for j in 0..basis.cols() {
        t[(j, k)] = v[j].clone();
    }
    let ker = kernel_rational(&t);
    let z = ker.into_iter().find(|z| !z[k].is_zero())?;
    let scale = -z[k].recip();
    Some(z[..k].iter().map(|x| x * &scale).collect())
}

/// Column-echelon form via unimodular column operations:
/// returns `(v, w)` with `v` unimodular, `w = v^{-1}`, and `m * v = [T | 0]`
/// where `T` has `rank(m)` columns.
fn column_echelon(m: &IntMatrix) -> (IntMatrix, IntMatrix, usize) {
    let n = m.cols();
    let mut a = m.clone();
    let mut v = IntMatrix::identity(n);
    let mut w = IntMatrix::identity(n);
    let mut pc = 0;
    for r in 0..a.rows() {
        if pc == n {
            break;
        }
        loop {
            let best = (pc..n)
                .filter(|&j| !a[(r, j)].is_zero())
                .min_by(|&i, &j| a[(r, i)].abs().cmp(&a[(r, j)].abs()));
            let Some(best) = best else { break };
            swap_cols(&mut a, pc, best);
            swap_cols(&mut v, pc, best);
            swap_rows(&mut w, pc, best);
            let mut done = true;
            for j in pc + 1..n {
                if a[(r, j)].is_zero() {
                    continue;
                }
                let quot = a[(r, j)].div_floor(&a[(r, pc)]);
                // col_j -= quot * col_pc ; inverse: row_pc += quot * row_j
                col_axpy(&mut a, j, &quot, pc);
                col_axpy(&mut v, j, &quot, pc);
                row_add_scaled(&mut w, pc, &quot, j);
                if !a[(r, j)].is_zero() {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if !a[(r, pc)].is_zero() {
            pc += 1;
        }
    }
    (v, w, pc)
}

fn swap_cols(m: &mut IntMatrix, a: usize, b: usize) {
    if a == b {
        return;
    }
    for i in 0..m.rows {
        m.data.swap(i * m.cols + a, i * m.cols + b);
    }
}

fn swap_rows(m: &mut IntMatrix, a: usize, b: usize) {
    if a == b {
        return;
    }
    for j in 0..m.cols {
        m.data.swap(a * m.cols + j, b * m.cols + j);
    }
}

fn col_axpy(m: &mut IntMatrix, target: usize, f: &Int, source: usize) {
    for i in 0..m.rows {
        let s = m[(i, source)].clone();
        if !s.is_zero() {
            m[(i, target)] -= f * s;
        }
    }
}

fn row_add_scaled(m: &mut IntMatrix, target: usize, f: &Int, source: usize) {
    for j in 0..m.cols {
        let s = m[(source, j)].clone();
        if !s.is_zero() {
            m[(target, j)] += f * s;
        }
    }
}

/// Rows `P` and columns `C`, each of size `r`, such that `m[P, C]` is
/// invertible mod q. Greedy elimination with unit pivots, lowest column then
/// lowest row first. May miss a block for composite q when only non-unit
/// entries combine to a unit.
pub fn unit_pivots_mod(m: &IntMatrix, q: &Modulus, r: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    if r == 0 {
        return Some((vec![], vec![]));
    }
    let mut w = m.reduce_mod(q).row_vecs();
    let mut used = vec![false; m.rows()];
    let (mut prow, mut pcol) = (Vec::with_capacity(r), Vec::with_capacity(r));
    for col in 0..m.cols() {
        let Some(p) = (0..m.rows()).find(|&i| !used[i] && w[i][col].gcd(q.value()).is_one()) else {
            continue;
        };
        let inv = mod_inv(&w[p][col], q).expect("unit");
        let pivot = w[p].clone();
        for i in 0..m.rows() {
            if used[i] || i == p || w[i][col].is_zero() {
                continue;
            }
            let f = q.reduce(&(&w[i][col] * &inv));
            for (x, y) in w[i].iter_mut().zip(&pivot).skip(col) {
                *x = q.reduce(&(&*x - &f * y));
            }
        }
        used[p] = true;
        prow.push(p);
        pcol.push(col);
        if prow.len() == r {
            return Some((prow, pcol));
        }
    }
    None
}

/// Basis (rows) of the integer kernel `{z in Z^n : m z = 0}`.
pub fn integer_kernel(m: &IntMatrix) -> IntMatrix {
    let (v, _, r) = column_echelon(m);
    let idx: Vec<usize> = (r..m.cols()).collect();
    v.select_cols(&idx).transpose()
}

/// Basis (rows) of `span_Q(rows of m) ∩ Z^n`.
pub fn saturation(m: &IntMatrix) -> IntMatrix {
    let (_, w, r) = column_echelon(m);
    let idx: Vec<usize> = (0..r).collect();
    w.select_rows(&idx)
}

pub fn dot(a: &[Int], b: &[Int]) -> Int {
    a.iter()
        .zip(b)
        .filter(|(x, y)| !x.is_zero() && !y.is_zero())
        .map(|(x, y)| x * y)
        .sum()
}

/// Convert to `f64` after multiplying by `2^-shift`, without overflowing on
/// values far beyond the `f64` range.
pub fn to_f64_scaled(x: &Int, shift: i64) -> f64 {
    let bits = x.bits() as i64;
    if bits <= 63 {
        let v = x.to_i64().unwrap_or(0) as f64;
        return v * 2f64.powi(-(shift as i32));
    }
    let drop = bits - 63;
    let top = (x.magnitude() >> (drop as usize)).to_u64().unwrap_or(0) as f64;
    let v = top * 2f64.powi((drop - shift) as i32);
    if x.sign() == Sign::Minus {
        -v
    } else {
        v
    }
}

/// Nearest integer to a finite `f64`.
pub fn round_f64(x: f64) -> Int {
    let r = x.round();
    if r.abs() < 9.0e15 {
        Int::from(r as i64)
    } else {
        let (mantissa, exponent, sign) = num_traits::float::FloatCore::integer_decode(r);
        let mut v = Int::from(mantissa);
        if exponent >= 0 {
            v <<= exponent as usize;
        } else {
            v >>= (-exponent) as usize;
        }
        if sign < 0 {
            -v
        } else {
            v
        }
    }
}

/// Miller-Rabin with fixed small bases plus random ones; deterministic for a
/// fixed rng.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &Int, rng: &mut R) -> bool {
    let two = Int::from(2);
    if n < &two {
        return false;
    }
    for p in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let p = Int::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let mut bases: Vec<Int> = [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]
        .iter()
        .map(|&b| Int::from(b))
        .collect();
    for _ in 0..8 {
        bases.push(rng.gen_bigint_range(&two, &n_minus_1));
    }
    'outer: for a in bases {
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// A prime with exactly `bits` bits (`bits >= 2`).
pub fn random_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Int {
    assert!(bits >= 2, "prime needs at least 2 bits");
    if bits == 2 {
        return Int::from(if rng.gen_bool(0.5) { 2 } else { 3 });
    }
    let low = Int::one() << (bits - 1) as usize;
    let high = Int::one() << bits as usize;
    loop {
        let mut c = rng.gen_bigint_range(&low, &high);
        if c.is_even() {
            c += 1u32;
        }
        while c < high {
            if is_probable_prime(&c, rng) {
                return c;
            }
            c += 2u32;
        }
    }
}
