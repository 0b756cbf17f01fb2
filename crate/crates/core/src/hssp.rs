//! Hidden subset sum instances (`H = A X mod q`, `A` binary) and the attacks
//! that recover `A` and `X` from `H` and `q` alone.
//!
//! All three attacks share the first step ([`ns_step1`]), which computes the
//! rank-`B` lattice spanned by the hidden binary columns. They differ in how
//! the binary columns are extracted from that lattice: lattice reduction
//! ([`ns_step2_bkz`]), a linearized quadratic system
//! ([`multivariate_recover`]) or moment descent over the hidden
//! parallelepiped ([`statistical_recover`]).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use nalgebra::DMatrix;
use num_bigint::RandBigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{self, bkz_reduce, default_delta, lll_reduce, lll_reduce_fast, FastLll, LatticeBasis, LatticeError};
use crate::linalg::{self, dot, inverse_mod, unit_pivots_mod, Int, IntMatrix, LinalgError, Modulus};

/// Default `ι` in the modulus bound.
pub const DEFAULT_IOTA: f64 = 0.035;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HsspError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no invertible {0}x{0} block modulo q")]
    NoInvertibleBlock(usize),
    #[error("expected a rank-{expected} hidden lattice, the reduced basis suggests rank {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("found {found} of {needed} independent binary vectors")]
    NotEnoughBinaryVectors { found: usize, needed: usize },
    #[error("linearized system is underdetermined: {0}")]
    SystemUnderdetermined(String),
    #[error("no binary solution")]
    NoBinarySolution,
    #[error("moment descent did not converge")]
    DidNotConverge,
    #[error("no invertible row submatrix modulo q")]
    NoInvertibleSubmatrix,
    #[error("malformed instance: {0}")]
    Format(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, HsspError>;

/// `H` (M×u, reduced mod q) together with the hidden-rank hypothesis `B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HsspInstance {
    q: Modulus,
    h: IntMatrix,
    batch: usize,
}

impl HsspInstance {
    /// Entries of `h` are reduced mod q.
    pub fn new(q: Modulus, h: IntMatrix, batch: usize) -> Result<Self> {
        if h.cols() == 0 {
            return Err(HsspError::InvalidInstance("u must be at least 1".into()));
        }
        if batch == 0 || batch > h.rows() {
            return Err(HsspError::InvalidInstance(format!(
                "batch {batch} must lie in [1, {}]",
                h.rows()
            )));
        }
        let h = h.reduce_mod(&q);
        Ok(HsspInstance { q, h, batch })
    }

    pub fn q(&self) -> &Modulus {
        &self.q
    }

    pub fn h(&self) -> &IntMatrix {
        &self.h
    }

    pub fn m_rows(&self) -> usize {
        self.h.rows()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.h.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<HsspInstance> {
        HsspInstance::new(self.q.clone(), self.h.select_rows(idx), self.batch)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceJson::from_parts(self, None, None)).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: InstanceJson = serde_json::from_str(s).map_err(|e| HsspError::Format(e.to_string()))?;
        j.instance()
    }
}

/// Like [`HsspInstance`] with coefficients in `{0, ..., c}`. No solver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HlcpInstance {
    pub instance: HsspInstance,
    c: u64,
}

impl HlcpInstance {
    pub fn new(instance: HsspInstance, c: u64) -> Result<Self> {
        if c == 0 {
            return Err(HsspError::InvalidInstance("coefficient bound must be at least 1".into()));
        }
        Ok(HlcpInstance { instance, c })
    }

    pub fn bound(&self) -> u64 {
        self.c
    }
}

/// An instance generated from a known solution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedInstance {
    pub instance: HsspInstance,
    pub a: IntMatrix,
    pub x: IntMatrix,
}

impl PlantedInstance {
    pub fn new(instance: HsspInstance, a: IntMatrix, x: IntMatrix) -> Result<Self> {
        let p = PlantedInstance { instance, a, x };
        if !verify_solution(&p.instance, &p.a, &p.x) {
            return Err(HsspError::InvalidInstance("H is not A X mod q for a binary A".into()));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceJson::from_parts(&self.instance, Some(&self.a), Some(&self.x)))
            .expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: InstanceJson = serde_json::from_str(s).map_err(|e| HsspError::Format(e.to_string()))?;
        let inst = j.instance()?;
        let (Some(a), Some(x)) = (&j.a, &j.x) else {
            return Err(HsspError::Format("planted instance needs a and x".into()));
        };
        let a = IntMatrix::from_strings(j.m, j.b, a)?;
        let x = IntMatrix::from_strings(j.b, j.u, x)?;
        PlantedInstance::new(inst, a, x)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceJson {
    q: String,
    m: usize,
    b: usize,
    u: usize,
    h: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<String>>,
}

impl InstanceJson {
    fn from_parts(inst: &HsspInstance, a: Option<&IntMatrix>, x: Option<&IntMatrix>) -> Self {
        InstanceJson {
            q: inst.q.to_string(),
            m: inst.m_rows(),
            b: inst.batch,
            u: inst.dim(),
            h: inst.h.to_strings(),
            a: a.map(IntMatrix::to_strings),
            x: x.map(IntMatrix::to_strings),
        }
    }

    fn instance(&self) -> Result<HsspInstance> {
        let q: Int = self
            .q
            .parse()
            .map_err(|_| HsspError::Format(format!("bad modulus {:?}", self.q)))?;
        let h = IntMatrix::from_strings(self.m, self.u, &self.h)?;
        HsspInstance::new(Modulus::new(q)?, h, self.b)
    }
}

// ---------------------------------------------------------------------------
// Orthogonal lattices modulo q

/// Basis of `{y in Z^M : <y, h> = 0 mod q}`, lower triangular.
///
/// Row `k` has diagonal `g_{k-1} / g_k` where `g_k = gcd(q, h_1..h_k)` and
/// `g_0 = q`; the entries left of the diagonal come from the Bézout
/// coefficients expressing `g_{k-1}` in terms of `h_1..h_{k-1}`. A common
/// factor of `q` and all of `h` is divided out first.
pub fn ortho_mod_basis(h: &[Int], q: &Modulus) -> LatticeBasis {
    let m = h.len();
    let mut d = q.value().clone();
    for x in h {
        d = d.gcd(x);
    }
    let qv = q.value() / &d;
    let h: Vec<Int> = h.iter().map(|x| (x / &d).mod_floor(&qv)).collect();
    let mut basis = IntMatrix::zeros(m, m);
    // coef[i] with sum coef[i] h[i] = g mod qv
    let mut coef: Vec<Int> = Vec::with_capacity(m);
    let mut g = qv.clone();
    for k in 0..m {
        let (g_new, s, t) = linalg::egcd(&g, &h[k]);
        basis[(k, k)] = &g / &g_new;
        let factor = -(&h[k] / &g_new);
        for (i, c) in coef.iter().enumerate() {
            basis[(k, i)] = (&factor * c).mod_floor(&qv);
        }
        for c in coef.iter_mut() {
            *c = (&s * &*c).mod_floor(&qv);
        }
        coef.push(t.mod_floor(&qv));
        g = g_new;
    }
    LatticeBasis::new_unchecked(basis)
}

/// Pivot rows/columns of `h` and the inverse of the pivot block.
struct PivotBlock {
    rows: Vec<usize>,
    cols: Vec<usize>,
    inv: IntMatrix,
}

impl PivotBlock {
    fn find(h: &IntMatrix, q: &Modulus, r: usize) -> Result<Self> {
        let (rows, cols) = unit_pivots_mod(h, q, r).ok_or(HsspError::NoInvertibleBlock(r))?;
        let inv = inverse_mod(&h.select_rows(&rows).select_cols(&cols), q)?;
        Ok(PivotBlock { rows, cols, inv })
    }

    /// `-h_row[C] * inv mod q`: the pivot coordinates of the lattice vector
    /// that has a 1 at the row's own coordinate.
    fn coefficients(&self, h_row: &[Int], q: &Modulus) -> Vec<Int> {
        let r = self.cols.len();
        (0..r)
            .map(|j| {
                let mut s = Int::zero();
                for (k, &c) in self.cols.iter().enumerate() {
                    s += &h_row[c] * &self.inv[(k, j)];
                }
                q.reduce(&-s)
            })
            .collect()
    }
}

/// Basis of `{y : y^T H[:, C] = 0 mod q}` for `r` columns `C` selected
/// together with `r` pivot rows so that the pivot block is invertible.
///
/// When `r` equals the rank of `H` mod q every row annihilates all columns.
pub fn ortho_mod_basis_multi(h: &IntMatrix, q: &Modulus, r: usize) -> Result<LatticeBasis> {
    let m = h.rows();
    if r > h.cols().min(m) {
        return Err(HsspError::Precondition(format!("r = {r} exceeds min(u, M)")));
    }
    let piv = PivotBlock::find(h, q, r)?;
    let mut basis = IntMatrix::zeros(m, m);
    let mut is_pivot = vec![false; m];
    for &p in &piv.rows {
        is_pivot[p] = true;
        basis[(p, p)] = q.value().clone();
    }
    for i in (0..m).filter(|&i| !is_pivot[i]) {
        basis[(i, i)] = Int::one();
        for (j, c) in piv.coefficients(h.row(i), q).into_iter().enumerate() {
            basis[(i, piv.rows[j])] = c;
        }
    }
    Ok(LatticeBasis::new_unchecked(basis))
}

// ---------------------------------------------------------------------------
// Modulus sizing

/// Smallest `log2 q` satisfying the lattice-reduction heuristic, plus a
/// margin of `batch` bits, at least 2.
pub fn q_size_for(m_rows: usize, batch: usize) -> Result<u64> {
    q_size_for_iota(m_rows, batch, DEFAULT_IOTA)
}

pub fn q_size_for_iota(m_rows: usize, batch: usize, iota: f64) -> Result<u64> {
    if m_rows <= batch {
        return Err(HsspError::Precondition(format!("M = {m_rows} must exceed B = {batch}")));
    }
    let (m, b) = (m_rows as f64, batch as f64);
    let bound = iota * m * b + m * b / (2.0 * (m - b)) * m.log2() + b / 2.0 * (m - b).log2();
    Ok(((bound.ceil() as u64) + batch as u64).max(2))
}

// ---------------------------------------------------------------------------
// Step 1: the hidden lattice

#[derive(Clone, Debug)]
pub struct Step1Config {
    /// Columns of `H` used for the orthogonal lattice; `min(u, B)` if unset.
    pub r: Option<usize>,
    pub delta: f64,
    /// Rows reduced jointly; `2B` if unset. Rows beyond the window are
    /// attached one at a time to the reduced window basis.
    pub window: Option<usize>,
    /// Exact rational LLL throughout; otherwise floating-point LLL with an
    /// exact final pass.
    pub exact: bool,
}

impl Default for Step1Config {
    fn default() -> Self {
        Step1Config {
            r: None,
            delta: 0.99,
            window: None,
            exact: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Step1Output {
    /// Rank-`B` basis of the completion of the hidden lattice, in `Z^M`.
    pub u: LatticeBasis,
    /// The `M - B` short vectors taken as a basis candidate of `L^⊥(A)`.
    pub ortho: Vec<Vec<Int>>,
}

pub fn ns_step1(inst: &HsspInstance) -> Result<LatticeBasis> {
    Ok(ns_step1_with(inst, &Step1Config::default())?.u)
}

/// Index of the largest jump in `log |b*_i|`; the rows before it are the
/// candidate short vectors.
fn largest_gap(log2_gso: &[f64]) -> usize {
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..log2_gso.len() {
        let jump = log2_gso[i] - log2_gso[i - 1];
        if jump > best.1 {
            best = (i, jump);
        }
    }
    best.0
}

fn check_gap(log2_gso: &[f64], batch: usize) -> Result<()> {
    let n = log2_gso.len();
    let gap = largest_gap(log2_gso);
    if gap != n - batch {
        return Err(HsspError::RankMismatch {
            expected: batch,
            found: n - gap,
        });
    }
    Ok(())
}

pub fn ns_step1_with(inst: &HsspInstance, cfg: &Step1Config) -> Result<Step1Output> {
    let (m, b, q) = (inst.m_rows(), inst.batch(), inst.q());
    if m <= b {
        return Err(HsspError::RankMismatch { expected: b, found: m });
    }
    let r = cfg.r.unwrap_or(inst.dim().min(b));
    let n = cfg.window.unwrap_or(2 * b).clamp(b + 1, m);

    // Window rows: a pivot set first so the window alone has full rank mod q.
    let win: Vec<usize> = if n == m {
        (0..m).collect()
    } else {
        let (prow, _) = unit_pivots_mod(inst.h(), q, r).ok_or(HsspError::NoInvertibleBlock(r))?;
        let mut w = prow;
        for i in 0..m {
            if w.len() == n {
                break;
            }
            if !w.contains(&i) {
                w.push(i);
            }
        }
        w.sort_unstable();
        w
    };
    let in_win: HashSet<usize> = win.iter().copied().collect();
    let extras: Vec<usize> = (0..m).filter(|i| !in_win.contains(i)).collect();

    let hw = inst.h().select_rows(&win);
    let base = ortho_mod_basis_multi(&hw, q, r)?;
    let red = reduce(&base, cfg)?;
    check_gap(&red.log2_gso, b)?;
    let y0: Vec<Vec<Int>> = (0..n - b).map(|i| red.basis.vectors().row(i).to_vec()).collect();
    let y0_basis = LatticeBasis::new_unchecked(IntMatrix::from_rows(y0.clone())?);
    let mut w = lattice::orthogonal_lattice(&y0_basis, n)?.into_matrix().row_vecs();

    let mut ortho: Vec<Vec<Int>> = y0
        .iter()
        .map(|y| {
            let mut z = vec![Int::zero(); m];
            for (j, &c) in win.iter().enumerate() {
                z[c] = y[j].clone();
            }
            z
        })
        .collect();

    // One extra short vector per row outside the window, found by reducing
    // the window basis extended by that row.
    let mut attached: Vec<(usize, Vec<Int>, Int)> = Vec::with_capacity(extras.len());
    if !extras.is_empty() {
        let piv = PivotBlock::find(&hw, q, r)?;
        let reduced_rows = red.basis.vectors().row_vecs();
        for &i in &extras {
            let mut rows: Vec<Vec<Int>> = reduced_rows
                .iter()
                .map(|v| {
                    let mut v = v.clone();
                    v.push(Int::zero());
                    v
                })
                .collect();
            let mut new = vec![Int::zero(); n + 1];
            for (j, c) in piv.coefficients(inst.h().row(i), q).into_iter().enumerate() {
                new[piv.rows[j]] = c;
            }
            new[n] = Int::one();
            rows.push(new);
            let ext = reduce(&LatticeBasis::new_unchecked(IntMatrix::from_rows(rows)?), cfg)?;
            check_gap(&ext.log2_gso, b)?;
            let best = (0..n + 1 - b)
                .map(|k| ext.basis.vectors().row(k))
                .filter(|v| !v[n].is_zero())
                .min_by(|x, y| x[n].abs().cmp(&y[n].abs()).then_with(|| dot(x, x).cmp(&dot(y, y))))
                .ok_or(HsspError::RankMismatch { expected: b, found: b + 1 })?;
            let mut z = vec![Int::zero(); m];
            for (j, &c) in win.iter().enumerate() {
                z[c] = best[j].clone();
            }
            z[i] = best[n].clone();
            ortho.push(z);
            attached.push((i, best[..n].to_vec(), best[n].clone()));
        }
        for (_, y, c) in &attached {
            w = restrict_by_congruence(w, y, c, cfg)?;
        }
    }

    let mut u_rows = Vec::with_capacity(b);
    for wv in &w {
        let mut z = vec![Int::zero(); m];
        for (j, &c) in win.iter().enumerate() {
            z[c] = wv[j].clone();
        }
        for (i, y, c) in &attached {
            let (quo, rem) = dot(y, wv).div_rem(c);
            debug_assert!(rem.is_zero());
            z[*i] = -quo;
        }
        u_rows.push(z);
    }
    let u = LatticeBasis::new_unchecked(IntMatrix::from_rows(u_rows)?);
    let u = if cfg.exact {
        lll_reduce(&u, &exact_delta(cfg))?
    } else {
        lll_reduce(&lll_reduce_fast(&u, cfg.delta)?.basis, &exact_delta(cfg))?
    };
    if u.rank() != b {
        return Err(HsspError::RankMismatch {
            expected: b,
            found: u.rank(),
        });
    }
    Ok(Step1Output { u, ortho })
}

/// Sublattice of the row lattice `w` whose vectors `v` satisfy
/// `<v, y> = 0 mod c`, LLL-reduced.
fn restrict_by_congruence(w: Vec<Vec<Int>>, y: &[Int], c: &Int, cfg: &Step1Config) -> Result<Vec<Vec<Int>>> {
    let c = c.abs();
    if c.is_one() {
        return Ok(w);
    }
    let g: Vec<Int> = w.iter().map(|v| dot(v, y).mod_floor(&c)).collect();
    if g.iter().all(Zero::is_zero) {
        return Ok(w);
    }
    let k = ortho_mod_basis(&g, &Modulus::new(c)?);
    let wm = IntMatrix::from_rows(w)?;
    let prod = k.vectors().mul(&wm)?;
    Ok(reduce(&LatticeBasis::new_unchecked(prod), cfg)?.basis.into_matrix().row_vecs())
}

fn exact_delta(cfg: &Step1Config) -> BigRational {
    BigRational::from_float(cfg.delta).unwrap_or_else(default_delta)
}

/// LLL in the configured arithmetic, with `log2 |b*_i|` of the result.
fn reduce(basis: &LatticeBasis, cfg: &Step1Config) -> Result<FastLll> {
    if !cfg.exact {
        return Ok(lll_reduce_fast(basis, cfg.delta)?);
    }
    let red = lll_reduce(basis, &exact_delta(cfg))?;
    let gso = lattice::gram_schmidt_exact(&red)?;
    let log2 = |x: &Int| {
        let shift = (x.bits() as i64 - 60).max(0);
        linalg::to_f64_scaled(x, shift).log2() + shift as f64
    };
    let log2_gso = gso
        .norms_sq
        .iter()
        .map(|n| 0.5 * (log2(n.numer()) - log2(n.denom())))
        .collect();
    Ok(FastLll { basis: red, log2_gso })
}

// ---------------------------------------------------------------------------
// Step 2 via lattice reduction

fn is_binary_nonzero(v: &[Int]) -> bool {
    v.iter().all(|x| x.is_zero() || x.is_one()) && v.iter().any(|x| x.is_one())
}

/// Binary vectors reachable from the basis: `±v_i`, `±(v_i - v_j)`,
/// `±(v_i + v_j)`, then closed under adding `±v_k` to any binary vector
/// already found (so `a_j` follows from `a_i` and `a_j - a_i`). Sorted by
/// weight, ties broken lexicographically.
pub fn binary_candidates(basis: &LatticeBasis) -> Vec<Vec<Int>> {
    let rows = basis.vectors().row_vecs();
    let mut seen: HashSet<Vec<Int>> = HashSet::new();
    let mut out: Vec<Vec<Int>> = Vec::new();
    let mut consider = |v: Vec<Int>, out: &mut Vec<Vec<Int>>| {
        let v = if is_binary_nonzero(&v) {
            v
        } else {
            let neg: Vec<Int> = v.iter().map(|x| -x).collect();
            if !is_binary_nonzero(&neg) {
                return;
            }
            neg
        };
        if seen.insert(v.clone()) {
            out.push(v);
        }
    };
    for i in 0..rows.len() {
        consider(rows[i].clone(), &mut out);
        for j in i + 1..rows.len() {
            consider(rows[i].iter().zip(&rows[j]).map(|(a, b)| a - b).collect(), &mut out);
            consider(rows[i].iter().zip(&rows[j]).map(|(a, b)| a + b).collect(), &mut out);
        }
    }
    // Closure: binary vector plus a short combination of basis vectors.
    let mut steps: Vec<Vec<Int>> = Vec::new();
    for i in 0..rows.len() {
        steps.push(rows[i].clone());
        for j in i + 1..rows.len() {
            steps.push(rows[i].iter().zip(&rows[j]).map(|(a, b)| a - b).collect());
            steps.push(rows[i].iter().zip(&rows[j]).map(|(a, b)| a + b).collect());
        }
    }
    let mut next = 0;
    while next < out.len() {
        let v = out[next].clone();
        next += 1;
        for r in steps.iter().chain(out.clone()[..next - 1].iter()) {
            consider(v.iter().zip(r).map(|(a, b)| a - b).collect(), &mut out);
            consider(v.iter().zip(r).map(|(a, b)| a + b).collect(), &mut out);
        }
    }
    out.sort_by(|a, b| {
        let wa = a.iter().filter(|x| x.is_one()).count();
        let wb = b.iter().filter(|x| x.is_one()).count();
        wa.cmp(&wb).then_with(|| b.cmp(a))
    });
    out
}

/// Greedy selection of `count` linearly independent vectors, in order.
fn select_independent(cands: &[Vec<Int>], count: usize) -> Vec<Vec<Int>> {
    let mut chosen: Vec<Vec<Int>> = Vec::new();
    for c in cands {
        if chosen.len() == count {
            break;
        }
        let mut trial = chosen.clone();
        trial.push(c.clone());
        if linalg::rank(&IntMatrix::from_rows(trial.clone()).expect("rectangular")) == trial.len() {
            chosen = trial;
        }
    }
    chosen
}

fn columns_to_matrix(cols: &[Vec<Int>]) -> IntMatrix {
    IntMatrix::from_rows(cols.to_vec()).expect("rectangular").transpose()
}

/// BKZ-reduce the hidden lattice and list binary candidates.
pub fn ns_step2_candidates(u_basis: &LatticeBasis, batch: usize, beta: usize) -> Result<Vec<Vec<Int>>> {
    if u_basis.rank() != batch {
        return Err(HsspError::RankMismatch {
            expected: batch,
            found: u_basis.rank(),
        });
    }
    let reduced = if batch < 2 {
        lll_reduce(u_basis, &default_delta())?
    } else {
        bkz_reduce(u_basis, beta.clamp(2, batch), &default_delta())?
    };
    Ok(binary_candidates(&reduced))
}

/// Recover `A` (M×B) as `B` independent binary vectors of the lattice.
pub fn ns_step2_bkz(u_basis: &LatticeBasis, batch: usize, beta: usize) -> Result<IntMatrix> {
    let cands = ns_step2_candidates(u_basis, batch, beta)?;
    let chosen = select_independent(&cands, batch);
    if chosen.len() < batch {
        return Err(HsspError::NotEnoughBinaryVectors {
            found: chosen.len(),
            needed: batch,
        });
    }
    Ok(columns_to_matrix(&chosen))
}

/// Choose `B` candidate columns whose induced `X` explains every row of
/// `full` with a binary coefficient row. Candidates that do not extend to a
/// binary column of `full` are dropped first; the remaining subsets are
/// tried in preference order (lexicographic over the sorted candidates).
/// `budget` bounds the search nodes, partial subsets included. Returns
/// `(A for full, X)`.
pub fn resolve_candidates(
    cands: &[Vec<Int>],
    sub: &HsspInstance,
    full: &HsspInstance,
    budget: usize,
) -> Result<(IntMatrix, IntMatrix)> {
    let b = sub.batch();
    struct Dfs<'a> {
        cands: &'a [Vec<Int>],
        sub: &'a HsspInstance,
        full: &'a HsspInstance,
        b: usize,
        tried: usize,
        budget: usize,
    }
    impl Dfs<'_> {
        fn go(&mut self, start: usize, chosen: &mut Vec<usize>) -> Option<(IntMatrix, IntMatrix)> {
            if chosen.len() == self.b {
                self.tried += 1;
                let cols: Vec<Vec<Int>> = chosen.iter().map(|&i| self.cands[i].clone()).collect();
                let a = columns_to_matrix(&cols);
                let x = solve_x(&a, self.sub).ok()?;
                if !verify_solution(self.sub, &a, &x) {
                    return None;
                }
                let full_a = extend_rows(&x, self.full)?;
                return Some((full_a, x));
            }
            for i in start..self.cands.len() {
                if self.tried >= self.budget || self.cands.len() - i < self.b - chosen.len() {
                    return None;
                }
                self.tried += 1;
                let mut rows: Vec<Vec<Int>> = chosen.iter().map(|&j| self.cands[j].clone()).collect();
                rows.push(self.cands[i].clone());
                if linalg::rank(&IntMatrix::from_rows(rows).expect("rectangular")) != chosen.len() + 1 {
                    continue;
                }
                chosen.push(i);
                if let Some(found) = self.go(i + 1, chosen) {
                    return Some(found);
                }
                chosen.pop();
            }
            None
        }
    }
    let filtered = binary_extensions(cands, sub, full);
    let cands = filtered.as_deref().unwrap_or(cands);
    let mut dfs = Dfs {
        cands,
        sub,
        full,
        b,
        tried: 0,
        budget,
    };
    let found = dfs.go(0, &mut Vec::new());
    found.ok_or_else(|| {
        let n = select_independent(cands, b).len();
        if n < b {
            HsspError::NotEnoughBinaryVectors { found: n, needed: b }
        } else {
            HsspError::NoBinarySolution
        }
    })
}

/// The binary `A` with `A X = H` for every row of `inst`, if it exists.
pub fn extend_rows(x: &IntMatrix, inst: &HsspInstance) -> Option<IntMatrix> {
    let a = extension(x, inst)?;
    a.is_binary().then_some(a)
}

/// The integer `E` with `E X = H` for every row of `inst`, entries taken
/// as centered residues.
fn extension(x: &IntMatrix, inst: &HsspInstance) -> Option<IntMatrix> {
    let q = inst.q();
    let b = x.rows();
    let (_, cols) = unit_pivots_mod(x, q, b)?;
    let inv = inverse_mod(&x.select_cols(&cols), q).ok()?;
    let hc = inst.h().select_cols(&cols);
    let e = hc.mul_mod(&inv, q).ok()?;
    let e = IntMatrix::from_vec(e.rows(), e.cols(), e.entries().iter().map(|v| q.center(v)).collect()).ok()?;
    (&e.mul_mod(x, q).ok()? == inst.h()).then_some(e)
}

/// Candidates whose extension to the rows of `full` is binary. Extension is
/// linear: with `B` independent candidates `C` and `X_C` solved from `sub`,
/// the rows of `full` are `E X_C`, and a candidate `c = C mu` extends to
/// `E mu`.
fn binary_extensions(cands: &[Vec<Int>], sub: &HsspInstance, full: &HsspInstance) -> Option<Vec<Vec<Int>>> {
    let base = select_independent(cands, sub.batch());
    if base.len() < sub.batch() {
        return None;
    }
    let x = solve_x(&columns_to_matrix(&base), sub).ok()?;
    let e = extension(&x, full)?;
    let basis = IntMatrix::from_rows(base).ok()?;
    let e_rat: Vec<Vec<BigRational>> = (0..e.rows())
        .map(|i| e.row(i).iter().cloned().map(BigRational::from_integer).collect())
        .collect();
    Some(
        cands
            .iter()
            .filter(|c| {
                let Some(mu) = linalg::solve_left_rational(&basis, c) else {
                    return false;
                };
                e_rat.iter().all(|row| {
                    let v: BigRational = row.iter().zip(&mu).map(|(a, b)| a * b).sum();
                    v.is_zero() || v.is_one()
                })
            })
            .cloned()
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Step 2 via a linearized quadratic system

/// Exact inverse over the rationals, `None` if singular.
fn rational_inverse(m: &IntMatrix) -> Option<Vec<Vec<BigRational>>> {
    let n = m.rows();
    let mut a: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            let mut row: Vec<BigRational> = m.row(i).iter().cloned().map(BigRational::from_integer).collect();
            row.extend((0..n).map(|j| if i == j { BigRational::one() } else { BigRational::zero() }));
            row
        })
        .collect();
    for col in 0..n {
        let p = (col..n).find(|&i| !a[i][col].is_zero())?;
        a.swap(col, p);
        let inv = a[col][col].recip();
        for x in a[col].iter_mut() {
            *x = &*x * &inv;
        }
        let pivot = a[col].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i == col || row[col].is_zero() {
                continue;
            }
            let f = row[col].clone();
            for (x, y) in row.iter_mut().zip(&pivot) {
                *x = &*x - &f * y;
            }
        }
    }
    Some(a.into_iter().map(|r| r[n..].to_vec()).collect())
}

fn large_prime() -> Modulus {
    Modulus::new((Int::one() << 127usize) - 1).expect("prime")
}

/// Integer matrix `P_int` and scale `d` with `U * U_S^{-1} = P_int / d`,
/// where `S` are `B` rows making `U_S` invertible.
fn normalized_coordinates(um: &IntMatrix) -> Result<(IntMatrix, Int, Vec<usize>)> {
    let b = um.cols();
    let (rows, _) = unit_pivots_mod(um, &large_prime(), b).ok_or(HsspError::NoBinarySolution)?;
    let inv = rational_inverse(&um.select_rows(&rows)).ok_or(HsspError::NoBinarySolution)?;
    let mut p: Vec<Vec<BigRational>> = Vec::with_capacity(um.rows());
    let mut d = Int::one();
    for i in 0..um.rows() {
        let row: Vec<BigRational> = (0..b)
            .map(|j| {
                let mut s = BigRational::zero();
                for k in 0..b {
                    if !um[(i, k)].is_zero() {
                        s += &inv[k][j] * BigRational::from_integer(um[(i, k)].clone());
                    }
                }
                s
            })
            .collect();
        for x in &row {
            d = d.lcm(x.denom());
        }
        p.push(row);
    }
    let mut pi = IntMatrix::zeros(um.rows(), b);
    for (i, row) in p.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            pi[(i, j)] = x.numer() * (&d / x.denom());
        }
    }
    Ok((pi, d, rows))
}

fn pair_index(b: usize, k: usize, l: usize) -> usize {
    // unknowns: t_0..t_{b-1}, then y_kl for k < l in row-major order
    b + k * (2 * b - k - 1) / 2 + (l - k - 1)
}

/// Minimum number of rows for the linearized system.
pub fn multivariate_min_rows(batch: usize) -> usize {
    batch * (batch + 1) / 2 + batch
}

/// Recover `A = U W` binary by linearizing `(P_i t)^2 = P_i t` over the
/// monomials `t_k t_l`, solving exactly and splitting the `B`-dimensional
/// solution space by simultaneous diagonalization.
pub fn multivariate_recover(u_basis: &LatticeBasis, batch: usize) -> Result<IntMatrix> {
    let b = batch;
    if u_basis.rank() != b {
        return Err(HsspError::RankMismatch {
            expected: b,
            found: u_basis.rank(),
        });
    }
    let m = u_basis.ambient();
    if m < multivariate_min_rows(b) {
        return Err(HsspError::SystemUnderdetermined(format!(
            "{m} rows, need at least {}",
            multivariate_min_rows(b)
        )));
    }
    let um = u_basis.vectors().transpose();
    let (p, d, _) = normalized_coordinates(&um)?;
    let unknowns = b * (b + 1) / 2;
    let mut eqs: Vec<Vec<Int>> = Vec::new();
    for i in 0..m {
        let pr = p.row(i);
        let mut e = vec![Int::zero(); unknowns];
        for k in 0..b {
            e[k] = &pr[k] * &pr[k] - &d * &pr[k];
            for l in k + 1..b {
                e[pair_index(b, k, l)] = Int::from(2) * &pr[k] * &pr[l];
            }
        }
        if e.iter().any(|x| !x.is_zero()) {
            eqs.push(e);
        }
    }
    if eqs.is_empty() {
        return Err(HsspError::SystemUnderdetermined("no nontrivial equations".into()));
    }
    let kernel = linalg::kernel_rational(&IntMatrix::from_rows(eqs)?);
    if kernel.len() > b {
        return Err(HsspError::SystemUnderdetermined(format!(
            "solution space has dimension {} > {b}",
            kernel.len()
        )));
    }
    if kernel.len() < b {
        return Err(HsspError::NoBinarySolution);
    }
    let kf: Vec<Vec<f64>> = kernel.iter().map(|z| rational_vector_to_unit_f64(z)).collect();

    let sym = |z: &[f64]| {
        DMatrix::from_fn(b, b, |k, l| match k.cmp(&l) {
            std::cmp::Ordering::Equal => z[k],
            std::cmp::Ordering::Less => z[pair_index(b, k, l)],
            std::cmp::Ordering::Greater => z[pair_index(b, l, k)],
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d76);
    let mut found: Vec<Vec<Int>> = Vec::new();
    for _attempt in 0..32 {
        let combo = |rng: &mut ChaCha8Rng| {
            let mut z = vec![0.0; unknowns];
            for kv in &kf {
                let c = rng.gen_range(-1.0..1.0);
                for (x, y) in z.iter_mut().zip(kv) {
                    *x += c * y;
                }
            }
            z
        };
        let y1 = sym(&combo(&mut rng));
        let y2 = sym(&combo(&mut rng));
        let Some(y2inv) = y2.try_inverse() else { continue };
        let nmat = &y1 * y2inv;
        for ev in nmat.complex_eigenvalues().iter() {
            if ev.im.abs() > 1e-6 * (1.0 + ev.re.abs()) {
                continue;
            }
            let shifted = &nmat - DMatrix::identity(b, b) * ev.re;
            let svd = shifted.svd(false, true);
            let Some(vt) = svd.v_t else { continue };
            let (imin, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            let v: Vec<f64> = vt.row(imin).iter().copied().collect();
            let Some(t) = round_to_binary(&v) else { continue };
            let Some(col) = binary_column(&p, &d, &t) else { continue };
            if !found.contains(&col) {
                let mut trial = found.clone();
                trial.push(col);
                if linalg::rank(&IntMatrix::from_rows(trial.clone())?) == trial.len() {
                    found = trial;
                }
            }
        }
        if found.len() == b {
            return Ok(columns_to_matrix(&found));
        }
    }
    Err(HsspError::NoBinarySolution)
}

fn rational_vector_to_unit_f64(z: &[BigRational]) -> Vec<f64> {
    let mut l = Int::one();
    for x in z {
        l = l.lcm(x.denom());
    }
    let ints: Vec<Int> = z.iter().map(|x| x.numer() * (&l / x.denom())).collect();
    let bits = ints.iter().map(|x| x.bits()).max().unwrap_or(0) as i64;
    let shift = (bits - 60).max(0);
    let f: Vec<f64> = ints.iter().map(|x| linalg::to_f64_scaled(x, shift)).collect();
    let max = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    f.into_iter().map(|x| if max > 0.0 { x / max } else { x }).collect()
}

/// Scale so the largest-magnitude entry is 1, then round to `{0, 1}`.
fn round_to_binary(v: &[f64]) -> Option<Vec<i64>> {
    let (_, &pivot) = v.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    if pivot == 0.0 {
        return None;
    }
    let mut t = Vec::with_capacity(v.len());
    for x in v {
        let s = x / pivot;
        if (s - 1.0).abs() < 0.25 {
            t.push(1);
        } else if s.abs() < 0.25 {
            t.push(0);
        } else {
            return None;
        }
    }
    Some(t)
}

/// `P t / d` when it is a binary integer vector.
fn binary_column(p: &IntMatrix, d: &Int, t: &[i64]) -> Option<Vec<Int>> {
    let mut col = Vec::with_capacity(p.rows());
    for i in 0..p.rows() {
        let mut s = Int::zero();
        for (k, &tk) in t.iter().enumerate() {
            if tk != 0 {
                s += &p[(i, k)];
            }
        }
        let (quo, rem) = s.div_rem(d);
        if !rem.is_zero() || !(quo.is_zero() || quo.is_one()) {
            return None;
        }
        col.push(quo);
    }
    is_binary_nonzero(&col).then_some(col)
}

// ---------------------------------------------------------------------------
// Step 2 via moment descent

#[derive(Clone, Debug)]
pub struct StatisticalParams {
    /// Step size, relative to the gradient of the fourth moment normalized
    /// by its value at identity covariance.
    pub step: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Project found directions out of later searches. Only sound when the
    /// hidden coefficients are uncorrelated; otherwise restarts alone are
    /// used and found columns are skipped.
    pub deflate: bool,
}

impl Default for StatisticalParams {
    fn default() -> Self {
        StatisticalParams {
            step: 0.7,
            iterations: 10_000,
            restarts: 16,
            deflate: false,
        }
    }
}

pub fn statistical_recover(u_basis: &LatticeBasis, batch: usize, seed: u64) -> Result<IntMatrix> {
    statistical_recover_with(u_basis, batch, seed, &StatisticalParams::default())
}

/// Rows of `U` are `a_i V` for binary `a_i`: samples of the parallelepiped
/// spanned by the rows of `V`. After centering and whitening the samples
/// are `± 1` combinations of orthonormal vectors, which are the local minima
/// of the fourth moment on the unit sphere. Each minimum found by descent
/// yields a candidate column of `A` (signs of the projections), accepted
/// only if it is binary, lies in the span of `U` and is new.
pub fn statistical_recover_with(
    u_basis: &LatticeBasis,
    batch: usize,
    seed: u64,
    params: &StatisticalParams,
) -> Result<IntMatrix> {
    let b = batch;
    if u_basis.rank() != b {
        return Err(HsspError::RankMismatch {
            expected: b,
            found: u_basis.rank(),
        });
    }
    let m = u_basis.ambient();
    if m <= b {
        return Err(HsspError::DidNotConverge);
    }
    let shift = (u_basis.vectors().max_bits() as i64 - 50).max(0);
    let samples = DMatrix::from_fn(m, b, |i, j| linalg::to_f64_scaled(&u_basis.vectors()[(j, i)], shift));
    let mean = samples.row_mean();
    let mut centered = samples.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / m as f64;
    let chol = cov.cholesky().ok_or(HsspError::DidNotConverge)?;
    // x = c L with L = R^{-T}, so that cov(x) = I
    let r_inv_t = chol
        .l()
        .try_inverse()
        .ok_or(HsspError::DidNotConverge)?
        .transpose();
    let x = &centered * r_inv_t;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found_dirs: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut found_cols: Vec<Vec<Int>> = Vec::new();
    let deflate = params.deflate;
    let project = |w: &mut nalgebra::DVector<f64>, dirs: &[nalgebra::DVector<f64>]| {
        for d in dirs.iter().filter(|_| deflate) {
            let c = w.dot(d);
            *w -= d * c;
        }
        let n = w.norm();
        if n > 0.0 {
            *w /= n;
        }
    };
    let budget = params.restarts * b;
    for _ in 0..budget {
        if found_cols.len() == b {
            break;
        }
        let mut w = nalgebra::DVector::from_fn(b, |_, _| rng.gen_range(-1.0..1.0));
        project(&mut w, &found_dirs);
        if w.norm() == 0.0 {
            continue;
        }
        for _ in 0..params.iterations {
            let proj = &x * &w;
            let cubes = proj.map(|p| p * p * p);
            let grad = x.transpose() * cubes / (3.0 * m as f64);
            let mut next = &w - grad * params.step;
            project(&mut next, &found_dirs);
            let done = next.dot(&w).abs() > 1.0 - 1e-13;
            w = next;
            if done {
                break;
            }
        }
        let proj = &x * &w;
        let signs: Vec<Int> = proj.iter().map(|&p| if p > 0.0 { Int::one() } else { Int::zero() }).collect();
        let complement: Vec<Int> = signs.iter().map(|s| Int::one() - s).collect();
        for cand in [signs, complement] {
            if !is_binary_nonzero(&cand) || found_cols.contains(&cand) {
                continue;
            }
            if linalg::solve_left_rational(u_basis.vectors(), &cand).is_none() {
                continue;
            }
            let mut trial = found_cols.clone();
            trial.push(cand.clone());
            if linalg::rank(&IntMatrix::from_rows(trial.clone())?) != trial.len() {
                continue;
            }
            // Direction estimate from the accepted column, for deflation.
            let s = nalgebra::DVector::from_fn(m, |i, _| if cand[i].is_one() { 1.0 } else { -1.0 });
            let mut dir = x.transpose() * s;
            project(&mut dir, &found_dirs);
            found_dirs.push(dir);
            found_cols = trial;
            break;
        }
    }
    if found_cols.len() < b {
        return Err(HsspError::DidNotConverge);
    }
    let a = columns_to_matrix(&found_cols);
    if !spans_equal(&a, u_basis) {
        return Err(HsspError::NoBinarySolution);
    }
    Ok(a)
}

/// `U = A V` for a rational `V`: every basis row of `U` lies in the column
/// span of `A` (and the ranks agree).
fn spans_equal(a: &IntMatrix, u: &LatticeBasis) -> bool {
    let at = a.transpose();
    linalg::rank(&at) == u.rank()
        && (0..u.rank()).all(|i| linalg::solve_left_rational(&at, u.vectors().row(i)).is_some())
}

// ---------------------------------------------------------------------------
// Recovering X and checking solutions

/// `X = A_R^{-1} H_R mod q` for `B` rows `R` with `A_R` invertible mod q.
/// The result satisfies `A X = H` whenever any solution exists for this `A`.
pub fn solve_x(a: &IntMatrix, inst: &HsspInstance) -> Result<IntMatrix> {
    let q = inst.q();
    if a.rows() != inst.m_rows() {
        return Err(HsspError::Precondition(format!(
            "A has {} rows, H has {}",
            a.rows(),
            inst.m_rows()
        )));
    }
    let b = a.cols();
    let (rows, _) = unit_pivots_mod(a, q, b).ok_or(HsspError::NoInvertibleSubmatrix)?;
    let inv = inverse_mod(&a.select_rows(&rows), q).map_err(|_| HsspError::NoInvertibleSubmatrix)?;
    Ok(inv.mul_mod(&inst.h().select_rows(&rows), q)?)
}

/// `a` binary and `a x = h mod q`.
pub fn verify_solution(inst: &HsspInstance, a: &IntMatrix, x: &IntMatrix) -> bool {
    if a.rows() != inst.m_rows() || a.cols() != x.rows() || x.cols() != inst.dim() || !a.is_binary() {
        return false;
    }
    match a.mul_mod(x, inst.q()) {
        Ok(p) => &p == inst.h(),
        Err(_) => false,
    }
}

/// `perm[i] = j` with row `i` of `x_rec` equal to row `j` of `x_true`.
pub fn match_up_to_permutation(x_rec: &IntMatrix, x_true: &IntMatrix) -> Option<Vec<usize>> {
    if x_rec.shape() != x_true.shape() {
        return None;
    }
    let mut used = vec![false; x_true.rows()];
    let mut perm = Vec::with_capacity(x_rec.rows());
    for i in 0..x_rec.rows() {
        let j = (0..x_true.rows()).find(|&j| !used[j] && x_rec.row(i) == x_true.row(j))?;
        used[j] = true;
        perm.push(j);
    }
    Some(perm)
}

// ---------------------------------------------------------------------------
// Planted instances

pub fn plant_instance(
    m_rows: usize,
    batch: usize,
    dim: usize,
    q_bits: u64,
    density: Ratio<u64>,
    seed: u64,
) -> Result<PlantedInstance> {
    if batch == 0 || batch > m_rows {
        return Err(HsspError::Precondition(format!("batch {batch} must lie in [1, {m_rows}]")));
    }
    if dim == 0 {
        return Err(HsspError::Precondition("dim must be at least 1".into()));
    }
    if *density.numer() > *density.denom() {
        return Err(HsspError::Precondition("density must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = Modulus::new(linalg::random_prime(q_bits.max(2), &mut rng))?;
    for _ in 0..1000 {
        let a = IntMatrix::from_rows((0..m_rows).map(|_| {
            (0..batch)
                .map(|_| {
                    if rng.gen_range(0..*density.denom()) < *density.numer() {
                        Int::one()
                    } else {
                        Int::zero()
                    }
                })
                .collect::<Vec<_>>()
        }))?;
        if unit_pivots_mod(&a, &q, batch).is_none() {
            continue;
        }
        let x = IntMatrix::from_rows(
            (0..batch).map(|_| (0..dim).map(|_| rng.gen_bigint_range(&Int::zero(), q.value())).collect::<Vec<_>>()),
        )?;
        let h = a.mul_mod(&x, &q)?;
        let instance = HsspInstance::new(q, h, batch)?;
        return PlantedInstance::new(instance, a, x);
    }
    Err(HsspError::Precondition(
        "no admissible A after 1000 samples; adjust density".into(),
    ))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Ns,
    Multivariate,
    Statistical,
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMethod::Ns => "ns",
            AttackMethod::Multivariate => "multivariate",
            AttackMethod::Statistical => "statistical",
        })
    }
}

impl FromStr for AttackMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ns" => Ok(AttackMethod::Ns),
            "mv" | "multivariate" => Ok(AttackMethod::Multivariate),
            "stat" | "statistical" => Ok(AttackMethod::Statistical),
            other => Err(format!("unknown attack method {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackParams {
    pub m_rows: usize,
    pub batch: usize,
    pub dim: usize,
    pub m: usize,
    pub q_bits: u64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub method: AttackMethod,
    pub recovered_x: Option<IntMatrix>,
    pub recovered_a: Option<IntMatrix>,
    pub permutation: Option<Vec<usize>>,
    pub success: bool,
    pub timings: BTreeMap<String, Duration>,
    pub params: AttackParams,
    /// Mean squared error of the recovered `X` against the planted one,
    /// in the integer domain, when a planted solution is known.
    pub mse: Option<f64>,
    /// Subsamples tried.
    pub attempts: usize,
    pub error: Option<String>,
}

impl AttackReport {
    pub fn total_time(&self) -> Duration {
        self.timings.values().sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mat = |m: &Option<IntMatrix>| {
            m.as_ref().map(|m| {
                serde_json::json!({ "rows": m.rows(), "cols": m.cols(), "data": m.to_strings() })
            })
        };
        let timings: BTreeMap<&str, f64> = self
            .timings
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_secs_f64() * 1e3))
            .collect();
        serde_json::json!({
            "method": self.method,
            "success": self.success,
            "permutation": self.permutation,
            "recovered_x": mat(&self.recovered_x),
            "recovered_a": mat(&self.recovered_a),
            "timings_ms": timings,
            "params": self.params,
            "mse": self.mse,
            "attempts": self.attempts,
            "error": self.error,
        })
    }
}
