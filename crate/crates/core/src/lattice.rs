//! Lattice bases and reduction: exact Gram-Schmidt, LLL, BKZ, orthogonal
//! lattices and completions.
//!
//! Two LLL entry points exist. [`lll_reduce`] is the integral (fraction
//! free) algorithm and is exact end to end: its output always satisfies the
//! size-reduction and Lovász predicates. [`lll_reduce_fast`] keeps the basis
//! exact but tracks Gram-Schmidt data in `f64` (Schnorr-Euchner style); it is
//! what the attacks use on lattices of dimension in the hundreds.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::linalg::{self, dot, egcd, to_f64_scaled, Int, IntMatrix};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("basis rows are linearly dependent")]
    DependentRows,
    #[error("enumeration exceeded its node budget ({nodes} nodes)")]
    BlockTooLarge { nodes: u64 },
    #[error("block size {beta} is outside [2, {rank}]")]
    InvalidBlockSize { beta: usize, rank: usize },
    #[error("delta must lie in (1/4, 1)")]
    InvalidDelta,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// An integer lattice given by linearly independent row vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeBasis {
    vectors: IntMatrix,
}

impl LatticeBasis {
    /// Checks independence over the rationals.
    pub fn new(vectors: IntMatrix) -> Result<Self, LatticeError> {
        if linalg::rank(&vectors) != vectors.rows() {
            return Err(LatticeError::DependentRows);
        }
        Ok(LatticeBasis { vectors })
    }

    /// Skips the independence check; for bases produced by reduction
    /// routines that preserve independence.
    pub fn new_unchecked(vectors: IntMatrix) -> Self {
        LatticeBasis { vectors }
    }

    pub fn vectors(&self) -> &IntMatrix {
        &self.vectors
    }

    pub fn into_matrix(self) -> IntMatrix {
        self.vectors
    }

    pub fn rank(&self) -> usize {
        self.vectors.rows()
    }

    pub fn ambient(&self) -> usize {
        self.vectors.cols()
    }

    /// Canonical form used for lattice-equality assertions.
    pub fn hnf(&self) -> IntMatrix {
        linalg::hnf(&self.vectors)
    }

    pub fn same_lattice(&self, other: &LatticeBasis) -> bool {
        self.hnf() == other.hnf()
    }

    pub fn contains(&self, v: &[Int]) -> bool {
        linalg::lattice_contains(&self.vectors, v)
    }

    pub fn truncate(&self, k: usize) -> LatticeBasis {
        let idx: Vec<usize> = (0..k.min(self.rank())).collect();
        LatticeBasis::new_unchecked(self.vectors.select_rows(&idx))
    }
}

/// Exact Gram-Schmidt data: `mu[i][j]` for `j < i` and `norms_sq[i] = |b*_i|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct GsoData {
    pub mu: Vec<Vec<BigRational>>,
    pub norms_sq: Vec<BigRational>,
}

/// Default Lovász parameter 0.99.
pub fn default_delta() -> BigRational {
    BigRational::new(BigInt::from(99), BigInt::from(100))
}

fn check_delta(delta: &BigRational) -> Result<(), LatticeError> {
    let quarter = BigRational::new(BigInt::one(), BigInt::from(4));
    if *delta <= quarter || *delta >= BigRational::one() {
        return Err(LatticeError::InvalidDelta);
    }
    Ok(())
}

/// Integral Gram-Schmidt state: `d[i+1] = prod_{j<=i} |b*_j|^2` and
/// `lambda[i][j] = d[j+1] * mu[i][j]`, all exact integers.
struct IntegralGso {
    d: Vec<Int>,
    lambda: Vec<Vec<Int>>,
}

impl IntegralGso {
    fn new(n: usize) -> Self {
        let mut d = vec![Int::zero(); n + 1];
        d[0] = Int::one();
        IntegralGso {
            d,
            lambda: vec![vec![Int::zero(); n]; n],
        }
    }

    /// Fill row `k` from scratch; rows `< k` must already be valid.
    fn compute_row(&mut self, b: &[Vec<Int>], k: usize) -> Result<(), LatticeError> {
        for j in 0..=k {
            let mut u = dot(&b[k], &b[j]);
            for i in 0..j {
                u = (&self.d[i + 1] * &u - &self.lambda[k][i] * &self.lambda[j][i]) / &self.d[i];
            }
            if j < k {
                self.lambda[k][j] = u;
            } else {
                if u.is_zero() {
                    return Err(LatticeError::DependentRows);
                }
                self.d[k + 1] = u;
            }
        }
        Ok(())
    }

    fn to_gso(&self, n: usize) -> GsoData {
        let mu = (0..n)
            .map(|i| {
                (0..i)
                    .map(|j| BigRational::new(self.lambda[i][j].clone(), self.d[j + 1].clone()))
                    .collect()
            })
            .collect();
        let norms_sq = (0..n)
            .map(|i| BigRational::new(self.d[i + 1].clone(), self.d[i].clone()))
            .collect();
        GsoData { mu, norms_sq }
    }
}

pub fn gram_schmidt_exact(basis: &LatticeBasis) -> Result<GsoData, LatticeError> {
    let b = basis.vectors.row_vecs();
    let n = b.len();
    let mut g = IntegralGso::new(n);
    for k in 0..n {
        g.compute_row(&b, k)?;
    }
    Ok(g.to_gso(n))
}

fn nearest_quotient(num: &Int, den: &Int) -> Int {
    // round(num / den) for den > 0
    let two = Int::from(2);
    (num * &two + den).div_floor(&(den * &two))
}

/// Exact LLL reduction (integral variant, no floating point anywhere).
pub fn lll_reduce(basis: &LatticeBasis, delta: &BigRational) -> Result<LatticeBasis, LatticeError> {
    check_delta(delta)?;
    let mut b = basis.vectors.row_vecs();
    let n = b.len();
    if n == 0 {
        return Ok(basis.clone());
    }
    let (dp, dq) = (delta.numer().clone(), delta.denom().clone());
    let mut g = IntegralGso::new(n);
    g.compute_row(&b, 0)?;
    let mut k = 1;
    let mut kmax = 0;
    while k < n {
        if k > kmax {
            kmax = k;
            g.compute_row(&b, k)?;
        }
        size_reduce_integral(&mut b, &mut g, k, k - 1);
        let lam = &g.lambda[k][k - 1];
        let lhs = &dp * &g.d[k] * &g.d[k];
        let rhs = &dq * (&g.d[k + 1] * &g.d[k - 1] + lam * lam);
        if lhs > rhs {
            swap_integral(&mut b, &mut g, k, kmax);
            k = (k - 1).max(1);
        } else {
            for l in (0..k - 1).rev() {
                size_reduce_integral(&mut b, &mut g, k, l);
            }
            k += 1;
        }
    }
    Ok(LatticeBasis::new_unchecked(IntMatrix::from_rows(b).expect("rectangular")))
}

fn size_reduce_integral(b: &mut [Vec<Int>], g: &mut IntegralGso, k: usize, l: usize) {
    let dl = &g.d[l + 1];
    if (&g.lambda[k][l] * Int::from(2)).abs() <= *dl {
        return;
    }
    let r = nearest_quotient(&g.lambda[k][l], dl);
    let (head, tail) = b.split_at_mut(k);
    for (x, y) in tail[0].iter_mut().zip(&head[l]) {
        if !y.is_zero() {
            *x -= &r * y;
        }
    }
    let dl = dl.clone();
    g.lambda[k][l] -= &r * dl;
    for i in 0..l {
        let t = &r * &g.lambda[l][i];
        g.lambda[k][i] -= t;
    }
}

fn swap_integral(b: &mut [Vec<Int>], g: &mut IntegralGso, k: usize, kmax: usize) {
    b.swap(k, k - 1);
    for j in 0..k - 1 {
        let t = std::mem::take(&mut g.lambda[k][j]);
        g.lambda[k][j] = std::mem::replace(&mut g.lambda[k - 1][j], t);
    }
    let lam = g.lambda[k][k - 1].clone();
    let new_d = (&g.d[k - 1] * &g.d[k + 1] + &lam * &lam) / &g.d[k];
    for i in k + 1..=kmax {
        let t = g.lambda[i][k].clone();
        g.lambda[i][k] = (&g.d[k + 1] * &g.lambda[i][k - 1] - &lam * &t) / &g.d[k];
        g.lambda[i][k - 1] = (&new_d * &t + &lam * &g.lambda[i][k]) / &g.d[k + 1];
    }
    g.d[k] = new_d;
}

/// Exact check of size reduction (`|mu| <= 1/2`) and the Lovász condition.
pub fn is_lll_reduced(basis: &LatticeBasis, delta: &BigRational) -> Result<bool, LatticeError> {
    let gso = gram_schmidt_exact(basis)?;
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    for (i, row) in gso.mu.iter().enumerate() {
        if row.iter().any(|m| m.abs() > half) {
            return Ok(false);
        }
        if i > 0 {
            let mu = &row[i - 1];
            let lhs = delta * &gso.norms_sq[i - 1];
            let rhs = &gso.norms_sq[i] + mu * mu * &gso.norms_sq[i - 1];
            if lhs > rhs {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Output of [`lll_reduce_fast`].
#[derive(Clone, Debug)]
pub struct FastLll {
    pub basis: LatticeBasis,
    /// `log2 |b*_i|` of the reduced basis, from the floating-point GSO.
    pub log2_gso: Vec<f64>,
}

struct FpState {
    b: Vec<Vec<Int>>,
    bf: Vec<Vec<f64>>,
    norm_f: Vec<f64>,
    r: Vec<Vec<f64>>,
    mu: Vec<Vec<f64>>,
    shift: i64,
}

impl FpState {
    fn approx(&self, v: &[Int]) -> Vec<f64> {
        v.iter().map(|x| to_f64_scaled(x, self.shift)).collect()
    }

    fn refresh(&mut self, k: usize) {
        self.bf[k] = self.approx(&self.b[k]);
        self.norm_f[k] = self.bf[k].iter().map(|x| x * x).sum::<f64>().sqrt();
    }

    fn dot_f(&self, i: usize, j: usize) -> f64 {
        let d: f64 = self.bf[i].iter().zip(&self.bf[j]).map(|(x, y)| x * y).sum();
        // On heavy cancellation fall back to the exact product.
        if d.abs() < 1e-6 * self.norm_f[i] * self.norm_f[j] {
            to_f64_scaled(&dot(&self.b[i], &self.b[j]), 2 * self.shift)
        } else {
            d
        }
    }

    fn compute_row(&mut self, k: usize) {
        for j in 0..k {
            let mut v = self.dot_f(k, j);
            for i in 0..j {
                v -= self.mu[j][i] * self.r[k][i];
            }
            self.r[k][j] = v;
            self.mu[k][j] = v / self.r[j][j];
        }
    }

    fn size_reduce(&mut self, k: usize) -> Result<(), LatticeError> {
        for _round in 0..200 {
            self.compute_row(k);
            let mut changed = false;
            for j in (0..k).rev() {
                let m = self.mu[k][j];
                if m.abs() <= 0.51 {
                    continue;
                }
                let x = m.round();
                changed = true;
                let xi = linalg::round_f64(x);
                let (head, tail) = self.b.split_at_mut(k);
                for (t, s) in tail[0].iter_mut().zip(&head[j]) {
                    if !s.is_zero() {
                        *t -= &xi * s;
                    }
                }
                for i in 0..j {
                    self.mu[k][i] -= x * self.mu[j][i];
                }
                self.mu[k][j] -= x;
            }
            if !changed {
                break;
            }
            self.refresh(k);
            if self.b[k].iter().all(|x| x.is_zero()) {
                return Err(LatticeError::DependentRows);
            }
        }
        let mut rkk = self.dot_f(k, k);
        for j in 0..k {
            rkk -= self.mu[k][j] * self.r[k][j];
        }
        if rkk <= 0.0 {
            // Catastrophic cancellation: fall back to an exact recomputation.
            rkk = exact_gso_norm(&self.b[..=k], self.shift);
            if rkk <= 0.0 {
                return Err(LatticeError::DependentRows);
            }
        }
        self.r[k][k] = rkk;
        Ok(())
    }
}

fn exact_gso_norm(prefix: &[Vec<Int>], shift: i64) -> f64 {
    let n = prefix.len();
    let mut g = IntegralGso::new(n);
    for k in 0..n {
        if g.compute_row(prefix, k).is_err() {
            return 0.0;
        }
    }
    let ratio = BigRational::new(g.d[n].clone(), g.d[n - 1].clone());
    let scaled = ratio.numer() * (Int::one() << 64usize) / ratio.denom();
    to_f64_scaled(&scaled, 64 + 2 * shift)
}

/// LLL with an exact integer basis and floating-point Gram-Schmidt data.
///
/// Size reduction uses `|mu| <= 0.51`; the Lovász test is evaluated in
/// floating point. Dependent input rows produce [`LatticeError::DependentRows`].
pub fn lll_reduce_fast(basis: &LatticeBasis, delta: f64) -> Result<FastLll, LatticeError> {
    if !(0.25 < delta && delta < 1.0) {
        return Err(LatticeError::InvalidDelta);
    }
    let n = basis.rank();
    if n == 0 {
        return Ok(FastLll {
            basis: basis.clone(),
            log2_gso: vec![],
        });
    }
    let shift = (basis.vectors.max_bits() as i64 - 400).max(0);
    let mut st = FpState {
        b: basis.vectors.row_vecs(),
        bf: vec![vec![]; n],
        norm_f: vec![0.0; n],
        r: vec![vec![0.0; n]; n],
        mu: vec![vec![0.0; n]; n],
        shift,
    };
    for k in 0..n {
        st.refresh(k);
    }
    if st.b[0].iter().all(|x| x.is_zero()) {
        return Err(LatticeError::DependentRows);
    }
    st.r[0][0] = st.dot_f(0, 0);
    let mut k = 1;
    while k < n {
        st.size_reduce(k)?;
        let m = st.mu[k][k - 1];
        if delta * st.r[k - 1][k - 1] > st.r[k][k] + m * m * st.r[k - 1][k - 1] {
            st.b.swap(k, k - 1);
            st.bf.swap(k, k - 1);
            st.norm_f.swap(k, k - 1);
            if k == 1 {
                st.r[0][0] = st.dot_f(0, 0);
            }
            k = (k - 1).max(1);
        } else {
            k += 1;
        }
    }
    let log2_gso = (0..n)
        .map(|i| 0.5 * st.r[i][i].log2() + shift as f64)
        .collect();
    Ok(FastLll {
        basis: LatticeBasis::new_unchecked(IntMatrix::from_rows(st.b).expect("rectangular")),
        log2_gso,
    })
}

/// Floating-point GSO (`mu`, `|b*|^2`) of an integer basis with small entries.
fn gso_f64(b: &[Vec<Int>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = b.len();
    let bf: Vec<Vec<f64>> = b.iter().map(|v| v.iter().map(|x| to_f64_scaled(x, 0)).collect()).collect();
    let mut mu = vec![vec![0.0; n]; n];
    let mut r = vec![vec![0.0; n]; n];
    let mut norms = vec![0.0; n];
    for i in 0..n {
        for j in 0..=i {
            let mut v: f64 = bf[i].iter().zip(&bf[j]).map(|(x, y)| x * y).sum();
            for k in 0..j {
                v -= mu[j][k] * r[i][k];
            }
            if j < i {
                r[i][j] = v;
                mu[i][j] = v / norms[j];
            } else {
                norms[i] = v;
            }
        }
    }
    (mu, norms)
}

/// Shortest nonzero vector of the projected block `[start, end)`, as integer
/// coefficients relative to the block vectors, with its projected squared
/// norm. Returns `None` when nothing beats `bound`.
pub(crate) fn enumerate_block(
    mu: &[Vec<f64>],
    norms: &[f64],
    start: usize,
    end: usize,
    bound: f64,
    budget: u64,
) -> Result<Option<(Vec<i64>, f64)>, LatticeError> {
    struct Search<'a> {
        mu: &'a [Vec<f64>],
        norms: &'a [f64],
        start: usize,
        x: Vec<i64>,
        best: f64,
        best_x: Option<Vec<i64>>,
        nodes: u64,
        budget: u64,
    }
    impl Search<'_> {
        fn rec(&mut self, level: usize, partial: f64, all_zero_above: bool) -> Result<(), LatticeError> {
            let dim = self.x.len();
            let gi = self.start + level;
            let mut c = 0.0;
            for j in level + 1..dim {
                c -= self.x[j] as f64 * self.mu[self.start + j][gi];
            }
            let r = self.norms[gi];
            let x0 = c.round() as i64;
            for dir in [1i64, -1] {
                let mut x = if dir == 1 { x0 } else { x0 - 1 };
                loop {
                    if all_zero_above && x < 0 {
                        break;
                    }
                    self.nodes += 1;
                    if self.nodes > self.budget {
                        return Err(LatticeError::BlockTooLarge { nodes: self.nodes });
                    }
                    let diff = x as f64 - c;
                    let dist = partial + diff * diff * r;
                    if dist >= self.best {
                        break;
                    }
                    self.x[level] = x;
                    if level == 0 {
                        let zero = all_zero_above && x == 0;
                        if !zero {
                            self.best = dist;
                            self.best_x = Some(self.x.clone());
                        }
                    } else {
                        self.rec(level - 1, dist, all_zero_above && x == 0)?;
                    }
                    x += dir;
                }
            }
            self.x[level] = 0;
            Ok(())
        }
    }
    let dim = end - start;
    let mut s = Search {
        mu,
        norms,
        start,
        x: vec![0; dim],
        best: bound,
        best_x: None,
        nodes: 0,
        budget,
    };
    s.rec(dim - 1, 0.0, true)?;
    Ok(s.best_x.map(|x| (x, s.best)))
}

/// BKZ configuration beyond block size and delta.
#[derive(Clone, Debug)]
pub struct BkzParams {
    pub node_budget: u64,
    pub max_tours: usize,
}

impl Default for BkzParams {
    fn default() -> Self {
        BkzParams {
            node_budget: 10_000_000,
            max_tours: 64,
        }
    }
}

pub fn bkz_reduce(basis: &LatticeBasis, beta: usize, delta: &BigRational) -> Result<LatticeBasis, LatticeError> {
    bkz_reduce_with(basis, beta, delta, &BkzParams::default())
}

/// Block Korkine-Zolotarev reduction with exact enumeration in each block.
pub fn bkz_reduce_with(
    basis: &LatticeBasis,
    beta: usize,
    delta: &BigRational,
    params: &BkzParams,
) -> Result<LatticeBasis, LatticeError> {
    check_delta(delta)?;
    let n = basis.rank();
    if beta < 2 || beta > n {
        return Err(LatticeError::InvalidBlockSize { beta, rank: n });
    }
    let delta_f = num_traits::ToPrimitive::to_f64(delta).unwrap_or(0.99);
    let mut current = lll_reduce(&lll_reduce_fast(basis, delta_f)?.basis, delta)?;
    if beta == 2 {
        return Ok(current);
    }
    for _tour in 0..params.max_tours {
        let mut changed = false;
        for k in 0..n - 1 {
            let end = (k + beta).min(n);
            let b = current.vectors.row_vecs();
            let (mu, norms) = gso_f64(&b);
            let bound = norms[k] * (1.0 - 1e-9);
            let found = enumerate_block(&mu, &norms, k, end, bound, params.node_budget)?;
            let Some((coeffs, _)) = found else { continue };
            if coeffs.iter().skip(1).all(|&c| c == 0) {
                continue;
            }
            let b = insert_combination(b, k, &coeffs);
            let cand = LatticeBasis::new_unchecked(IntMatrix::from_rows(b).expect("rectangular"));
            current = lll_reduce_fast(&cand, delta_f)?.basis;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    lll_reduce(&current, delta)
}

/// Replace block vectors `b[k..k+len]` by a unimodular transform whose first
/// vector is `sum coeffs[i] * b[k+i]` (coefficients must have gcd 1).
fn insert_combination(mut b: Vec<Vec<Int>>, k: usize, coeffs: &[i64]) -> Vec<Vec<Int>> {
    let idx: Vec<usize> = (0..coeffs.len()).filter(|&i| coeffs[i] != 0).collect();
    let acc = idx[0];
    let mut acc_c = Int::from(coeffs[acc]);
    for &i in &idx[1..] {
        let xi = Int::from(coeffs[i]);
        let (g, s, t) = egcd(&acc_c, &xi);
        let a = &acc_c / &g;
        let c = &xi / &g;
        let va = b[k + acc].clone();
        let vi = b[k + i].clone();
        let w: Vec<Int> = va.iter().zip(&vi).map(|(p, r)| &a * p + &c * r).collect();
        let comp: Vec<Int> = va.iter().zip(&vi).map(|(p, r)| -(&t * p) + &s * r).collect();
        b[k + acc] = w;
        b[k + i] = comp;
        acc_c = g;
    }
    if acc_c.is_negative() {
        for x in b[k + acc].iter_mut() {
            *x = -&*x;
        }
    }
    let v = b.remove(k + acc);
    b.insert(k, v);
    b
}

/// Basis of `{y : <x, y> = 0 for all x in l}` inside `Z^ambient`.
///
/// Computed by LLL on the embedding `[c * l^T | I]`; rows whose left block
/// vanishes span the orthogonal lattice. Falls back to an exact integer
/// kernel when the embedding does not separate.
pub fn orthogonal_lattice(l: &LatticeBasis, ambient: usize) -> Result<LatticeBasis, LatticeError> {
    if l.ambient() != ambient {
        return Err(LatticeError::Dimension(format!(
            "basis lives in Z^{}, not Z^{ambient}",
            l.ambient()
        )));
    }
    let k = l.rank();
    let target = ambient - k;
    if target == 0 {
        return Ok(LatticeBasis::new_unchecked(IntMatrix::zeros(0, ambient)));
    }
    if k == 0 {
        return Ok(LatticeBasis::new_unchecked(IntMatrix::identity(ambient)));
    }
    let entry_bits = l.vectors.max_bits() as usize;
    let mut scale_bits = entry_bits + 16 + (ambient as f64).log2().ceil() as usize;
    let provable_bits = entry_bits + ambient / 2 + 2 * ambient.max(2).ilog2() as usize + 8;
    loop {
        if let Some(found) = orthogonal_by_embedding(l, ambient, scale_bits)? {
            return Ok(found);
        }
        if scale_bits >= provable_bits {
            break;
        }
        scale_bits = (scale_bits * 2).min(provable_bits);
    }
    let ker = linalg::integer_kernel(l.vectors());
    Ok(lll_reduce_fast(&LatticeBasis::new_unchecked(ker), 0.99)?.basis)
}

fn orthogonal_by_embedding(
    l: &LatticeBasis,
    ambient: usize,
    scale_bits: usize,
) -> Result<Option<LatticeBasis>, LatticeError> {
    let k = l.rank();
    let c = Int::one() << scale_bits;
    let mut rows = Vec::with_capacity(ambient);
    for i in 0..ambient {
        let mut row: Vec<Int> = (0..k).map(|j| &c * &l.vectors[(j, i)]).collect();
        row.extend((0..ambient).map(|j| if i == j { Int::one() } else { Int::zero() }));
        rows.push(row);
    }
    let emb = LatticeBasis::new_unchecked(IntMatrix::from_rows(rows).expect("rectangular"));
    let red = lll_reduce_fast(&emb, 0.99)?.basis;
    let target = ambient - k;
    let mut out = Vec::with_capacity(target);
    for i in 0..target {
        let row = red.vectors.row(i);
        if row[..k].iter().any(|x| !x.is_zero()) {
            return Ok(None);
        }
        out.push(row[k..].to_vec());
    }
    Ok(Some(LatticeBasis::new_unchecked(
        IntMatrix::from_rows(out).expect("rectangular"),
    )))
}

/// Completion `(L^⊥)^⊥ = span_R(L) ∩ Z^ambient`, LLL-reduced.
pub fn completion(l: &LatticeBasis, ambient: usize) -> Result<LatticeBasis, LatticeError> {
    if l.ambient() != ambient {
        return Err(LatticeError::Dimension(format!(
            "basis lives in Z^{}, not Z^{ambient}",
            l.ambient()
        )));
    }
    if l.rank() == 0 {
        return Ok(l.clone());
    }
    let sat = linalg::saturation(l.vectors());
    let fast = lll_reduce_fast(&LatticeBasis::new_unchecked(sat), 0.99)?.basis;
    lll_reduce(&fast, &default_delta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn basis(rows: &[&[i64]]) -> LatticeBasis {
        LatticeBasis::new(IntMatrix::from_i64(rows)).unwrap()
    }

    fn random_basis(rng: &mut ChaCha8Rng, n: usize, bits: u32) -> LatticeBasis {
        loop {
            let m = IntMatrix::from_rows((0..n).map(|_| {
                (0..n)
                    .map(|_| {
                        let mag: u64 = if bits >= 64 { rng.gen() } else { rng.gen_range(0..(1u64 << bits)) };
                        let v = Int::from(mag);
                        if rng.gen_bool(0.5) { -v } else { v }
                    })
                    .collect::<Vec<_>>()
            }))
            .unwrap();
            if let Ok(b) = LatticeBasis::new(m) {
                return b;
            }
        }
    }

    #[test]
    fn gso_examples() {
        let g = gram_schmidt_exact(&basis(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]])).unwrap();
        assert!(g.mu.iter().flatten().all(|m| m.is_zero()));
        assert_eq!(g.norms_sq, vec![rat(1, 1); 3]);
        let g = gram_schmidt_exact(&basis(&[&[1, 1], &[0, 1]])).unwrap();
        assert_eq!(g.mu[1][0], rat(1, 2));
        assert_eq!(g.norms_sq, vec![rat(2, 1), rat(1, 2)]);
        let dep = LatticeBasis::new_unchecked(IntMatrix::from_i64(&[&[1, 2], &[2, 4]]));
        assert_eq!(gram_schmidt_exact(&dep), Err(LatticeError::DependentRows));
    }

    #[test]
    fn gso_reconstructs_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random_basis(&mut rng, 4, 10);
        let g = gram_schmidt_exact(&b).unwrap();
        // rebuild b*_i = b_i - sum mu_ij b*_j and check b_i from them
        let rows: Vec<Vec<BigRational>> = b
            .vectors()
            .row_vecs()
            .into_iter()
            .map(|r| r.into_iter().map(BigRational::from_integer).collect())
            .collect();
        let mut stars: Vec<Vec<BigRational>> = Vec::new();
        for i in 0..4 {
            let mut s = rows[i].clone();
            for j in 0..i {
                for c in 0..4 {
                    s[c] = &s[c] - &g.mu[i][j] * &stars[j][c];
                }
            }
            let nsq: BigRational = s.iter().map(|x| x * x).sum();
            assert_eq!(nsq, g.norms_sq[i]);
            stars.push(s);
        }
        for i in 0..4 {
            for c in 0..4 {
                let mut v = stars[i][c].clone();
                for j in 0..i {
                    v += &g.mu[i][j] * &stars[j][c];
                }
                assert_eq!(v, rows[i][c]);
            }
        }
    }

    #[test]
    fn lll_examples() {
        let id = LatticeBasis::new(IntMatrix::identity(5)).unwrap();
        let out = lll_reduce(&id, &default_delta()).unwrap();
        assert_eq!(out.hnf(), IntMatrix::identity(5));
        for r in 0..5 {
            assert_eq!(out.vectors().row(r).iter().filter(|x| !x.is_zero()).count(), 1);
        }
        let sw = basis(&[&[0, 1], &[1, 0]]);
        let out = lll_reduce(&sw, &default_delta()).unwrap();
        assert!(out.same_lattice(&LatticeBasis::new(IntMatrix::identity(2)).unwrap()));
        let dep = LatticeBasis::new_unchecked(IntMatrix::from_i64(&[&[1, 2], &[2, 4]]));
        assert_eq!(lll_reduce(&dep, &default_delta()), Err(LatticeError::DependentRows));
        assert_eq!(lll_reduce(&sw, &rat(1, 5)), Err(LatticeError::InvalidDelta));
    }

    #[test]
    fn lll_random_64_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let b = random_basis(&mut rng, 6, 64);
            let out = lll_reduce(&b, &default_delta()).unwrap();
            assert!(is_lll_reduced(&out, &default_delta()).unwrap());
            assert_eq!(out.hnf(), b.hnf());
        }
    }

    #[test]
    fn fast_lll_agrees_on_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [3, 6, 10] {
            let b = random_basis(&mut rng, n, 40);
            let out = lll_reduce_fast(&b, 0.99).unwrap();
            assert_eq!(out.basis.hnf(), b.hnf());
            // Nearly reduced: the exact pass has little to do.
            let exact = lll_reduce(&out.basis, &rat(3, 4)).unwrap();
            assert!(is_lll_reduced(&exact, &rat(3, 4)).unwrap());
        }
        let dep = LatticeBasis::new_unchecked(IntMatrix::from_i64(&[&[1, 2], &[3, 4], &[4, 6]]));
        assert!(lll_reduce_fast(&dep, 0.99).is_err());
    }

    #[test]
    fn fast_lll_huge_entries() {
        // Entries far beyond the f64 exponent range of squared norms.
        let big = Int::one() << 700usize;
        let m = IntMatrix::from_rows(vec![
            vec![big.clone(), Int::zero(), Int::zero()],
            vec![&big - 3, Int::one(), Int::zero()],
            vec![&big - 5, Int::zero(), Int::one()],
        ])
        .unwrap();
        let b = LatticeBasis::new(m).unwrap();
        let out = lll_reduce_fast(&b, 0.99).unwrap();
        assert_eq!(out.basis.hnf(), b.hnf());
        assert!(out.basis.vectors().row(0).iter().all(|x| x.bits() < 8));
    }

    fn brute_force_min_norm(b: &LatticeBasis, range: i64) -> Int {
        let rows = b.vectors().row_vecs();
        let n = rows.len();
        let mut best: Option<Int> = None;
        let mut coeffs = vec![-range; n];
        loop {
            if coeffs.iter().any(|&c| c != 0) {
                let mut v = vec![Int::zero(); b.ambient()];
                for (c, r) in coeffs.iter().zip(&rows) {
                    for (x, y) in v.iter_mut().zip(r) {
                        *x += Int::from(*c) * y;
                    }
                }
                let nsq = dot(&v, &v);
                if best.as_ref().is_none_or(|bst| nsq < *bst) {
                    best = Some(nsq);
                }
            }
            let mut i = 0;
            loop {
                if i == n {
                    return best.unwrap();
                }
                coeffs[i] += 1;
                if coeffs[i] > range {
                    coeffs[i] = -range;
                    i += 1;
                } else {
                    break;
                }
            }
        }
    }

    #[test]
    fn bkz_examples() {
        let id = LatticeBasis::new(IntMatrix::identity(4)).unwrap();
        let out = bkz_reduce(&id, 4, &default_delta()).unwrap();
        assert_eq!(dot(out.vectors().row(0), out.vectors().row(0)), Int::one());

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3 {
            let b = random_basis(&mut rng, 6, 8);
            let lll = lll_reduce(&b, &default_delta()).unwrap();
            let bkz2 = bkz_reduce(&b, 2, &default_delta()).unwrap();
            assert_eq!(bkz2.hnf(), lll.hnf());
            let full = bkz_reduce(&b, 6, &default_delta()).unwrap();
            assert_eq!(full.hnf(), b.hnf());
            assert!(is_lll_reduced(&full, &default_delta()).unwrap());
            // Oracle: coefficients of an LLL basis for the shortest vector are small.
            let min = brute_force_min_norm(&lll, 3);
            let first = dot(full.vectors().row(0), full.vectors().row(0));
            assert_eq!(first, min);
        }
        assert_eq!(
            bkz_reduce(&id, 5, &default_delta()),
            Err(LatticeError::InvalidBlockSize { beta: 5, rank: 4 })
        );
    }

    #[test]
    fn bkz_budget_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_basis(&mut rng, 8, 20);
        let params = BkzParams {
            node_budget: 3,
            max_tours: 4,
        };
        assert!(matches!(
            bkz_reduce_with(&b, 8, &default_delta(), &params),
            Err(LatticeError::BlockTooLarge { .. })
        ));
    }

    #[test]
    fn orthogonal_examples() {
        let e1 = basis(&[&[1, 0]]);
        let o = orthogonal_lattice(&e1, 2).unwrap();
        assert!(o.same_lattice(&basis(&[&[0, 1]])));

        let ones = basis(&[&[1, 1, 1]]);
        let o = orthogonal_lattice(&ones, 3).unwrap();
        assert_eq!(o.rank(), 2);
        for r in 0..2 {
            assert!(o.vectors().row(r).iter().sum::<Int>().is_zero());
        }
        let expected = linalg::integer_kernel(&IntMatrix::from_i64(&[&[1, 1, 1]]));
        assert_eq!(o.hnf(), linalg::hnf(&expected));
        assert!(o.same_lattice(&basis(&[&[1, -1, 0], &[0, 1, -1]])));
    }

    #[test]
    fn orthogonal_rank_additivity_and_completion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (r, m) in [(1, 4), (2, 6), (3, 7)] {
            let l = LatticeBasis::new(
                IntMatrix::from_rows((0..r).map(|_| (0..m).map(|_| rng.gen_range(-5i64..6)).collect::<Vec<_>>()))
                    .unwrap(),
            )
            .unwrap();
            let o = orthogonal_lattice(&l, m).unwrap();
            assert_eq!(o.rank() + l.rank(), m);
            for i in 0..o.rank() {
                for j in 0..l.rank() {
                    assert!(dot(o.vectors().row(i), l.vectors().row(j)).is_zero());
                }
            }
            let c = completion(&l, m).unwrap();
            assert_eq!(c.rank(), r);
            for j in 0..r {
                assert!(c.contains(l.vectors().row(j)));
            }
            assert!(completion(&c, m).unwrap().same_lattice(&c));
            let oo = orthogonal_lattice(&o, m).unwrap();
            assert!(oo.same_lattice(&c));
        }
    }

    #[test]
    fn completion_examples() {
        let p = basis(&[&[1, 0]]);
        assert!(completion(&p, 2).unwrap().same_lattice(&p));
        let two = basis(&[&[2, 0]]);
        assert!(completion(&two, 2).unwrap().same_lattice(&p));
    }

    #[test]
    fn insertion_is_unimodular() {
        let b = IntMatrix::from_i64(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]).row_vecs();
        let out = insert_combination(b, 0, &[2, 3, -5]);
        let m = LatticeBasis::new(IntMatrix::from_rows(out.clone()).unwrap()).unwrap();
        assert_eq!(out[0], vec![Int::from(2), Int::from(3), Int::from(-5)]);
        assert_eq!(m.hnf(), IntMatrix::identity(3));
    }
}
