//! Scalars (exact rationals, f64 complex, double-double complex) and the
//! small combinatorial toolkit: τ-binomials, Pochhammer symbols, elementary
//! symmetric polynomials, index sets and permutations.

mod dd;

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

use itertools::Itertools;
use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};
use rand::Rng;

pub use dd::Dd;

use crate::error::{Error, Result};

/// Complex number with double-double components.
pub type DdComplex = Complex<Dd>;

/// Field element usable by every formula in the crate. Exact mode is
/// `BigRational`; numeric modes are `Complex64` and `DdComplex`.
pub trait Scalar:
    Clone
    + fmt::Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(n: i64) -> Self;
    fn from_rational(r: &BigRational) -> Self;
    /// Exact test against zero (no tolerance in any mode).
    fn is_zero(&self) -> bool;
    /// |self| as f64, for reporting and validation only.
    fn magnitude(&self) -> f64;

    fn powi(&self, n: i64) -> Self {
        let mut base = if n < 0 { Self::one() / self.clone() } else { self.clone() };
        let mut e = n.unsigned_abs();
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            e >>= 1;
            if e > 0 {
                base = base.clone() * base;
            }
        }
        acc
    }
}

/// Numeric scalars used on quadrature grids.
pub trait ComplexScalar: Scalar + Copy + AddAssign + MulAssign {
    /// Unit roundoff of the underlying real type.
    const UNIT_ROUNDOFF: f64;
    fn from_c64(z: Complex64) -> Self;
    fn to_c64(self) -> Complex64;
    fn exp(self) -> Self;
    /// `center + radius·e^{2πi(j+offset)/m}` with the angle formed in the
    /// scalar's own precision.
    fn circle_node(center: Self, radius: Self, j: usize, offset: f64, m: usize) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_i64(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }
}

fn bigint_to_dd(n: &BigInt) -> Dd {
    let hi = n.to_f64().unwrap_or(f64::INFINITY);
    if !hi.is_finite() {
        return Dd::from_f64(hi);
    }
    let rest = n - BigInt::from_f64(hi).expect("finite f64 converts to BigInt");
    Dd::from_f64(hi) + Dd::from_f64(rest.to_f64().unwrap_or(0.0))
}

fn rational_to_dd(r: &BigRational) -> Dd {
    bigint_to_dd(r.numer()) / bigint_to_dd(r.denom())
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_i64(n: i64) -> Self {
        Complex64::new(n as f64, 0.0)
    }
    fn from_rational(r: &BigRational) -> Self {
        Complex64::new(rational_to_dd(r).to_f64(), 0.0)
    }
    fn is_zero(&self) -> bool {
        self.re == 0.0 && self.im == 0.0
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

impl ComplexScalar for Complex64 {
    const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;
    fn from_c64(z: Complex64) -> Self {
        z
    }
    fn to_c64(self) -> Complex64 {
        self
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn circle_node(center: Self, radius: Self, j: usize, offset: f64, m: usize) -> Self {
        let theta = std::f64::consts::TAU * (j as f64 + offset) / m as f64;
        center + radius * Complex64::from_polar(1.0, theta)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl Scalar for DdComplex {
    fn zero() -> Self {
        Complex::new(Dd::zero(), Dd::zero())
    }
    fn one() -> Self {
        Complex::new(Dd::one(), Dd::zero())
    }
    fn from_i64(n: i64) -> Self {
        Complex::new(bigint_to_dd(&BigInt::from(n)), Dd::zero())
    }
    fn from_rational(r: &BigRational) -> Self {
        Complex::new(rational_to_dd(r), Dd::zero())
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(&self.re) && Zero::is_zero(&self.im)
    }
    fn magnitude(&self) -> f64 {
        self.to_c64().norm()
    }
}

impl ComplexScalar for DdComplex {
    const UNIT_ROUNDOFF: f64 = 1.0e-32;
    fn from_c64(z: Complex64) -> Self {
        Complex::new(Dd::from_f64(z.re), Dd::from_f64(z.im))
    }
    fn to_c64(self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }
    fn exp(self) -> Self {
        let r = self.re.exp();
        let (s, c) = self.im.sin_cos();
        Complex::new(r * c, r * s)
    }
    fn circle_node(center: Self, radius: Self, j: usize, offset: f64, m: usize) -> Self {
        let turns = (Dd::from_f64(j as f64) + Dd::from_f64(offset)) / Dd::from_f64(m as f64);
        let (s, c) = (Dd::tau() * turns).sin_cos();
        center + radius * Complex::new(c, s)
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Exact rational from an integer ratio.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Random rational with numerator in [-50, 50] and denominator in [1, 50].
pub fn random_rational<R: Rng + ?Sized>(rng: &mut R) -> BigRational {
    ratio(rng.random_range(-50..=50), rng.random_range(1..=50))
}

/// τ-binomial `[n choose k]_τ = ∏_{j<k}(1−τ^{n−j}) / ∏_{j=1..k}(1−τ^j)`.
///
/// Defined by the same product for every integer `n`, so it vanishes for
/// `0 ≤ n < k` and is generally nonzero for `n < 0`.
pub fn tau_binom<S: Scalar>(n: i64, k: i64, tau: &S) -> Result<S> {
    if k < 0 {
        return Err(Error::Domain(format!("tau_binom with k = {k} < 0")));
    }
    if *tau == S::one() {
        return Err(Error::DegenerateParameter("tau = 1 in tau_binom".into()));
    }
    let mut num = S::one();
    let mut den = S::one();
    for j in 0..k {
        num = num * (S::one() - tau.powi(n - j));
        den = den * (S::one() - tau.powi(j + 1));
    }
    Ok(num / den)
}

/// Pochhammer symbol `(λ;τ)_m = ∏_{j<m}(1 − λτ^j)`.
pub fn pochhammer<S: Scalar>(lambda: &S, tau: &S, m: usize) -> S {
    let mut acc = S::one();
    let mut tj = S::one();
    for _ in 0..m {
        acc = acc * (S::one() - lambda.clone() * tj.clone());
        tj = tj * tau.clone();
    }
    acc
}

/// Elementary symmetric polynomial `e_n`; zero for `n > N`.
pub fn elem_sym<S: Scalar>(n: usize, xi: &[S]) -> S {
    if n > xi.len() {
        return S::zero();
    }
    let mut e = vec![S::zero(); n + 1];
    e[0] = S::one();
    for x in xi {
        for k in (1..=n).rev() {
            e[k] = e[k].clone() + e[k - 1].clone() * x.clone();
        }
    }
    e[n].clone()
}

/// Sorted subset of `[1..=n]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexSet {
    n: usize,
    elems: Vec<usize>,
}

impl IndexSet {
    pub fn new(n: usize, mut elems: Vec<usize>) -> Result<Self> {
        elems.sort_unstable();
        if elems.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("repeated element in index set".into()));
        }
        if elems.iter().any(|&e| e == 0 || e > n) {
            return Err(Error::Domain(format!("index set element outside [1..{n}]")));
        }
        Ok(IndexSet { n, elems })
    }

    pub fn full(n: usize) -> Self {
        IndexSet { n, elems: (1..=n).collect() }
    }

    /// Bit `i` of `mask` selects element `i + 1`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        IndexSet { n, elems: (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect() }
    }

    pub fn mask(&self) -> u64 {
        self.elems.iter().fold(0, |m, &e| m | 1 << (e - 1))
    }

    pub fn ambient(&self) -> usize {
        self.n
    }

    pub fn elements(&self) -> &[usize] {
        &self.elems
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn complement(&self) -> Self {
        let m = self.mask();
        IndexSet::from_mask(self.n, !m & ((1u64 << self.n) - 1))
    }

    /// Sum of the elements.
    pub fn sum(&self) -> i64 {
        self.elems.iter().map(|&e| e as i64).sum()
    }

    /// All subsets of `[1..=n]` with `k` elements, in lexicographic order.
    pub fn all_of_size(n: usize, k: usize) -> impl Iterator<Item = IndexSet> {
        (1..=n).combinations(k).map(move |elems| IndexSet { n, elems })
    }
}

/// `σ(U,V) = #{(i,j) : i ≥ j, i ∈ U, j ∈ V}`.
pub fn order_stat(u: &IndexSet, v: &IndexSet) -> Result<i64> {
    if u.n != v.n {
        return Err(Error::Domain("order_stat on sets with different ambient size".into()));
    }
    Ok(u.elems.iter().map(|&i| v.elems.iter().filter(|&&j| i >= j).count() as i64).sum())
}

/// A bijection of `[1..=n]`, stored zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    images: Vec<usize>,
}

pub const MAX_PERMUTATION_N: usize = 8;

impl Permutation {
    pub fn from_one_based(images: &[usize]) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &v in images {
            if v == 0 || v > n || seen[v - 1] {
                return Err(Error::Domain("not a permutation".into()));
            }
            seen[v - 1] = true;
        }
        Ok(Permutation { images: images.iter().map(|v| v - 1).collect() })
    }

    pub fn identity(n: usize) -> Self {
        Permutation { images: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Zero-based image of zero-based `i`.
    pub fn at(&self, i: usize) -> usize {
        self.images[i]
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.images.len()];
        for (i, &v) in self.images.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { images: inv }
    }

    /// Every permutation of `[1..=n]`; refuses `n > 8`.
    pub fn all(n: usize) -> Result<Vec<Permutation>> {
        if n > MAX_PERMUTATION_N {
            return Err(Error::Resource(format!("{n}! permutations exceeds the cap of {MAX_PERMUTATION_N}!")));
        }
        Ok((0..n).permutations(n).map(|images| Permutation { images }).collect())
    }
}

/// Outcome of an identity or consistency check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest |lhs − rhs| seen; exact checks report 0 on success.
    pub max_residual: f64,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        CheckReport { name: name.into(), cases: 0, failures: 0, max_residual: 0.0, notes: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }

    pub fn record_exact(&mut self, lhs: &BigRational, rhs: &BigRational) {
        self.cases += 1;
        if lhs != rhs {
            self.failures += 1;
            self.max_residual = self.max_residual.max((lhs - rhs).magnitude());
        }
    }

    pub fn record_numeric(&mut self, residual: f64, tol: f64) {
        self.cases += 1;
        self.max_residual = self.max_residual.max(residual);
        if !(residual <= tol) {
            self.failures += 1;
        }
    }

    pub fn merge(&mut self, other: &CheckReport) {
        self.cases += other.cases;
        self.failures += other.failures;
        self.max_residual = self.max_residual.max(other.max_residual);
        self.notes.extend(other.notes.iter().cloned());
    }
}

pub const MAX_SUBSET_N: usize = 14;

/// Checks `Σ_{S⊂[1..n], |S|=k} τ^{σ(S)−σ(S,S)} = [n choose k]_τ` by brute force.
pub fn subset_qsum_identity_check(n: usize, k: usize, tau: &BigRational) -> Result<CheckReport> {
    if n > MAX_SUBSET_N {
        return Err(Error::Resource(format!("subset enumeration with n = {n} > {MAX_SUBSET_N}")));
    }
    if k > n {
        return Err(Error::Domain(format!("k = {k} > n = {n}")));
    }
    let full = IndexSet::full(n);
    let mut lhs = <BigRational as Zero>::zero();
    for s in IndexSet::all_of_size(n, k) {
        let e = order_stat(&s, &full)? - order_stat(&s, &s)?;
        lhs += Scalar::powi(tau, e);
    }
    let rhs = tau_binom(n as i64, k as i64, tau)?;
    let mut report = CheckReport::new(format!("subset q-sum n={n} k={k}"));
    report.record_exact(&lhs, &rhs);
    Ok(report)
}
