//! The Bethe weight `U`, the energy `ε`, the amplitudes `A_σ`, the
//! symmetric polynomials `f_L`, and exact verifiers for the identities they
//! satisfy.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::Signed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{random_rational, tau_binom, CheckReport, IndexSet, Permutation, Scalar};
use crate::contour::{tensor_sum, ContourPlan, NodeSet};
use crate::error::{Error, Result};

/// Hop rates: right with `p`, left with `q = 1 − p`. Always exact.
#[derive(Clone, PartialEq, Eq)]
pub struct Params {
    p: BigRational,
    q: BigRational,
}

impl Params {
    pub fn new(p: BigRational) -> Result<Self> {
        if p.is_negative() || p > BigRational::one() {
            return Err(Error::Parameter(format!("p = {p} outside [0, 1]")));
        }
        let q = BigRational::one() - &p;
        Ok(Params { p, q })
    }

    pub fn from_ratio(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Parameter("zero denominator in p".into()));
        }
        Params::new(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn p(&self) -> &BigRational {
        &self.p
    }

    pub fn q(&self) -> &BigRational {
        &self.q
    }

    pub fn p_f64(&self) -> f64 {
        self.p.magnitude()
    }

    pub fn q_f64(&self) -> f64 {
        self.q.magnitude()
    }

    /// `τ = p/q`; an error when `q = 0`.
    pub fn tau(&self) -> Result<BigRational> {
        if self.q.is_zero() {
            return Err(Error::Parameter("tau undefined for q = 0".into()));
        }
        Ok(&self.p / &self.q)
    }

    pub fn tau_f64(&self) -> Result<f64> {
        Ok(self.tau()?.magnitude())
    }

    /// Parameters with the roles of `p` and `q` exchanged (`τ → 1/τ`).
    pub fn swapped(&self) -> Params {
        Params { p: self.q.clone(), q: self.p.clone() }
    }

    /// Requires `0 < p < 1`.
    pub fn require_both_positive(&self) -> Result<()> {
        if self.p.is_zero() || self.q.is_zero() {
            return Err(Error::Parameter(format!("need 0 < p < 1, got p = {}", self.p)));
        }
        Ok(())
    }

    pub fn rates<S: Scalar>(&self) -> Rates<S> {
        let tau = if self.q.is_zero() { None } else { Some(S::from_rational(&(&self.p / &self.q))) };
        Rates { p: S::from_rational(&self.p), q: S::from_rational(&self.q), tau }
    }
}

impl fmt::Debug for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Params(p = {})", self.p)
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.p)
    }
}

impl FromStr for Params {
    type Err = Error;

    /// Accepts `7/10`, `0.7` (read as the exact decimal) or `1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parameter(format!("cannot parse p from {s:?}"));
        let value = if let Some((n, d)) = s.split_once('/') {
            let n = BigInt::from_str(n.trim()).map_err(|_| bad())?;
            let d = BigInt::from_str(d.trim()).map_err(|_| bad())?;
            if d == BigInt::from(0) {
                return Err(bad());
            }
            BigRational::new(n, d)
        } else if let Some((i, frac)) = s.split_once('.') {
            if !frac.chars().all(|c| c.is_ascii_digit()) || i.starts_with('-') {
                return Err(bad());
            }
            let digits = format!("{}{}", if i.is_empty() { "0" } else { i }, frac);
            let n = BigInt::from_str(&digits).map_err(|_| bad())?;
            BigRational::new(n, BigInt::from(10u32).pow(frac.len() as u32))
        } else {
            BigRational::from_integer(BigInt::from_str(s).map_err(|_| bad())?)
        };
        Params::new(value)
    }
}

/// `p`, `q`, `τ` converted into a particular scalar type.
#[derive(Clone, Debug)]
pub struct Rates<S> {
    pub p: S,
    pub q: S,
    pub tau: Option<S>,
}

impl<S: Scalar> Rates<S> {
    pub fn tau(&self) -> Result<&S> {
        self.tau.as_ref().ok_or_else(|| Error::Parameter("tau undefined for q = 0".into()))
    }
}

#[inline]
pub(crate) fn u_raw<S: Scalar>(a: &S, b: &S, r: &Rates<S>) -> S {
    (r.p.clone() + r.q.clone() * a.clone() * b.clone() - a.clone()) / (b.clone() - a.clone())
}

/// `1/U(a, b) = (b − a)/(p + q·a·b − a)`, regular at `a = b`.
#[inline]
pub(crate) fn u_inv_raw<S: Scalar>(a: &S, b: &S, r: &Rates<S>) -> S {
    (b.clone() - a.clone()) / (r.p.clone() + r.q.clone() * a.clone() * b.clone() - a.clone())
}

/// `U(ξ, ξ′) = (p + qξξ′ − ξ)/(ξ′ − ξ)`.
pub fn u_weight<S: Scalar>(xi: &S, xi_prime: &S, r: &Rates<S>) -> Result<S> {
    if (xi_prime.clone() - xi.clone()).is_zero() {
        return Err(Error::DivisionByZero("U(ξ, ξ′) with ξ = ξ′".into()));
    }
    Ok(u_raw(xi, xi_prime, r))
}

/// `ε(ξ) = p/ξ + qξ − 1`.
pub fn energy<S: Scalar>(xi: &S, r: &Rates<S>) -> Result<S> {
    if xi.is_zero() {
        return Err(Error::DivisionByZero("ε(0)".into()));
    }
    Ok(r.p.clone() / xi.clone() + r.q.clone() * xi.clone() - S::one())
}

/// `A_σ = ∏_{i<j} U(ξ_{σ(i)}, ξ_{σ(j)}) / U(ξ_i, ξ_j)`, evaluated pair by
/// pair: an inverted pair `a < b` contributes `−(p+qξ_aξ_b−ξ_b)/(p+qξ_aξ_b−ξ_a)`.
pub fn amplitude<S: Scalar>(sigma: &Permutation, xi: &[S], r: &Rates<S>) -> Result<S> {
    let n = xi.len();
    if sigma.len() != n {
        return Err(Error::Domain("permutation and spectral vector differ in length".into()));
    }
    let pos = sigma.inverse();
    let mut acc = S::one();
    for a in 0..n {
        for b in a + 1..n {
            if pos.at(a) > pos.at(b) {
                let base = r.p.clone() + r.q.clone() * xi[a].clone() * xi[b].clone();
                let den = base.clone() - xi[a].clone();
                if den.is_zero() {
                    return Err(Error::Pole(format!("p + qξ_aξ_b − ξ_a = 0 for pair ({}, {})", a + 1, b + 1)));
                }
                acc = acc * (-(base - xi[b].clone()) / den);
            }
        }
    }
    Ok(acc)
}

pub(crate) fn amplitude_raw<S: Scalar>(pos: &[usize], xi: &[S], r: &Rates<S>) -> S {
    let n = xi.len();
    let mut acc = S::one();
    for a in 0..n {
        for b in a + 1..n {
            if pos[a] > pos[b] {
                let base = r.p.clone() + r.q.clone() * xi[a].clone() * xi[b].clone();
                acc = acc * (-(base.clone() - xi[b].clone()) / (base - xi[a].clone()));
            }
        }
    }
    acc
}

pub const MAX_F_POLY_N: usize = 12;

/// Scratch space for repeated `f_L` evaluations on small vectors.
pub(crate) struct FPolyWork<S> {
    cur: Vec<S>,
    next: Vec<S>,
    pub(crate) umat: Vec<S>,
    pinv: Vec<S>,
}

impl<S: Scalar> FPolyWork<S> {
    pub(crate) fn new(n: usize, r: &Rates<S>) -> Self {
        let size = 1usize << n;
        let pinv = (0..=n).map(|s| r.p.powi(1 - s as i64)).collect();
        FPolyWork { cur: vec![S::zero(); size], next: vec![S::zero(); size], umat: vec![S::zero(); n * n], pinv }
    }

    /// `f_L(ξ)` through the recursion, bottom-up over index subsets. Entries
    /// of `xi` must be pairwise distinct (not checked).
    pub(crate) fn eval(&mut self, l: usize, xi: &[S], r: &Rates<S>) -> S {
        let n = xi.len();
        if l > n {
            return S::zero();
        }
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    self.umat[a * n + b] = u_raw(&xi[a], &xi[b], r);
                }
            }
        }
        self.eval_with_u(l, xi)
    }

    /// As `eval`, with `U(ξ_a, ξ_b)` already stored row-major in `umat`.
    pub(crate) fn eval_with_u(&mut self, l: usize, xi: &[S]) -> S {
        let n = xi.len();
        if l > n {
            return S::zero();
        }
        let full = (1usize << n) - 1;
        let base = n + 1 - l;
        for mask in 0..=full {
            if mask.count_ones() as usize == base {
                let mut prod = S::one();
                for (i, x) in xi.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        prod = prod * x.clone();
                    }
                }
                self.cur[mask] = S::one() - prod;
            }
        }
        for level in 2..=l {
            let size = base + level - 1;
            for mask in 0..=full {
                if mask.count_ones() as usize != size {
                    continue;
                }
                let mut sum = S::zero();
                for k in 0..n {
                    if mask >> k & 1 == 0 {
                        continue;
                    }
                    let mut term = S::one() - xi[k].clone();
                    for j in 0..n {
                        if j != k && mask >> j & 1 == 1 {
                            term = term * xi[j].clone() * self.umat[k * n + j].clone();
                        }
                    }
                    sum = sum + term * self.cur[mask & !(1 << k)].clone();
                }
                self.next[mask] = self.pinv[size].clone() * sum;
            }
            std::mem::swap(&mut self.cur, &mut self.next);
        }
        self.cur[full].clone()
    }
}

fn require_distinct<S: Scalar>(xi: &[S]) -> Result<()> {
    for a in 0..xi.len() {
        for b in a + 1..xi.len() {
            if (xi[a].clone() - xi[b].clone()).is_zero() {
                return Err(Error::DivisionByZero(format!("coincident entries ξ_{} = ξ_{}", a + 1, b + 1)));
            }
        }
    }
    Ok(())
}

/// `f_L(ξ)` by the recursion `f_L = p^{1−N} Σ_k (1−ξ_k) ∏_{j≠k} ξ_j U(ξ_k,ξ_j) f_{L−1}(ξ̂_k)`,
/// `f_1 = 1 − ∏ξ_i`. Vanishes identically when `N < L`.
pub fn f_poly<S: Scalar>(l: usize, xi: &[S], r: &Rates<S>) -> Result<S> {
    if l == 0 {
        return Err(Error::Domain("f_L is defined for L ≥ 1".into()));
    }
    if xi.len() > MAX_F_POLY_N {
        return Err(Error::Resource(format!("f_L memo table for N = {} > {MAX_F_POLY_N}", xi.len())));
    }
    require_distinct(xi)?;
    Ok(FPolyWork::new(xi.len(), r).eval(l, xi, r))
}

/// The integrand `φ_L(z; ξ)` of the contour definition of `f_L`.
pub fn phi_l<S: Scalar>(z: &[S], xi: &[S], r: &Rates<S>) -> S {
    let l = z.len();
    let mut v = S::one();
    for (i, zi) in z.iter().enumerate() {
        for x in xi {
            v = v * u_raw(zi, x, r);
        }
        v = v / (zi.powi((l - i) as i64) * (r.q.clone() * zi.clone() - r.p.clone()));
    }
    for i in 0..l {
        for j in i + 1..l {
            v = v * u_inv_raw(&z[j], &z[i], r);
        }
    }
    v
}

/// Small circles around each `ξ_j`, every one clear of the other
/// singularities of `φ_L` by a factor of three.
pub fn gamma_xi_nodes(xi: &[Complex64], params: &Params, nodes: usize) -> Result<NodeSet<Complex64>> {
    let tau = params.tau_f64()?;
    let (p, q) = (params.p_f64(), params.q_f64());
    let mut avoid = vec![Complex64::new(0.0, 0.0), Complex64::new(tau, 0.0)];
    avoid.extend(xi.iter().map(|x| p / (1.0 - q * x)));
    let mut sep = f64::INFINITY;
    for (a, x) in xi.iter().enumerate() {
        for y in xi.iter().skip(a + 1) {
            sep = sep.min((x - y).norm());
        }
        for w in &avoid {
            sep = sep.min((x - w).norm());
        }
    }
    if !(sep > 1e-6) {
        return Err(Error::Contour(format!("Γ_ξ: points too close to a singularity (separation {sep:e})")));
    }
    let radius = sep / 3.0;
    let mut set = NodeSet::empty();
    for x in xi {
        set.append(&NodeSet::circle(*x, radius, nodes, 0.25));
    }
    Ok(set)
}

/// `f_L(ξ) = p^{L(L+1)/2 − LN} ∏ξ_i^L ∮…∮ φ_L` over `Γ_ξ`, by quadrature.
pub fn f_poly_via_contour(l: usize, xi: &[Complex64], params: &Params, plan: &ContourPlan) -> Result<Complex64> {
    let r = params.rates::<Complex64>();
    let set = gamma_xi_nodes(xi, params, plan.small.nodes)?;
    let sets = vec![set; l];
    let integral = tensor_sum(|z: &[Complex64]| phi_l(z, xi, &r), &sets, plan.budget)?;
    let n = xi.len() as i64;
    let l = l as i64;
    let pref = Scalar::powi(&r.p, l * (l + 1) / 2 - l * n) * xi.iter().fold(Complex64::new(1.0, 0.0), |a, x| a * x.powi(l as i32));
    Ok(pref * integral.value)
}

/// Deliberate corruption of a verifier, to prove it can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Perturbation {
    #[default]
    None,
    /// Doubles the first summand of the left-hand side.
    DoubleFirstSummand,
    /// Drops the `τ^{−m}` factor in the Lemma.
    DropTauFactor,
}

const MAX_RESAMPLES: usize = 100;

/// Draws distinct rationals with every subset product ≠ 1 and every entry ≠ 0.
fn sample_generic_point(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<BigRational>> {
    'outer: for _ in 0..MAX_RESAMPLES {
        let xi: Vec<BigRational> = (0..n).map(|_| random_rational(rng)).collect();
        for a in 0..n {
            if xi[a].is_zero() {
                continue 'outer;
            }
            for b in a + 1..n {
                if xi[a] == xi[b] {
                    continue 'outer;
                }
            }
        }
        for mask in 1u64..(1 << n) {
            let prod = IndexSet::from_mask(n, mask).elements().iter().fold(<BigRational as Scalar>::one(), |acc, &i| acc * &xi[i - 1]);
            if prod == <BigRational as Scalar>::one() {
                continue 'outer;
            }
        }
        return Ok(xi);
    }
    Err(Error::Domain(format!("no generic sample point after {MAX_RESAMPLES} draws")))
}

fn identity_1l_lhs(l: usize, xi: &[BigRational], r: &Rates<BigRational>, perturb: Perturbation) -> Result<BigRational> {
    let n = xi.len();
    let mut total = BigRational::zero();
    for (idx, sigma) in Permutation::all(n)?.iter().enumerate() {
        let x: Vec<&BigRational> = (0..n).map(|i| &xi[sigma.at(i)]).collect();
        let mut term = BigRational::one();
        for i in 0..n {
            for j in i + 1..n {
                term *= u_raw(x[i], x[j], r);
            }
            term *= Scalar::powi(x[i], i as i64);
        }
        for j in l..n {
            let tail = x[j..].iter().fold(BigRational::one(), |a, v| a * *v);
            term /= BigRational::one() - tail;
        }
        if idx == 0 && perturb == Perturbation::DoubleFirstSummand {
            term *= BigRational::from_integer(2.into());
        }
        total += term;
    }
    Ok(total)
}

/// Identity 1_L at random rational points: the permutation sum equals
/// `p^{N(N−1)/2} f_L(ξ)/∏(1−ξ_i)`.
pub fn verify_identity_1l(n: usize, l: usize, params: &Params, trials: usize, seed: u64) -> Result<CheckReport> {
    verify_identity_1l_with(n, l, params, trials, seed, Perturbation::None)
}

pub fn verify_identity_1l_with(
    n: usize,
    l: usize,
    params: &Params,
    trials: usize,
    seed: u64,
    perturb: Perturbation,
) -> Result<CheckReport> {
    if l == 0 || l > n {
        return Err(Error::Domain(format!("identity 1_L needs N ≥ L ≥ 1, got N = {n}, L = {l}")));
    }
    if n > 7 {
        return Err(Error::Resource(format!("identity 1_L with N = {n} > 7")));
    }
    let r = params.rates::<BigRational>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("identity 1_L N={n} L={l}"));
    for _ in 0..trials {
        let xi = sample_generic_point(n, &mut rng)?;
        let lhs = identity_1l_lhs(l, &xi, &r, perturb)?;
        let den = xi.iter().fold(BigRational::one(), |a, x| a * (BigRational::one() - x));
        let rhs = Scalar::powi(&r.p, (n * (n - 1) / 2) as i64) * f_poly(l, &xi, &r)? / den;
        report.record_exact(&lhs, &rhs);
    }
    Ok(report)
}

/// Identity 2_L: `Σ_{|S|=m} ∏_{i∈S, j∉S} U(ξ_i,ξ_j) f_L(ξ̂_S) = q^{m(N−m)} [N−L choose m]_τ f_L(ξ)`.
pub fn verify_identity_2l(n: usize, l: usize, m: usize, params: &Params, trials: usize, seed: u64) -> Result<CheckReport> {
    verify_identity_2l_with(n, l, m, params, trials, seed, Perturbation::None)
}

pub fn verify_identity_2l_with(
    n: usize,
    l: usize,
    m: usize,
    params: &Params,
    trials: usize,
    seed: u64,
    perturb: Perturbation,
) -> Result<CheckReport> {
    if l == 0 || m + l > n {
        return Err(Error::Domain(format!("identity 2_L needs 0 ≤ m ≤ N − L, got N = {n}, L = {l}, m = {m}")));
    }
    if n > MAX_F_POLY_N {
        return Err(Error::Resource(format!("identity 2_L with N = {n} > {MAX_F_POLY_N}")));
    }
    let tau = params.tau()?;
    let r = params.rates::<BigRational>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("identity 2_L N={n} L={l} m={m}"));
    for _ in 0..trials {
        let xi = sample_generic_point(n, &mut rng)?;
        let mut lhs = BigRational::zero();
        for (idx, s) in IndexSet::all_of_size(n, m).enumerate() {
            let sc = s.complement();
            let mut term = BigRational::one();
            for &i in s.elements() {
                for &j in sc.elements() {
                    term *= u_raw(&xi[i - 1], &xi[j - 1], &r);
                }
            }
            let rest: Vec<BigRational> = sc.elements().iter().map(|&j| xi[j - 1].clone()).collect();
            term *= f_poly(l, &rest, &r)?;
            if idx == 0 && perturb == Perturbation::DoubleFirstSummand {
                term *= BigRational::from_integer(2.into());
            }
            lhs += term;
        }
        let rhs = Scalar::powi(&r.q, (m * (n - m)) as i64) * tau_binom((n - l) as i64, m as i64, &tau)? * f_poly(l, &xi, &r)?;
        report.record_exact(&lhs, &rhs);
    }
    Ok(report)
}

/// The Lemma: symmetrizing `(1−ξ_ℓ)(∏_{k∈S}U(ξ_k,ξ_ℓ) − τ^{−m}∏_{k∈S}ξ_kU(ξ_ℓ,ξ_k))`
/// over all `(m+1)!` orderings gives zero.
pub fn verify_lemma(m: usize, params: &Params, trials: usize, seed: u64) -> Result<CheckReport> {
    verify_lemma_with(m, params, trials, seed, Perturbation::None)
}

pub fn verify_lemma_with(m: usize, params: &Params, trials: usize, seed: u64, perturb: Perturbation) -> Result<CheckReport> {
    if m == 0 || m > 6 {
        return Err(Error::Domain(format!("lemma check needs 1 ≤ m ≤ 6, got {m}")));
    }
    let tau = params.tau()?;
    let r = params.rates::<BigRational>();
    let factor = if perturb == Perturbation::DropTauFactor { BigRational::one() } else { Scalar::powi(&tau, -(m as i64)) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("lemma m={m}"));
    for _ in 0..trials {
        let xi = sample_generic_point(m + 1, &mut rng)?;
        let mut total = BigRational::zero();
        for sigma in Permutation::all(m + 1)? {
            let ell = &xi[sigma.at(0)];
            let mut a = BigRational::one();
            let mut b = BigRational::one();
            for i in 1..=m {
                let k = &xi[sigma.at(i)];
                a *= u_raw(k, ell, &r);
                b *= k * u_raw(ell, k, &r);
            }
            total += (BigRational::one() - ell) * (a - &factor * b);
        }
        report.record_exact(&total, &BigRational::zero());
    }
    Ok(report)
}

fn inversion_sides<S: Scalar>(l: usize, xi: &[S], params: &Params) -> Result<(S, S)> {
    let r = params.rates::<S>();
    let rs = params.swapped().rates::<S>();
    let inv: Vec<S> = xi.iter().map(|x| S::one() / x.clone()).collect();
    let lhs = f_poly(l, &inv, &rs)?;
    let tau = r.tau()?.clone();
    let sign = if l % 2 == 0 { S::one() } else { -S::one() };
    let prod = xi.iter().fold(S::one(), |a, x| a * x.clone());
    let rhs = sign * tau.powi((l * (l - 1) / 2) as i64) * prod.powi(-(l as i64)) * f_poly(l, xi, &r)?;
    Ok((lhs, rhs))
}

/// Probes the (unproved) inversion symmetry
/// `f_L(ξ^{−1})|_{p↔q} = (−1)^L τ^{L(L−1)/2} ∏ξ_i^{−L} f_L(ξ)` in exact arithmetic.
/// A failure here is a finding about the conjecture, not a library fault.
pub fn probe_inversion_conjecture(n: usize, l: usize, params: &Params, trials: usize, seed: u64) -> Result<CheckReport> {
    params.require_both_positive()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("CONJECTURE inversion N={n} L={l} (exact)"));
    for _ in 0..trials {
        let xi = sample_generic_point(n, &mut rng)?;
        let (lhs, rhs) = inversion_sides(l, &xi, params)?;
        report.record_exact(&lhs, &rhs);
    }
    Ok(report)
}

/// Floating-point variant of the inversion probe at random complex points
/// in the annulus `0.5 ≤ |ξ| ≤ 1.5`; residuals are relative to `|rhs|`.
pub fn probe_inversion_conjecture_numeric(n: usize, l: usize, params: &Params, trials: usize, seed: u64, tol: f64) -> Result<CheckReport> {
    use rand::Rng;
    params.require_both_positive()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("CONJECTURE inversion N={n} L={l} (numeric)"));
    for _ in 0..trials {
        let xi: Vec<Complex64> = (0..n)
            .map(|_| Complex64::from_polar(rng.random_range(0.5..1.5), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let (lhs, rhs) = inversion_sides(l, &xi, params)?;
        report.record_numeric((lhs - rhs).norm() / rhs.norm().max(1.0), tol);
    }
    Ok(report)
}

fn appendix_b_f(n: i64, l: i64, m: i64, t: i64, tau: &BigRational) -> Result<BigRational> {
    let mut sum = BigRational::zero();
    for k in t..=n {
        let sign = if k % 2 == 0 { BigRational::one() } else { -BigRational::one() };
        sum += sign
            * Scalar::powi(tau, k * (k + 1) / 2 - n * k)
            * tau_binom(k - l, n - m - l + 1, tau)?
            * tau_binom(n - t, k - t, tau)?;
    }
    Ok(sum)
}

/// Setting one variable to 1 removes it: `f_L(ξ)|_{ξ_k=1} = f_L(ξ̂_k)`,
/// checked for every `k` at random rational points.
pub fn verify_degeneration(n: usize, l: usize, params: &Params, trials: usize, seed: u64) -> Result<CheckReport> {
    if n < 2 || n > MAX_F_POLY_N {
        return Err(Error::Domain(format!("N = {n} outside 2..={MAX_F_POLY_N}")));
    }
    let r = params.rates::<BigRational>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CheckReport::new(format!("degeneration at 1, N={n} L={l}"));
    for _ in 0..trials {
        let xi = sample_generic_point(n, &mut rng)?;
        for k in 0..n {
            let mut with_one = xi.clone();
            with_one[k] = <BigRational as Scalar>::one();
            let mut rest = xi.clone();
            rest.remove(k);
            report.record_exact(&f_poly(l, &with_one, &r)?, &f_poly(l, &rest, &r)?);
        }
    }
    Ok(report)
}

/// The q-binomial sum `F(m)` and its closed form, the recursion in `m`, and
/// the base case `F(1)`. Legal range: `m ≥ 1`, `L ≤ |T| ≤ N`, `m + L − 1 ≤ N`.
pub fn verify_appendix_b_sum(n: usize, l: usize, m: usize, t_size: usize, params: &Params) -> Result<CheckReport> {
    if m == 0 || l == 0 || t_size < l || t_size > n || m + l > n + 1 {
        return Err(Error::Domain(format!("outside the legal range: N={n} L={l} m={m} |T|={t_size}")));
    }
    let tau = params.tau()?;
    let (n, l, m, t) = (n as i64, l as i64, m as i64, t_size as i64);
    let mut report = CheckReport::new(format!("q-binomial sum N={n} L={l} m={m} |T|={t}"));
    let f_m = appendix_b_f(n, l, m, t, &tau)?;
    let sign = if n % 2 == 0 { BigRational::one() } else { -BigRational::one() };
    let closed = sign.clone() * Scalar::powi(&tau, -n * (n + 1) / 2 + m * n - (m - 1) * t) * tau_binom(t - l, m - 1, &tau)?;
    report.record_exact(&f_m, &closed);
    if m == 1 {
        report.record_exact(&f_m, &(sign * Scalar::powi(&tau, -n * (n - 1) / 2)));
    } else {
        let prev = appendix_b_f(n, l, m - 1, t, &tau)?;
        let one = BigRational::one();
        let lhs = f_m * (&one - Scalar::powi(&tau, m - 1));
        let rhs = -(Scalar::powi(&tau, n - l - m + 2) * (&one - Scalar::powi(&tau, l + m - t - 2)) * prev);
        report.record_exact(&lhs, &rhs);
    }
    Ok(report)
}
