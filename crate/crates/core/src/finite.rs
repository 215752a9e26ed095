//! Finite-N probabilities: the transition probability and the L-block
//! probability through small-contour (`thm1`) and large-contour
//! (`thm2`) subset expansions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use num_rational::BigRational;
use rayon::prelude::*;

use crate::algebra::{tau_binom, ComplexScalar, DdComplex, IndexSet, Permutation, Scalar};
use crate::contour::{default_offset, pairwise_sum, tensor_sum, CircleContour, ContourPlan, NodeSet, Precision};
use crate::error::{Error, Result};
use crate::weights::{amplitude_raw, u_inv_raw, u_raw, FPolyWork, Params, Rates};

/// Denominators smaller than this on a quadrature grid are treated as poles.
pub const CLEARANCE: f64 = 1e-6;
pub const MAX_TRANSITION_N: usize = 4;
pub const MAX_FINITE_N: usize = 5;

/// Initial or final particle positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParticleConfig {
    Finite(Vec<i64>),
    /// `y_i = i` for every `i ≥ 1`.
    Step,
}

impl ParticleConfig {
    pub fn finite(positions: Vec<i64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Parameter("a configuration needs at least one particle".into()));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(format!("positions {positions:?} are not strictly increasing")));
        }
        Ok(ParticleConfig::Finite(positions))
    }

    pub fn positions(&self) -> Option<&[i64]> {
        match self {
            ParticleConfig::Finite(v) => Some(v),
            ParticleConfig::Step => None,
        }
    }

    pub fn is_step(&self) -> bool {
        matches!(self, ParticleConfig::Step)
    }

    /// Number of particles; `None` for step initial condition.
    pub fn len(&self) -> Option<usize> {
        self.positions().map(<[i64]>::len)
    }

    /// Position of the `i`-th particle (1-based).
    pub fn position(&self, i: usize) -> Option<i64> {
        match self {
            ParticleConfig::Finite(v) => v.get(i.checked_sub(1)?).copied(),
            ParticleConfig::Step => (i >= 1).then_some(i as i64),
        }
    }

    fn require_finite(&self) -> Result<&[i64]> {
        self.positions().ok_or_else(|| Error::Parameter("a finite configuration is required".into()))
    }
}

impl FromStr for ParticleConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("step") {
            return Ok(ParticleConfig::Step);
        }
        let v: std::result::Result<Vec<i64>, _> = s.split(',').map(|t| t.trim().parse::<i64>()).collect();
        ParticleConfig::finite(v.map_err(|_| Error::Parameter(format!("cannot parse configuration {s:?}")))?)
    }
}

impl fmt::Display for ParticleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParticleConfig::Step => write!(f, "step"),
            ParticleConfig::Finite(v) => {
                let parts: Vec<String> = v.iter().map(i64::to_string).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

/// Event `x_m(t) = x, …, x_{m+L−1}(t) = x+L−1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockQuery {
    pub x: i64,
    pub m: usize,
    pub l: usize,
    pub t: f64,
}

impl BlockQuery {
    pub fn new(x: i64, m: usize, l: usize, t: f64) -> Result<Self> {
        if m == 0 || l == 0 {
            return Err(Error::Parameter(format!("m = {m} and L = {l} must both be at least 1")));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Parameter(format!("time {t} must be finite and non-negative")));
        }
        Ok(BlockQuery { x, m, l, t })
    }

    /// Errors when the block does not fit among `n` particles.
    pub fn check_against(&self, n: usize) -> Result<()> {
        if self.m + self.l - 1 > n {
            return Err(Error::Parameter(format!("m + L − 1 = {} exceeds N = {n}", self.m + self.l - 1)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Transition,
    Thm1,
    Thm2,
    M2Direct,
    Thm3,
    Remark,
    Series,
    Mc,
    Uniformization,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Transition,
        Method::Thm1,
        Method::Thm2,
        Method::M2Direct,
        Method::Thm3,
        Method::Remark,
        Method::Series,
        Method::Mc,
        Method::Uniformization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Transition => "transition",
            Method::Thm1 => "thm1",
            Method::Thm2 => "thm2",
            Method::M2Direct => "m2",
            Method::Thm3 => "thm3",
            Method::Remark => "remark",
            Method::Series => "series",
            Method::Mc => "mc",
            Method::Uniformization => "uniformization",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "oracle" || s == "exact" {
            return Ok(Method::Uniformization);
        }
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbabilityEstimate {
    pub value: f64,
    pub abs_error: f64,
    pub method: Method,
}

impl ProbabilityEstimate {
    /// `|a − b| ≤ tol + a.abs_error + b.abs_error`.
    pub fn agrees_with(&self, other: &ProbabilityEstimate, tol: f64) -> bool {
        (self.value - other.value).abs() <= tol + self.abs_error + other.abs_error
    }
}

/// Precomputed per-grid quantities in the scalar type `C`.
struct GridTables<C> {
    k: usize,
    l: usize,
    m: usize,
    nodes: Vec<Vec<C>>,
    inv_one_minus: Vec<Vec<C>>,
    /// `1/U(ξ_d, ξ_e)` for `d < e`, row-major in the node indices.
    uinv: Vec<Vec<C>>,
    /// `U(ξ_d, ξ_e)` for `d ≠ e`, indexed by `d·k + e`.
    u: Vec<Vec<C>>,
    /// `g[j][d][a] = w_a ξ_a^{e_{j,d}} e^{ε(ξ_a)t_j}`.
    g: Vec<Vec<Vec<C>>>,
    min_denominator: f64,
}

/// One integrand `∏_d ξ_d^{exps[d]} e^{ε(ξ_d)t}` to contract with the grid.
#[derive(Clone, Debug, PartialEq)]
struct GridJob {
    exps: Vec<i64>,
    t: f64,
}

fn pair_index(d: usize, e: usize, k: usize) -> usize {
    d * k + e
}

fn build_tables<C: ComplexScalar>(k: usize, l: usize, circle: &CircleContour, jobs: &[GridJob], r: &Rates<C>) -> GridTables<C> {
    let m = circle.nodes;
    let sets: Vec<NodeSet<C>> = (0..k).map(|d| circle.node_set::<C>(default_offset(d))).collect();
    let nodes: Vec<Vec<C>> = sets.iter().map(|s| s.nodes.clone()).collect();
    let mut min_den = f64::INFINITY;
    let inv_one_minus = nodes
        .iter()
        .map(|v| {
            v.iter()
                .map(|&z| {
                    let d = C::one() - z;
                    min_den = min_den.min(d.magnitude());
                    C::one() / d
                })
                .collect()
        })
        .collect();
    let mut uinv = vec![Vec::new(); k * k];
    let mut u = vec![Vec::new(); k * k];
    for d in 0..k {
        for e in 0..k {
            if d == e {
                continue;
            }
            let mut tab_inv = Vec::with_capacity(if d < e { m * m } else { 0 });
            let mut tab_u = Vec::with_capacity(if l >= 2 { m * m } else { 0 });
            for a in &nodes[d] {
                for b in &nodes[e] {
                    let den = r.p + r.q * *a * *b - *a;
                    min_den = min_den.min(den.magnitude());
                    if d < e {
                        tab_inv.push(u_inv_raw(a, b, r));
                    }
                    if l >= 2 {
                        tab_u.push(u_raw(a, b, r));
                    }
                }
            }
            uinv[pair_index(d, e, k)] = tab_inv;
            u[pair_index(d, e, k)] = tab_u;
        }
    }
    let g = jobs
        .iter()
        .map(|job| {
            let tc = C::from_c64(Complex64::new(job.t, 0.0));
            (0..k)
                .map(|d| {
                    sets[d]
                        .nodes
                        .iter()
                        .zip(&sets[d].weights)
                        .map(|(&z, &w)| {
                            let eps = r.p / z + r.q * z - C::one();
                            w * z.powi(job.exps[d]) * (eps * tc).exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    GridTables { k, l, m, nodes, inv_one_minus, uinv, u, g, min_denominator: min_den }
}

/// `Σ_a R(ξ_a) ∏_d g[j][d][a_d]` for every job `j`, where
/// `R = ∏_{i<j} 1/U(ξ_i,ξ_j) ∏ 1/(1−ξ_i) f_L(ξ)`. Returns the sums and
/// `max |R|` over the grid.
fn grid_pass<C: ComplexScalar>(tabs: &GridTables<C>, r: &Rates<C>) -> (Vec<C>, f64) {
    let (k, l, m) = (tabs.k, tabs.l, tabs.m);
    let jobs = tabs.g.len();
    let outer_total = m.pow(k as u32 - 1);
    let chunk = if k >= 2 { outer_total / m } else { 1 };
    let tasks = outer_total / chunk;
    let partial: Vec<(Vec<C>, f64)> = (0..tasks)
        .into_par_iter()
        .map(|task| {
            let mut idx = vec![0usize; k];
            let mut acc = vec![C::zero(); jobs];
            let mut inner = vec![C::zero(); jobs];
            let mut xi = vec![C::zero(); k];
            let mut work = FPolyWork::new(k, r);
            let mut max_r: f64 = 0.0;
            let last = k - 1;
            for o in task * chunk..(task + 1) * chunk {
                let mut rem = o;
                for d in (0..last).rev() {
                    idx[d] = rem % m;
                    rem /= m;
                }
                let mut base = C::one();
                let mut xprod = C::one();
                for d in 0..last {
                    base *= tabs.inv_one_minus[d][idx[d]];
                    xi[d] = tabs.nodes[d][idx[d]];
                    xprod *= xi[d];
                    for e in d + 1..last {
                        base *= tabs.uinv[pair_index(d, e, k)][idx[d] * m + idx[e]];
                    }
                }
                if l >= 2 {
                    for d in 0..last {
                        for e in 0..last {
                            if d != e {
                                work.umat[d * k + e] = tabs.u[pair_index(d, e, k)][idx[d] * m + idx[e]];
                            }
                        }
                    }
                }
                inner.iter_mut().for_each(|v| *v = C::zero());
                for a in 0..m {
                    idx[last] = a;
                    xi[last] = tabs.nodes[last][a];
                    let mut v = base * tabs.inv_one_minus[last][a];
                    for d in 0..last {
                        v *= tabs.uinv[pair_index(d, last, k)][idx[d] * m + a];
                    }
                    let f = if l == 1 {
                        C::one() - xprod * xi[last]
                    } else {
                        for d in 0..last {
                            work.umat[d * k + last] = tabs.u[pair_index(d, last, k)][idx[d] * m + a];
                            work.umat[last * k + d] = tabs.u[pair_index(last, d, k)][a * m + idx[d]];
                        }
                        work.eval_with_u(l, &xi)
                    };
                    v *= f;
                    max_r = max_r.max(v.magnitude());
                    for j in 0..jobs {
                        inner[j] += v * tabs.g[j][last][a];
                    }
                }
                for j in 0..jobs {
                    let mut pre = inner[j];
                    for d in 0..last {
                        pre *= tabs.g[j][d][idx[d]];
                    }
                    acc[j] += pre;
                }
            }
            (acc, max_r)
        })
        .collect();
    let max_r = partial.iter().map(|p| p.1).fold(0.0, f64::max);
    let sums = (0..jobs)
        .map(|j| {
            let col: Vec<C> = partial.iter().map(|p| p.0[j]).collect();
            pairwise_sum(&col)
        })
        .collect();
    (sums, max_r)
}

/// An integral with its error bound.
#[derive(Clone, Copy, Debug)]
struct Integral {
    value: Complex64,
    abs_error: f64,
}

fn roundoff_bound<C: ComplexScalar>(tabs: &GridTables<C>, max_r: f64, j: usize, unit: f64) -> f64 {
    let scale: f64 = tabs.g[j].iter().map(|v| v.iter().map(|c| c.magnitude()).sum::<f64>()).product();
    unit * 8.0 * (tabs.k as f64 + tabs.l as f64 + 2.0) * max_r * scale
}

/// Integrals of `I_L` over `circle^k` for every job, in double precision
/// or double-double as the plan and the rounding bound demand.
fn grid_integrals(k: usize, l: usize, circle: &CircleContour, jobs: &[GridJob], params: &Params, plan: &ContourPlan) -> Result<Vec<Integral>> {
    if k == 0 || jobs.is_empty() {
        return Ok(vec![Integral { value: Complex64::new(0.0, 0.0), abs_error: 0.0 }; jobs.len()]);
    }
    let points = (circle.nodes as u64).checked_pow(k as u32).unwrap_or(u64::MAX);
    if points > plan.budget {
        return Err(Error::Resource(format!("{}^{k} grid points exceed the evaluation budget of {}", circle.nodes, plan.budget)));
    }
    let run_dd = |tabs_f64: Option<&GridTables<Complex64>>| -> Result<Vec<Integral>> {
        let r = params.rates::<DdComplex>();
        let tabs = build_tables(k, l, circle, jobs, &r);
        if let Some(t) = tabs_f64 {
            debug_assert!((t.min_denominator - tabs.min_denominator).abs() < 1e-6);
        }
        let (sums, max_r) = grid_pass(&tabs, &r);
        Ok(sums
            .iter()
            .enumerate()
            .map(|(j, s)| Integral { value: s.to_c64(), abs_error: roundoff_bound(&tabs, max_r, j, DdComplex::UNIT_ROUNDOFF) })
            .collect())
    };
    let r = params.rates::<Complex64>();
    let tabs = build_tables(k, l, circle, jobs, &r);
    if tabs.min_denominator < CLEARANCE {
        return Err(Error::Contour(format!(
            "denominator {:.3e} on the radius-{} grid is below the clearance {CLEARANCE:e}",
            tabs.min_denominator, circle.radius
        )));
    }
    if plan.precision == Precision::DoubleDouble {
        return run_dd(Some(&tabs));
    }
    let (sums, max_r) = grid_pass(&tabs, &r);
    let out: Vec<Integral> = sums
        .iter()
        .enumerate()
        .map(|(j, s)| Integral { value: *s, abs_error: roundoff_bound(&tabs, max_r, j, Complex64::UNIT_ROUNDOFF) })
        .collect();
    if plan.precision == Precision::Auto && out.iter().any(|i| i.abs_error > plan.tolerance / 100.0) {
        return run_dd(Some(&tabs));
    }
    Ok(out)
}

/// The subset integrals `∫ I_L(x, Y_S, ξ)` a batch of queries needs,
/// computed with one grid pass per subset size.
struct SubsetIntegrals {
    values: HashMap<(u64, i64, u64, usize), Integral>,
}

impl SubsetIntegrals {
    fn compute(y: &[i64], wanted: &[(IndexSet, i64, f64, usize)], circle: &CircleContour, params: &Params, plan: &ContourPlan) -> Result<Self> {
        let mut groups: HashMap<(usize, usize), Vec<(u64, i64, u64)>> = HashMap::new();
        for (s, x, t, l) in wanted {
            let key = (s.mask(), *x, t.to_bits());
            let g = groups.entry((s.len(), *l)).or_default();
            if !g.contains(&key) {
                g.push(key);
            }
        }
        let mut keys: Vec<_> = groups.keys().copied().collect();
        keys.sort_unstable();
        let n = y.len();
        let mut values = HashMap::new();
        for (k, l) in keys {
            let entries = &groups[&(k, l)];
            let jobs: Vec<GridJob> = entries
                .iter()
                .map(|&(mask, x, tb)| {
                    let set = IndexSet::from_mask(n, mask);
                    GridJob { exps: set.elements().iter().map(|&i| x - y[i - 1] - 1).collect(), t: f64::from_bits(tb) }
                })
                .collect();
            let ints = grid_integrals(k, l, circle, &jobs, params, plan)?;
            for (&(mask, x, tb), int) in entries.iter().zip(ints) {
                values.insert((mask, x, tb, l), int);
            }
        }
        Ok(SubsetIntegrals { values })
    }

    fn get(&self, s: &IndexSet, x: i64, t: f64, l: usize) -> Integral {
        self.values[&(s.mask(), x, t.to_bits(), l)]
    }
}

/// A linear combination `Σ c_S ∫I_L(x, Y_S)` describing one probability.
struct Expansion {
    terms: Vec<(BigRational, IndexSet)>,
}

fn rat_pow(base: &BigRational, e: i64) -> BigRational {
    Scalar::powi(base, e)
}

fn sign(e: i64) -> BigRational {
    if e.rem_euclid(2) == 0 {
        <BigRational as Scalar>::one()
    } else {
        -<BigRational as Scalar>::one()
    }
}

fn thm1_expansion(n: usize, q: &BlockQuery, params: &Params) -> Result<Expansion> {
    let (p, qq) = (params.p().clone(), params.q().clone());
    let tau = params.tau()?;
    let (ni, m, l) = (n as i64, q.m as i64, q.l as i64);
    let pref = rat_pow(&p, (ni - m + 1) * (ni - m) / 2) * rat_pow(&qq, (m - 1) * (2 * ni - m) / 2);
    let mut terms = Vec::new();
    for c in 0..q.m.min(n + 1) {
        for sc in IndexSet::all_of_size(n, c) {
            let s = sc.complement();
            if s.len() < q.l {
                continue;
            }
            let (cs, sig) = (c as i64, sc.sum());
            let coef = sign(m - 1 - cs)
                * tau_binom(s.len() as i64 - l, m - 1 - cs, &tau)?
                * rat_pow(&qq, sig - ni * cs)
                / rat_pow(&p, sig - cs * (cs + 1) / 2);
            if coef != <BigRational as Scalar>::zero() {
                terms.push((coef * &pref, s));
            }
        }
    }
    Ok(Expansion { terms })
}

fn thm2_expansion(n: usize, q: &BlockQuery, params: &Params) -> Result<Expansion> {
    let (p, qq) = (params.p().clone(), params.q().clone());
    let tau = params.tau()?;
    let (m, l) = (q.m as i64, q.l as i64);
    let pref = sign(m + 1) * rat_pow(&p, m * (m - 1) / 2);
    let mut terms = Vec::new();
    for size in (q.m + q.l - 1)..=n {
        let k = size as i64;
        for s in IndexSet::all_of_size(n, size) {
            let sig = s.sum();
            let coef = rat_pow(&qq, (m - 1) * (2 * k - m) / 2)
                * tau_binom(k - l, m - 1, &tau)?
                * rat_pow(&p, sig - m * k)
                / rat_pow(&qq, sig - k * (k + 1) / 2);
            if coef != <BigRational as Scalar>::zero() {
                terms.push((coef * &pref, s));
            }
        }
    }
    Ok(Expansion { terms })
}

fn m2_expansion(n: usize, q: &BlockQuery, params: &Params) -> Result<Expansion> {
    if q.m != 2 {
        return Err(Error::Parameter(format!("the two-term form needs m = 2 (got {})", q.m)));
    }
    let (p, qq) = (params.p().clone(), params.q().clone());
    let tau = params.tau()?;
    let (ni, l) = (n as i64, q.l as i64);
    let base = rat_pow(&p, (ni - 1) * (ni - 2) / 2);
    let mut terms = vec![(-rat_pow(&qq, ni - 1) * tau_binom(ni - l, 1, &tau)? * &base, IndexSet::full(n))];
    let ratio = &qq / &p;
    for k in 1..=n {
        let s = IndexSet::full(n).elements().iter().copied().filter(|&i| i != k).collect();
        let s = IndexSet::new(n, s)?;
        if s.len() >= q.l {
            terms.push((rat_pow(&ratio, k as i64 - 1) * &base, s));
        }
    }
    Ok(Expansion { terms })
}

fn require_finite_params(method: Method, params: &Params) -> Result<()> {
    match method {
        Method::Thm1 | Method::M2Direct if params.p_f64() == 0.0 => {
            Err(Error::Parameter(format!("{method} needs p > 0 (small contours do not exist for p = 0)")))
        }
        Method::Thm2 if params.q_f64() == 0.0 => Err(Error::Parameter(format!("{method} needs q > 0"))),
        _ => {
            params.tau()?;
            Ok(())
        }
    }
}

/// Block probabilities for many queries on one finite initial condition
/// with one of `Thm1`, `Thm2`, `M2Direct`. Subset integrals shared between
/// queries (different `m`, same `x`, `t`, `L`) are evaluated once.
pub fn block_probs(y: &ParticleConfig, queries: &[BlockQuery], method: Method, params: &Params, plan: &ContourPlan) -> Result<Vec<ProbabilityEstimate>> {
    let ys = y.require_finite()?;
    let n = ys.len();
    if n > MAX_FINITE_N {
        return Err(Error::Resource(format!("N = {n} exceeds the numeric cap of {MAX_FINITE_N}")));
    }
    require_finite_params(method, params)?;
    plan.validate()?;
    let circle = match method {
        Method::Thm1 | Method::M2Direct => &plan.small,
        Method::Thm2 => &plan.large,
        other => return Err(Error::Parameter(format!("{other} is not a finite-N subset expansion"))),
    };
    let mut expansions = Vec::with_capacity(queries.len());
    let mut wanted = Vec::new();
    for q in queries {
        q.check_against(n)?;
        let e = match method {
            Method::Thm1 => thm1_expansion(n, q, params)?,
            Method::Thm2 => thm2_expansion(n, q, params)?,
            _ => m2_expansion(n, q, params)?,
        };
        for (_, s) in &e.terms {
            wanted.push((s.clone(), q.x, q.t, q.l));
        }
        expansions.push(e);
    }
    let ints = SubsetIntegrals::compute(ys, &wanted, circle, params, plan)?;
    Ok(queries
        .iter()
        .zip(&expansions)
        .map(|(q, e)| {
            let mut sum = Complex64::new(0.0, 0.0);
            let mut err = 0.0;
            for (c, s) in &e.terms {
                let cf = Complex64::from_rational(c).re;
                let int = ints.get(s, q.x, q.t, q.l);
                sum += int.value * cf;
                err += cf.abs() * int.abs_error;
            }
            ProbabilityEstimate { value: sum.re, abs_error: err + sum.im.abs(), method }
        })
        .collect())
}

fn single(y: &ParticleConfig, q: &BlockQuery, method: Method, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    Ok(block_probs(y, std::slice::from_ref(q), method, params, plan)?[0])
}

/// Small-contour expansion (sum over `S^c` with `|S^c| < m`).
pub fn block_prob_thm1(y: &ParticleConfig, q: &BlockQuery, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    single(y, q, Method::Thm1, params, plan)
}

/// Large-contour expansion (sum over `S` with `|S| ≥ m + L − 1`).
pub fn block_prob_thm2(y: &ParticleConfig, q: &BlockQuery, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    single(y, q, Method::Thm2, params, plan)
}

/// Two-term form for `m = 2`, coded independently of the general sum.
pub fn block_prob_m2_direct(y: &ParticleConfig, q: &BlockQuery, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    single(y, q, Method::M2Direct, params, plan)
}

fn transition_pass<C: ComplexScalar>(ys: &[i64], xs: &[i64], t: f64, params: &Params, plan: &ContourPlan) -> Result<(C, f64)> {
    let n = ys.len();
    let r = params.rates::<C>();
    let perms = Permutation::all(n)?;
    let positions: Vec<Vec<usize>> = perms.iter().map(|s| s.inverse().images().to_vec()).collect();
    let images: Vec<Vec<usize>> = perms.iter().map(|s| s.images().to_vec()).collect();
    let sets: Vec<NodeSet<C>> = (0..n).map(|d| plan.small.node_set::<C>(default_offset(d))).collect();
    let tc = C::from_c64(Complex64::new(t, 0.0));
    let f = |z: &[C]| {
        let mut total = C::zero();
        for (pos, img) in positions.iter().zip(&images) {
            let mut term = amplitude_raw(pos, z, &r);
            for i in 0..n {
                let s = img[i];
                term *= z[s].powi(xs[i] - ys[s] - 1);
            }
            total += term;
        }
        let mut e = C::zero();
        for zi in z {
            e += r.p / *zi + r.q * *zi - C::one();
        }
        total * (e * tc).exp()
    };
    let budget = plan.budget / perms.len() as u64;
    let q = tensor_sum(f, &sets, budget)?;
    Ok((q.value, q.abs_sum))
}

/// `P_Y(X; t)` as a sum over permutations of integrals over `C_r^N`.
pub fn transition_prob(y: &ParticleConfig, x: &ParticleConfig, t: f64, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    let (ys, xs) = (y.require_finite()?, x.require_finite()?);
    if ys.len() != xs.len() {
        return Err(Error::Parameter(format!("|Y| = {} differs from |X| = {}", ys.len(), xs.len())));
    }
    if ys.len() > MAX_TRANSITION_N {
        return Err(Error::Resource(format!("N = {} exceeds the transition-probability cap of {MAX_TRANSITION_N}", ys.len())));
    }
    if params.p_f64() == 0.0 {
        return Err(Error::Parameter("the transition probability formula needs p > 0".into()));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("time {t} must be finite and non-negative")));
    }
    plan.validate()?;
    let r = params.rates::<Complex64>();
    let n = ys.len();
    let mut min_den = f64::INFINITY;
    for d in 0..n {
        for e in 0..n {
            if d != e {
                for j in 0..plan.small.nodes {
                    for k in 0..plan.small.nodes {
                        let a = plan.small.node(j, default_offset(d));
                        let b = plan.small.node(k, default_offset(e));
                        min_den = min_den.min((r.p + r.q * a * b - a).norm());
                    }
                }
            }
        }
    }
    if min_den < CLEARANCE {
        return Err(Error::Contour(format!("amplitude denominator {min_den:.3e} below clearance on C_r")));
    }
    let (v, abs) = transition_pass::<Complex64>(ys, xs, t, params, plan)?;
    let unit = 8.0 * (n * n + 2) as f64;
    let bound = Complex64::UNIT_ROUNDOFF * unit * abs;
    let use_dd = match plan.precision {
        Precision::DoubleDouble => true,
        Precision::Double => false,
        Precision::Auto => bound > plan.tolerance / 100.0,
    };
    let (v, bound) = if use_dd {
        let (v, abs) = transition_pass::<DdComplex>(ys, xs, t, params, plan)?;
        (v.to_c64(), DdComplex::UNIT_ROUNDOFF * unit * abs)
    } else {
        (v, bound)
    };
    Ok(ProbabilityEstimate { value: v.re, abs_error: v.im.abs() + bound, method: Method::Transition })
}

/// Indicator of the block event for a configuration (used at `t = 0` and
/// by the oracles).
pub fn block_event(positions: &[i64], q: &BlockQuery) -> bool {
    let (m, l) = (q.m, q.l);
    if m + l - 1 > positions.len() {
        return false;
    }
    (0..l).all(|i| positions[m - 1 + i] == q.x + i as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Params {
        Params::from_ratio(7, 10).unwrap()
    }

    fn plan(p: &Params) -> ContourPlan {
        ContourPlan::for_params(p).unwrap()
    }

    fn cfg(v: &[i64]) -> ParticleConfig {
        ParticleConfig::finite(v.to_vec()).unwrap()
    }

    /// `e^{−t} Σ_{j−k=d} (pt)^j (qt)^k / (j! k!)`.
    fn bessel_series(d: i64, t: f64, p: f64) -> f64 {
        let q = 1.0 - p;
        let mut sum = 0.0;
        for k in 0..200i64 {
            let j = k + d;
            if j < 0 {
                continue;
            }
            let lg = (j as f64) * (p * t).ln() + (k as f64) * (q * t).ln() - ln_gamma(j + 1) - ln_gamma(k + 1);
            sum += lg.exp();
        }
        sum * (-t).exp()
    }

    fn ln_gamma(n: i64) -> f64 {
        (1..n).map(|i| (i as f64).ln()).sum()
    }

    #[test]
    fn configs_parse_and_validate() {
        assert_eq!("0,2,5".parse::<ParticleConfig>().unwrap(), cfg(&[0, 2, 5]));
        assert!("step".parse::<ParticleConfig>().unwrap().is_step());
        assert!("2,1".parse::<ParticleConfig>().is_err());
        assert_eq!(ParticleConfig::Step.position(4), Some(4));
        assert_eq!(cfg(&[0, 2, 5]).to_string(), "0,2,5");
        assert!(BlockQuery::new(0, 0, 1, 1.0).is_err());
        assert!(BlockQuery::new(0, 1, 1, -1.0).is_err());
        assert_eq!("oracle".parse::<Method>().unwrap(), Method::Uniformization);
    }

    #[test]
    fn transition_single_particle_matches_series() {
        let p = params();
        let pl = plan(&p);
        for d in [-3i64, 0, 2] {
            let v = transition_prob(&cfg(&[1]), &cfg(&[1 + d]), 0.5, &p, &pl).unwrap();
            assert!((v.value - bessel_series(d, 0.5, 0.7)).abs() < 1e-10, "d={d}");
        }
    }

    #[test]
    fn transition_at_time_zero_is_identity() {
        let p = params();
        let pl = plan(&p);
        let y = cfg(&[0, 2]);
        assert!((transition_prob(&y, &y, 0.0, &p, &pl).unwrap().value - 1.0).abs() < 1e-10);
        assert!(transition_prob(&y, &cfg(&[0, 3]), 0.0, &p, &pl).unwrap().value.abs() < 1e-10);
    }

    #[test]
    fn thm1_equals_thm2_on_spec_instances() {
        let p = Params::from_ratio(3, 5).unwrap();
        let pl = plan(&p);
        let y = cfg(&[0, 2, 5]);
        for (l, m) in [(1, 2), (2, 1)] {
            let q = BlockQuery::new(3, m, l, 1.0).unwrap();
            let a = block_prob_thm1(&y, &q, &p, &pl).unwrap();
            let b = block_prob_thm2(&y, &q, &p, &pl).unwrap();
            assert!((a.value - b.value).abs() < 1e-8, "L={l} m={m}: {} vs {}", a.value, b.value);
        }
    }

    #[test]
    fn m2_direct_matches_thm1() {
        let p = params();
        let pl = plan(&p);
        let y = cfg(&[0, 2, 5]);
        for x in [1, 2, 3] {
            let q = BlockQuery::new(x, 2, 1, 0.8).unwrap();
            let a = block_prob_thm1(&y, &q, &p, &pl).unwrap();
            let b = block_prob_m2_direct(&y, &q, &p, &pl).unwrap();
            assert!((a.value - b.value).abs() < 1e-9);
        }
    }

    #[test]
    fn time_zero_gives_indicators() {
        let p = params();
        let pl = plan(&p);
        let y = cfg(&[0, 1, 5]);
        for x in -1..=6 {
            for (m, l) in [(1, 1), (1, 2), (2, 1), (3, 1), (2, 2)] {
                let q = BlockQuery::new(x, m, l, 0.0).unwrap();
                let expect = if block_event(&[0, 1, 5], &q) { 1.0 } else { 0.0 };
                for method in [Method::Thm1, Method::Thm2] {
                    let v = block_probs(&y, &[q], method, &p, &pl).unwrap()[0];
                    assert!((v.value - expect).abs() < 1e-9, "{method} x={x} m={m} L={l}: {}", v.value);
                }
            }
        }
    }

    #[test]
    fn full_block_is_a_transition_probability() {
        let p = params();
        let pl = plan(&p);
        let y = cfg(&[0, 2]);
        let q = BlockQuery::new(1, 1, 2, 0.7).unwrap();
        let a = block_prob_thm1(&y, &q, &p, &pl).unwrap();
        let b = transition_prob(&y, &cfg(&[1, 2]), 0.7, &p, &pl).unwrap();
        assert!((a.value - b.value).abs() < 1e-9);
    }

    #[test]
    fn precision_modes_agree() {
        let p = params();
        let y = cfg(&[0, 2, 5]);
        let q = BlockQuery::new(1, 1, 1, 0.3).unwrap();
        let a = block_prob_thm2(&y, &q, &p, &plan(&p).with_precision(Precision::Double)).unwrap();
        let b = block_prob_thm2(&y, &q, &p, &plan(&p).with_precision(Precision::DoubleDouble)).unwrap();
        assert!((a.value - b.value).abs() < 1e-10 && b.abs_error < a.abs_error);
    }

    #[test]
    fn parameter_errors() {
        let p0 = Params::from_ratio(0, 1).unwrap();
        let y = cfg(&[0, 2]);
        let q = BlockQuery::new(0, 1, 1, 1.0).unwrap();
        assert!(matches!(block_prob_thm1(&y, &q, &p0, &plan(&p0)), Err(Error::Parameter(_))));
        let p1 = Params::from_ratio(1, 1).unwrap();
        assert!(matches!(block_prob_thm2(&y, &q, &p1, &plan(&p1)), Err(Error::Parameter(_))));
        let p = params();
        let q = BlockQuery::new(0, 2, 2, 1.0).unwrap();
        assert!(block_prob_thm1(&y, &q, &p, &plan(&p)).is_err());
        assert!(block_prob_thm1(&ParticleConfig::Step, &q, &p, &plan(&p)).is_err());
    }
}
