//! Step initial condition: Fredholm determinants of the kernels `K_x` and
//! `K_{L,x}(z)` on `C_R`, the λ- and `Γ_{0,τ}`-integrals, and the collapsed
//! series over equal-size subsets as an independent check.

use num_complex::Complex64;
use num_rational::BigRational;
use rayon::prelude::*;

use crate::algebra::{pochhammer, tau_binom, Scalar};
use crate::contour::{default_offset, pairwise_sum, CircleContour, ContourPlan, NestedTwoCenterContour};
use crate::error::{Error, Result};
use crate::finite::{BlockQuery, Method, ProbabilityEstimate, CLEARANCE};
use crate::weights::{u_inv_raw, u_raw, FPolyWork, Params, Rates};

/// Largest λ node count the adaptive choice may pick.
pub const MAX_LAMBDA_NODES: usize = 1024;
/// Largest subset size the collapsed series evaluates.
pub const MAX_SERIES_K: usize = 5;

/// Dense square matrices, determinants and Hessenberg reduction.
pub mod linalg {
    use num_complex::Complex64;

    /// `det = phase · e^{log_abs}`; zero determinants have `log_abs = −∞`.
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct LogDet {
        pub log_abs: f64,
        pub phase: Complex64,
    }

    impl LogDet {
        pub fn value(&self) -> Complex64 {
            if self.log_abs == f64::NEG_INFINITY {
                return Complex64::new(0.0, 0.0);
            }
            self.phase * self.log_abs.exp()
        }

        fn accumulate(&mut self, pivot: Complex64) {
            let a = pivot.norm();
            if a == 0.0 {
                self.log_abs = f64::NEG_INFINITY;
            } else {
                self.log_abs += a.ln();
                self.phase *= pivot / a;
            }
        }
    }

    /// Determinant of the row-major `n × n` matrix by LU with partial
    /// pivoting. The matrix is overwritten.
    pub fn lu_det(a: &mut [Complex64], n: usize) -> LogDet {
        let mut det = LogDet { log_abs: 0.0, phase: Complex64::new(1.0, 0.0) };
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[i * n + k].norm().total_cmp(&a[j * n + k].norm())).unwrap_or(k);
            if a[piv * n + k].norm() == 0.0 {
                det.log_abs = f64::NEG_INFINITY;
                return det;
            }
            if piv != k {
                for c in 0..n {
                    a.swap(k * n + c, piv * n + c);
                }
                det.phase = -det.phase;
            }
            let pivot = a[k * n + k];
            det.accumulate(pivot);
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                if f.norm() == 0.0 {
                    continue;
                }
                for c in k + 1..n {
                    let v = a[k * n + c];
                    a[i * n + c] -= f * v;
                }
            }
        }
        det
    }

    /// Reduces `a` in place to upper Hessenberg form by Householder
    /// similarity transforms; the spectrum is unchanged.
    pub fn hessenberg(a: &mut [Complex64], n: usize) {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n.saturating_sub(2) {
            let alpha_norm: f64 = (k + 1..n).map(|i| a[i * n + k].norm_sqr()).sum::<f64>().sqrt();
            if alpha_norm == 0.0 {
                continue;
            }
            let x0 = a[(k + 1) * n + k];
            let phase = if x0.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { x0 / x0.norm() };
            let alpha = -phase * alpha_norm;
            for i in k + 1..n {
                v[i] = a[i * n + k];
            }
            v[k + 1] -= alpha;
            let vnorm2: f64 = (k + 1..n).map(|i| v[i].norm_sqr()).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            // A ← (I − 2vv*/v*v) A
            for c in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for i in k + 1..n {
                    s += v[i].conj() * a[i * n + c];
                }
                let s = s * (2.0 / vnorm2);
                for i in k + 1..n {
                    a[i * n + c] -= v[i] * s;
                }
            }
            // A ← A (I − 2vv*/v*v)
            for r in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for i in k + 1..n {
                    s += a[r * n + i] * v[i];
                }
                let s = s * (2.0 / vnorm2);
                for i in k + 1..n {
                    a[r * n + i] -= s * v[i].conj();
                }
            }
            for i in k + 2..n {
                a[i * n + k] = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// `det(I − c·H)` for upper Hessenberg `H`, in `O(n²)`.
    pub fn hessenberg_det_shifted(h: &[Complex64], n: usize, c: Complex64, work: &mut Vec<Complex64>) -> LogDet {
        work.clear();
        work.extend(h.iter().map(|&v| -c * v));
        for i in 0..n {
            work[i * n + i] += 1.0;
        }
        let a = work.as_mut_slice();
        let mut det = LogDet { log_abs: 0.0, phase: Complex64::new(1.0, 0.0) };
        for k in 0..n {
            if k + 1 < n && a[(k + 1) * n + k].norm() > a[k * n + k].norm() {
                for col in k..n {
                    a.swap(k * n + col, (k + 1) * n + col);
                }
                det.phase = -det.phase;
            }
            let pivot = a[k * n + k];
            det.accumulate(pivot);
            if det.log_abs == f64::NEG_INFINITY {
                return det;
            }
            if k + 1 < n {
                let f = a[(k + 1) * n + k] / pivot;
                for col in k + 1..n {
                    let v = a[k * n + col];
                    a[(k + 1) * n + col] -= f * v;
                }
            }
        }
        det
    }
}

use linalg::{hessenberg, hessenberg_det_shifted, lu_det};

/// Quadrature discretization of `C_R` for the Nyström method.
#[derive(Clone, Debug, PartialEq)]
pub struct NystromGrid {
    pub nodes: Vec<Complex64>,
    pub weights: Vec<Complex64>,
}

impl NystromGrid {
    pub fn on(c: &CircleContour) -> Self {
        let set = c.node_set::<Complex64>(0.5);
        NystromGrid { nodes: set.nodes, weights: set.weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `K_x(ξ,ξ′) ∏_j U(z_j, ξ)`; with `z` empty this is `K_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub x: i64,
    pub t: f64,
    pub z: Vec<Complex64>,
    pub params: Params,
}

pub fn kernel_value(spec: &KernelSpec, xi: Complex64, xi_prime: Complex64) -> Result<Complex64> {
    let r = spec.params.rates::<Complex64>();
    let den = r.p + r.q * xi * xi_prime - xi;
    if den.norm() < f64::EPSILON {
        return Err(Error::Pole(format!("p + qξξ′ − ξ vanishes at ξ = {xi}, ξ′ = {xi_prime}")));
    }
    if xi.norm() == 0.0 {
        return Err(Error::Pole("kernel evaluated at ξ = 0".into()));
    }
    let mut v = Scalar::powi(&xi, spec.x) * ((r.p / xi + r.q * xi - 1.0) * spec.t).exp() / den;
    for &z in &spec.z {
        if (xi - z).norm() < f64::EPSILON {
            return Err(Error::Pole(format!("ξ = z_j = {z}")));
        }
        v *= u_raw(&z, &xi, &r);
    }
    Ok(v)
}

/// `det(I − λK)` by Nyström discretization: the matrix
/// `δ_ab − λ w_b K(ξ_a, ξ_b)`, factored by LU.
pub fn fredholm_det(spec: &KernelSpec, lambda: Complex64, grid: &NystromGrid) -> Result<Complex64> {
    let n = grid.len();
    let mut a = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = -lambda * grid.weights[j] * kernel_value(spec, grid.nodes[i], grid.nodes[j])?;
        }
        a[i * n + i] += 1.0;
    }
    Ok(lu_det(&mut a, n).value())
}

/// z-independent parts of the Nyström matrix: `A_ab(z) = f_a(z) D_ab`.
struct StepKernel {
    n: usize,
    nodes: Vec<Complex64>,
    /// `w_b / (p + qξ_aξ_b − ξ_a)`.
    d: Vec<Complex64>,
    r: Rates<Complex64>,
}

impl StepKernel {
    fn new(grid: &NystromGrid, params: &Params) -> Result<Self> {
        let r = params.rates::<Complex64>();
        let n = grid.len();
        let mut d = vec![Complex64::new(0.0, 0.0); n * n];
        let mut min_den = f64::INFINITY;
        for a in 0..n {
            for b in 0..n {
                let den = r.p + r.q * grid.nodes[a] * grid.nodes[b] - grid.nodes[a];
                min_den = min_den.min(den.norm());
                d[a * n + b] = grid.weights[b] / den;
            }
        }
        if min_den < CLEARANCE {
            return Err(Error::Contour(format!("kernel denominator {min_den:.3e} on C_R is below the clearance {CLEARANCE:e}")));
        }
        Ok(StepKernel { n, nodes: grid.nodes.clone(), d, r })
    }

    /// `ξ_a^x e^{ε(ξ_a)t}`.
    fn base_factors(&self, x: i64, t: f64) -> Vec<Complex64> {
        self.nodes.iter().map(|&xi| Scalar::powi(&xi, x) * ((self.r.p / xi + self.r.q * xi - 1.0) * t).exp()).collect()
    }

    fn matrix(&self, base: &[Complex64], z: &[Complex64], out: &mut Vec<Complex64>) {
        let n = self.n;
        out.clear();
        out.resize(n * n, Complex64::new(0.0, 0.0));
        for a in 0..n {
            let mut f = base[a];
            for zj in z {
                f *= u_raw(zj, &self.nodes[a], &self.r);
            }
            for b in 0..n {
                out[a * n + b] = f * self.d[a * n + b];
            }
        }
    }
}

/// Which side of `λ = 0` the λ circle lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LambdaMode {
    /// Encloses `τ^{−j}`, `j < m`, and excludes 0.
    #[default]
    ExcludeZero,
    /// Centered at 0 and enclosing every `τ^{−j}`, `j < m`.
    EncloseZero,
}

/// The λ circle and the node count it needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaCircle {
    pub contour: CircleContour,
    /// Geometric convergence ratio of the trapezoid rule on this circle.
    pub ratio: f64,
}

fn tau_powers(m: usize, tau: f64) -> (f64, f64, f64) {
    let pts: Vec<f64> = (0..m).map(|j| tau.powi(-(j as i32))).collect();
    let a = pts.iter().copied().fold(f64::INFINITY, f64::min);
    let b = pts.iter().copied().fold(0.0, f64::max);
    (a, b, tau.powi(-(m as i32)))
}

fn lambda_nodes(ratio: f64, floor: usize) -> usize {
    let need = if ratio <= 0.0 { 8.0 } else { (-40.0 / ratio.ln()).ceil() };
    let mut m = floor.max(8);
    while (m as f64) < need && m < MAX_LAMBDA_NODES {
        m *= 2;
    }
    m
}

/// A circle enclosing `τ^0, …, τ^{−(m−1)}` and excluding `0` and `τ^{−m}`,
/// for either `τ < 1` or `τ > 1`. The radius is the geometric mean of the
/// half-span and the distance from the center to 0, which balances the
/// convergence ratios of the enclosed poles and of the pole at 0.
pub fn lambda_contour_for(m: usize, l: usize, params: &Params) -> Result<CircleContour> {
    Ok(lambda_circle(m, l, params, LambdaMode::ExcludeZero, 64)?.contour)
}

fn lambda_circle(m: usize, _l: usize, params: &Params, mode: LambdaMode, floor: usize) -> Result<LambdaCircle> {
    if m == 0 {
        return Err(Error::Parameter("m must be at least 1".into()));
    }
    params.require_both_positive()?;
    let tau = params.tau_f64()?;
    let (a, b, next) = tau_powers(m, tau);
    match mode {
        LambdaMode::ExcludeZero => {
            let c = (a + b) / 2.0;
            let h = (b - a) / 2.0;
            let target = if h > 0.0 { (h * c).sqrt() } else { c / 2.0 };
            let r_max = c.min((next - c).abs());
            let r = if target < r_max { target } else { (h + r_max) / 2.0 };
            // τ^{−m} is kept outside but is not a singularity; only 0 is.
            let ratio = if h > 0.0 { (h / r).max(r / c) } else { r / c };
            let contour = CircleContour::new(Complex64::new(c, 0.0), r, lambda_nodes(ratio, floor))?;
            Ok(LambdaCircle { contour, ratio })
        }
        LambdaMode::EncloseZero => {
            let r = 2.0 * b;
            let contour = CircleContour::new(Complex64::new(0.0, 0.0), r, lambda_nodes(0.5, floor))?;
            Ok(LambdaCircle { contour, ratio: 0.5 })
        }
    }
}

/// `(1/2πi)∮ det(I − cλH) / ((λ;τ)_m λ^{power}) dλ` on the given circle,
/// with `H` upper Hessenberg.
fn lambda_integral(h: &[Complex64], n: usize, c: Complex64, circle: &CircleContour, tau: f64, m: usize, power: i64, work: &mut Vec<Complex64>) -> Complex64 {
    let tau_c = Complex64::new(tau, 0.0);
    let terms: Vec<Complex64> = (0..circle.nodes)
        .map(|j| {
            let lam = circle.node(j, 0.5);
            let det = hessenberg_det_shifted(h, n, c * lam, work).value();
            det / (pochhammer(&lam, &tau_c, m) * Scalar::powi(&lam, power)) * (lam - circle.center) / circle.nodes as f64
        })
        .collect();
    pairwise_sum(&terms)
}

fn require_pq(params: &Params) -> Result<()> {
    if params.p_f64() == 0.0 || params.q_f64() == 0.0 {
        return Err(Error::Parameter("step-initial-condition formulas need p, q > 0".into()));
    }
    params.tau()?;
    Ok(())
}

fn rat_f64(r: &BigRational) -> f64 {
    Complex64::from_rational(r).re
}

/// Block probabilities for step initial condition at one `(x, L, t)` and
/// several `m`, sharing the z-grid and the Hessenberg reductions.
pub fn theorem3_probs(x: i64, l: usize, t: f64, ms: &[usize], params: &Params, plan: &ContourPlan, mode: LambdaMode) -> Result<Vec<ProbabilityEstimate>> {
    require_pq(params)?;
    for &m in ms {
        BlockQuery::new(x, m, l, t)?;
    }
    plan.validate()?;
    let tau = params.tau_f64()?;
    let nested = NestedTwoCenterContour::for_params(l, params)?;
    nested.validate_cross_poles(params, plan.nested_nodes)?;
    let grid = NystromGrid::on(&plan.large);
    let kernel = StepKernel::new(&grid, params)?;
    let sets: Vec<_> = (0..l).map(|i| nested.node_set(i, plan.nested_nodes)).collect();
    for set in &sets {
        for z in &set.nodes {
            let gap = grid.nodes.iter().map(|xi| (xi - z).norm()).fold(f64::INFINITY, f64::min);
            if gap < CLEARANCE {
                return Err(Error::Contour(format!("z node {z} within {gap:e} of the Nyström contour")));
            }
        }
    }
    let total: usize = sets.iter().map(|s| s.len()).product();
    if total as u64 > plan.budget {
        return Err(Error::Resource(format!("{total} z-nodes exceed the evaluation budget")));
    }
    let circles: Vec<LambdaCircle> = ms.iter().map(|&m| lambda_circle(m, l, params, mode, plan.lambda_circle.nodes)).collect::<Result<_>>()?;
    let r = params.rates::<Complex64>();
    let base = kernel.base_factors(x + l as i64 - 1, t);
    let c = Complex64::new(params.p_f64().powi(-(l as i32)) * params.q_f64(), 0.0);
    let n = kernel.n;
    let k = l;
    let per_node: Vec<Result<(Vec<Complex64>, f64)>> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut z = vec![Complex64::new(0.0, 0.0); k];
            let mut w = Complex64::new(1.0, 0.0);
            for d in (0..k).rev() {
                let i = rem % sets[d].len();
                rem /= sets[d].len();
                z[d] = sets[d].nodes[i];
                w *= sets[d].weights[i];
            }
            let mut pre = w;
            for i in 0..k {
                pre /= Scalar::powi(&z[i], (k - i) as i64) * (r.q * z[i] - r.p);
                for j in i + 1..k {
                    pre *= u_inv_raw(&z[j], &z[i], &r);
                }
            }
            let mut a = Vec::new();
            kernel.matrix(&base, &z, &mut a);
            hessenberg(&mut a, n);
            let mut work = Vec::with_capacity(n * n);
            let vals: Vec<Complex64> =
                ms.iter().zip(&circles).map(|(&m, circ)| pre * lambda_integral(&a, n, c, &circ.contour, tau, m, l as i64, &mut work)).collect();
            let mag = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if vals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Evaluation(format!("{z:?}")));
            }
            Ok((vals, mag))
        })
        .collect();
    let mut cols = vec![Vec::with_capacity(total); ms.len()];
    let mut abs_sum = 0.0;
    for res in per_node {
        let (vals, mag) = res?;
        abs_sum += mag;
        for (col, v) in cols.iter_mut().zip(vals) {
            col.push(v);
        }
    }
    let (p, tau_r) = (params.p().clone(), params.tau()?);
    let li = l as i64;
    Ok(ms
        .iter()
        .zip(cols)
        .map(|(&m, col)| {
            let mi = m as i64;
            let sign = if (li - 1) % 2 == 0 { 1.0 } else { -1.0 };
            let factor = sign * rat_f64(&(Scalar::powi(&p, li * (li + 1) / 2) * Scalar::powi(&tau_r, -(mi - 1) * (li - 1))));
            let v = pairwise_sum(&col) * factor;
            let roundoff = f64::EPSILON * (n as f64) * 16.0 * abs_sum * factor.abs();
            ProbabilityEstimate { value: v.re, abs_error: v.im.abs() + roundoff, method: Method::Thm3 }
        })
        .collect())
}

/// Step-initial-condition block probability through the nested z-integral
/// and the λ-integral of a Fredholm determinant.
pub fn theorem3_prob(q: &BlockQuery, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    Ok(theorem3_probs(q.x, q.l, q.t, &[q.m], params, plan, LambdaMode::ExcludeZero)?[0])
}

fn hessenberg_of(kernel: &StepKernel, x: i64, t: f64) -> Vec<Complex64> {
    let mut a = Vec::new();
    kernel.matrix(&kernel.base_factors(x, t), &[], &mut a);
    hessenberg(&mut a, kernel.n);
    a
}

/// `L = 1` through the two-determinant formula
/// `∮ [det(I − qλK_x) − det(I − qλK_{x−1})]/(λ;τ)_m dλ/λ`.
pub fn remark_l1_prob(q: &BlockQuery, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    if q.l != 1 {
        return Err(Error::Parameter(format!("the two-determinant formula is for L = 1 (got {})", q.l)));
    }
    require_pq(params)?;
    plan.validate()?;
    let tau = params.tau_f64()?;
    let kernel = StepKernel::new(&NystromGrid::on(&plan.large), params)?;
    let circ = lambda_circle(q.m, 1, params, LambdaMode::ExcludeZero, plan.lambda_circle.nodes)?;
    let c = Complex64::new(params.q_f64(), 0.0);
    let mut work = Vec::new();
    let h1 = hessenberg_of(&kernel, q.x, q.t);
    let h0 = hessenberg_of(&kernel, q.x - 1, q.t);
    let a = lambda_integral(&h1, kernel.n, c, &circ.contour, tau, q.m, 1, &mut work);
    let b = lambda_integral(&h0, kernel.n, c, &circ.contour, tau, q.m, 1, &mut work);
    let v = a - b;
    Ok(ProbabilityEstimate { value: v.re, abs_error: v.im.abs() + 1e3 * f64::EPSILON * (a.norm() + b.norm()), method: Method::Remark })
}

/// `P(x_m(t) ≤ x) = ∮ det(I − qλK_x)/(λ;τ)_m dλ/λ` on a circle enclosing 0.
pub fn step_cdf(x: i64, m: usize, t: f64, params: &Params, plan: &ContourPlan) -> Result<ProbabilityEstimate> {
    require_pq(params)?;
    BlockQuery::new(x, m, 1, t)?;
    plan.validate()?;
    let tau = params.tau_f64()?;
    let kernel = StepKernel::new(&NystromGrid::on(&plan.large), params)?;
    let circ = lambda_circle(m, 1, params, LambdaMode::EncloseZero, plan.lambda_circle.nodes)?;
    let mut work = Vec::new();
    let h = hessenberg_of(&kernel, x, t);
    let v = lambda_integral(&h, kernel.n, Complex64::new(params.q_f64(), 0.0), &circ.contour, tau, m, 1, &mut work);
    Ok(ProbabilityEstimate { value: v.re, abs_error: v.im.abs() + 1e3 * f64::EPSILON * v.norm().max(1.0), method: Method::Remark })
}

/// Partial sums of the collapsed series, with per-term magnitudes.
#[derive(Clone, Debug)]
pub struct SeriesEstimate {
    pub estimate: ProbabilityEstimate,
    /// `(k, |term_k|)` for every computed `k`.
    pub terms: Vec<(usize, f64)>,
}

/// `(1/k!)∫_{C_R^k} J_{L,k}` for `k = 1..=k_max` and every `(x, t)` job,
/// summing only strictly increasing node tuples (the integrand is
/// symmetric and vanishes when two variables coincide).
fn series_integrals(l: usize, k_max: usize, jobs: &[(i64, f64)], params: &Params, plan: &ContourPlan) -> Result<Vec<Vec<Complex64>>> {
    let grid = NystromGrid::on(&plan.large);
    let r = params.rates::<Complex64>();
    let n = grid.len();
    let mut u = vec![Complex64::new(0.0, 0.0); n * n];
    let mut pair = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                let (x, y) = (grid.nodes[a], grid.nodes[b]);
                u[a * n + b] = u_raw(&x, &y, &r);
                pair[a * n + b] = u_inv_raw(&x, &y, &r) * u_inv_raw(&y, &x, &r);
            }
        }
    }
    let single: Vec<Complex64> = grid.nodes.iter().zip(&grid.weights).map(|(&xi, &w)| w / ((1.0 - xi) * (r.q * xi - r.p))).collect();
    let g: Vec<Vec<Complex64>> = jobs
        .iter()
        .map(|&(x, t)| grid.nodes.iter().map(|&xi| Scalar::powi(&xi, x - 1) * ((r.p / xi + r.q * xi - 1.0) * t).exp()).collect())
        .collect();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); k_max + 1]; jobs.len()];
    for k in l..=k_max {
        let count = binomial(n, k);
        if count > plan.budget {
            return Err(Error::Resource(format!("C({n}, {k}) node tuples exceed the evaluation budget")));
        }
        let partial: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|first| {
                let mut acc = vec![Complex64::new(0.0, 0.0); jobs.len()];
                let mut idx = vec![0usize; k];
                idx[0] = first;
                let mut work = FPolyWork::new(k, &r);
                let mut xi = vec![Complex64::new(0.0, 0.0); k];
                series_recurse(1, k, l, n, &mut idx, &mut xi, &grid.nodes, &u, &pair, &single, &g, &mut work, &mut acc);
                acc
            })
            .collect();
        for (j, row) in out.iter_mut().enumerate() {
            let col: Vec<Complex64> = partial.iter().map(|v| v[j]).collect();
            row[k] = pairwise_sum(&col);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn series_recurse(
    depth: usize,
    k: usize,
    l: usize,
    n: usize,
    idx: &mut Vec<usize>,
    xi: &mut Vec<Complex64>,
    nodes: &[Complex64],
    u: &[Complex64],
    pair: &[Complex64],
    single: &[Complex64],
    g: &[Vec<Complex64>],
    work: &mut FPolyWork<Complex64>,
    acc: &mut [Complex64],
) {
    if depth == k {
        let mut v = Complex64::new(1.0, 0.0);
        for a in 0..k {
            xi[a] = nodes[idx[a]];
            v *= single[idx[a]];
            for b in a + 1..k {
                v *= pair[idx[a] * n + idx[b]];
            }
        }
        if v.norm() == 0.0 {
            return;
        }
        let f = if l == 1 {
            Complex64::new(1.0, 0.0) - xi.iter().product::<Complex64>()
        } else {
            for a in 0..k {
                for b in 0..k {
                    if a != b {
                        work.umat[a * k + b] = u[idx[a] * n + idx[b]];
                    }
                }
            }
            work.eval_with_u(l, xi)
        };
        v *= f;
        for (j, gj) in g.iter().enumerate() {
            let mut term = v;
            for &i in idx.iter() {
                term *= gj[i];
            }
            acc[j] += term;
        }
        return;
    }
    let start = idx[depth - 1] + 1;
    for i in start..n {
        if n - i < k - depth {
            break;
        }
        idx[depth] = i;
        series_recurse(depth + 1, k, l, n, idx, xi, nodes, u, pair, single, g, work, acc);
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

/// Collapsed series for several `m` at one `(x, L, t)`.
pub fn step_series_probs(x: i64, l: usize, t: f64, ms: &[usize], params: &Params, plan: &ContourPlan, k_max: usize) -> Result<Vec<SeriesEstimate>> {
    require_pq(params)?;
    for &m in ms {
        BlockQuery::new(x, m, l, t)?;
    }
    if k_max > MAX_SERIES_K {
        return Err(Error::Resource(format!("k_max = {k_max} exceeds {MAX_SERIES_K}")));
    }
    plan.validate()?;
    StepKernel::new(&NystromGrid::on(&plan.large), params)?;
    let ints = if k_max >= l { series_integrals(l, k_max, &[(x, t)], params, plan)?.remove(0) } else { vec![Complex64::new(0.0, 0.0); k_max + 1] };
    let (p, q, tau) = (params.p().clone(), params.q().clone(), params.tau()?);
    let mut out = Vec::with_capacity(ms.len());
    for &m in ms {
        let (mi, li) = (m as i64, l as i64);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut terms = Vec::new();
        for k in (m + l - 1)..=k_max {
            let ki = k as i64;
            let sign = if (mi + 1) % 2 == 0 { 1 } else { -1 };
            let coef = BigRational::from_integer(sign.into())
                * tau_binom(ki - li, mi - 1, &tau)?
                * Scalar::powi(&p, (ki - mi) * (ki - mi + 1) / 2)
                * Scalar::powi(&q, ki * mi + (ki - mi) * (ki + mi - 1) / 2);
            let term = ints[k] * rat_f64(&coef);
            terms.push((k, term.norm()));
            sum += term;
        }
        let trunc = terms.last().map(|t| t.1).unwrap_or(0.0);
        out.push(SeriesEstimate {
            estimate: ProbabilityEstimate { value: sum.re, abs_error: sum.im.abs() + trunc, method: Method::Series },
            terms,
        });
    }
    Ok(out)
}

/// Partial sum of the collapsed series over `m + L − 1 ≤ k ≤ k_max`; the
/// last term's magnitude is reported as the truncation estimate.
pub fn step_series_prob(q: &BlockQuery, params: &Params, plan: &ContourPlan, k_max: usize) -> Result<SeriesEstimate> {
    Ok(step_series_probs(q.x, q.l, q.t, &[q.m], params, plan, k_max)?.remove(0))
}

/// Fredholm expansion terms `(1/k!)∮…∮ det(K(ξ_i, ξ_j))` for `k ≤ 2`,
/// computed directly on the tensor grid (used to check `fredholm_det`).
pub fn fredholm_series_terms(spec: &KernelSpec, grid: &NystromGrid) -> Result<[Complex64; 3]> {
    let n = grid.len();
    let mut k = vec![Complex64::new(0.0, 0.0); n * n];
    for a in 0..n {
        for b in 0..n {
            k[a * n + b] = kernel_value(spec, grid.nodes[a], grid.nodes[b])?;
        }
    }
    let t1: Vec<Complex64> = (0..n).map(|a| grid.weights[a] * k[a * n + a]).collect();
    let t2: Vec<Complex64> = (0..n * n)
        .map(|ab| {
            let (a, b) = (ab / n, ab % n);
            grid.weights[a] * grid.weights[b] * (k[a * n + a] * k[b * n + b] - k[a * n + b] * k[b * n + a]) / 2.0
        })
        .collect();
    Ok([Complex64::new(1.0, 0.0), pairwise_sum(&t1), pairwise_sum(&t2)])
}

/// Offsets used for the `k`-th Nyström copy; exposed for tests that build
/// rotated grids.
pub fn grid_offset(k: usize) -> f64 {
    default_offset(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn params(num: i64, den: i64) -> Params {
        Params::from_ratio(num, den).unwrap()
    }

    #[test]
    fn kernel_special_values() {
        let p = params(3, 5);
        let spec = KernelSpec { x: 0, t: 0.0, z: vec![], params: p.clone() };
        let (xi, xp) = (c(2.0, 1.0), c(-1.0, 3.0));
        let v = kernel_value(&spec, xi, xp).unwrap();
        assert!((v - 1.0 / (0.6 + 0.4 * xi * xp - xi)).norm() < 1e-15);
        let tau = 1.5;
        let with_z = KernelSpec { z: vec![c(tau, 0.0)], ..spec.clone() };
        assert!((kernel_value(&with_z, xi, xp).unwrap() - 0.6 * v).norm() < 1e-14);
        let pole = c(0.6, 0.0) / (1.0 - 0.4 * xp);
        assert!(matches!(kernel_value(&spec, pole, xp), Err(Error::Pole(_))));
    }

    #[test]
    fn dense_determinants() {
        let mut a = vec![c(2.0, 0.0), c(1.0, 1.0), c(0.0, -1.0), c(3.0, 0.0)];
        let d = lu_det(&mut a, 2).value();
        assert!((d - (c(6.0, 0.0) - c(1.0, 1.0) * c(0.0, -1.0))).norm() < 1e-14);
        let n = 6;
        let orig: Vec<Complex64> = (0..n * n).map(|i| c(((i * 7) % 11) as f64 - 5.0, ((i * 3) % 5) as f64 - 2.0)).collect();
        let mut h = orig.clone();
        hessenberg(&mut h, n);
        for i in 2..n {
            for j in 0..i - 1 {
                assert!(h[i * n + j].norm() < 1e-12);
            }
        }
        let mut work = Vec::new();
        for lam in [c(0.1, 0.0), c(-0.3, 0.2), c(1.0, 1.0)] {
            let mut m: Vec<Complex64> = orig.iter().map(|&v| -lam * v).collect();
            for i in 0..n {
                m[i * n + i] += 1.0;
            }
            let direct = lu_det(&mut m, n).value();
            let hv = hessenberg_det_shifted(&h, n, lam, &mut work).value();
            assert!((direct - hv).norm() < 1e-9 * direct.norm().max(1.0), "{direct} vs {hv}");
        }
    }

    #[test]
    fn fredholm_det_basics_and_series() {
        let p = params(3, 5);
        let plan = ContourPlan::for_params(&p).unwrap();
        let grid = NystromGrid::on(&plan.large);
        let spec = KernelSpec { x: 1, t: 0.4, z: vec![], params: p.clone() };
        assert!((fredholm_det(&spec, c(0.0, 0.0), &grid).unwrap() - 1.0).norm() < 1e-15);
        let terms = fredholm_series_terms(&spec, &grid).unwrap();
        // det(I − λK) = 1 − λ tr K + λ² (second term) + O(λ³)
        let lam = 1e-3;
        let d = fredholm_det(&spec, c(lam, 0.0), &grid).unwrap();
        let series = terms[0] - lam * terms[1] + lam * lam * terms[2];
        assert!((d - series).norm() < 1e-8, "{d} vs {series}");
        let far = KernelSpec { x: -30, t: 0.0, z: vec![], params: p };
        let d = fredholm_det(&far, c(1.0, 0.0), &grid).unwrap();
        assert!((d - 1.0).norm() < 1e-6);
    }

    #[test]
    fn lambda_circles() {
        let p = params(1, 3); // τ = 1/2
        let cc = lambda_contour_for(1, 1, &p).unwrap();
        assert!((cc.center.re - 1.0).abs() < 1e-15 && cc.radius < 1.0);
        let cc = lambda_contour_for(2, 1, &p).unwrap();
        let inside = |z: f64| (Complex64::new(z, 0.0) - cc.center).norm() < cc.radius;
        assert!(inside(1.0) && inside(2.0) && !inside(0.0) && !inside(4.0));
        let p = params(2, 5); // τ = 2/3
        let cc = lambda_contour_for(3, 1, &p).unwrap();
        let inside = |z: f64| (Complex64::new(z, 0.0) - cc.center).norm() < cc.radius;
        assert!(inside(1.0) && inside(1.5) && inside(2.25) && !inside(3.375) && !inside(0.0));
        let p = params(3, 4); // τ = 3
        let cc = lambda_contour_for(2, 1, &p).unwrap();
        let inside = |z: f64| (Complex64::new(z, 0.0) - cc.center).norm() < cc.radius;
        assert!(inside(1.0) && inside(1.0 / 3.0) && !inside(1.0 / 9.0) && !inside(0.0));
        assert!(lambda_contour_for(1, 1, &params(1, 2)).is_err());
    }

    #[test]
    fn time_zero_is_indicator() {
        let p = params(3, 5);
        let plan = ContourPlan::for_params(&p).unwrap();
        for (l, m) in [(1, 1), (1, 2), (2, 1)] {
            for x in [m as i64 - 1, m as i64, m as i64 + 1] {
                let v = theorem3_probs(x, l, 0.0, &[m], &p, &plan, LambdaMode::ExcludeZero).unwrap()[0];
                let expect = if x == m as i64 { 1.0 } else { 0.0 };
                assert!((v.value - expect).abs() < 1e-9, "L={l} m={m} x={x}: {}", v.value);
            }
        }
    }

    #[test]
    fn remark_matches_general_pipeline_and_modes_agree() {
        let p = params(3, 5);
        let plan = ContourPlan::for_params(&p).unwrap();
        for m in [1usize, 2] {
            for x in [0i64, 1, 2] {
                let q = BlockQuery::new(x, m, 1, 0.5).unwrap();
                let a = theorem3_prob(&q, &p, &plan).unwrap();
                let b = remark_l1_prob(&q, &p, &plan).unwrap();
                let c = theorem3_probs(x, 1, 0.5, &[m], &p, &plan, LambdaMode::EncloseZero).unwrap()[0];
                assert!((a.value - b.value).abs() < 1e-9, "m={m} x={x}: {} vs {}", a.value, b.value);
                assert!((a.value - c.value).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cdf_differences_are_point_probabilities() {
        let p = params(3, 4);
        let plan = ContourPlan::for_params(&p).unwrap();
        let t = 0.3;
        let f1 = step_cdf(1, 1, t, &p, &plan).unwrap().value;
        let f0 = step_cdf(0, 1, t, &p, &plan).unwrap().value;
        let pt = remark_l1_prob(&BlockQuery::new(1, 1, 1, t).unwrap(), &p, &plan).unwrap().value;
        assert!((f1 - f0 - pt).abs() < 1e-9);
        assert!((step_cdf(1, 1, 0.0, &p, &plan).unwrap().value - 1.0).abs() < 1e-9);
        assert!(step_cdf(0, 1, 0.0, &p, &plan).unwrap().value.abs() < 1e-9);
    }

    #[test]
    fn series_empty_below_threshold() {
        let p = params(3, 5);
        let plan = ContourPlan::for_params(&p).unwrap();
        let q = BlockQuery::new(1, 2, 2, 0.3).unwrap();
        let s = step_series_prob(&q, &p, &plan, 2).unwrap();
        assert_eq!(s.estimate.value, 0.0);
        assert!(s.terms.is_empty());
    }

    #[test]
    fn parameter_errors() {
        let p = params(1, 1);
        let plan = ContourPlan::for_params(&p).unwrap();
        let q = BlockQuery::new(1, 1, 1, 0.3).unwrap();
        assert!(matches!(theorem3_prob(&q, &p, &plan), Err(Error::Parameter(_))));
    }
}
