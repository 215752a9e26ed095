//! Trapezoid-rule quadrature on circles, tensor products of circles, and
//! the nested two-center circles used for iterated residues at `0` and `τ`.
//!
//! All integrals carry the factor `1/2πi`: on a circle of `M` nodes
//! `(1/2πi)∮f dz ≈ (1/M) Σ_j f(z_j)(z_j − center)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::algebra::ComplexScalar;
use crate::error::{Error, Result};
use crate::weights::Params;

/// Default number of integrand evaluations one quadrature may spend.
pub const DEFAULT_BUDGET: u64 = 1_000_000_000;

/// Reads `ASEP_BLOCKS_BUDGET`, falling back to [`DEFAULT_BUDGET`].
pub fn budget_from_env() -> u64 {
    std::env::var("ASEP_BLOCKS_BUDGET").ok().and_then(|s| s.trim().parse().ok()).unwrap_or(DEFAULT_BUDGET)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircleContour {
    pub center: Complex64,
    pub radius: f64,
    pub nodes: usize,
}

impl CircleContour {
    pub fn new(center: Complex64, radius: f64, nodes: usize) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Contour(format!("circle radius {radius} must be positive")));
        }
        if nodes < 8 || !nodes.is_power_of_two() {
            return Err(Error::Contour(format!("node count {nodes} must be a power of two ≥ 8")));
        }
        Ok(CircleContour { center, radius, nodes })
    }

    pub fn with_nodes(self, nodes: usize) -> Result<Self> {
        CircleContour::new(self.center, self.radius, nodes)
    }

    pub fn node(&self, j: usize, offset: f64) -> Complex64 {
        Complex64::circle_node(self.center, Complex64::new(self.radius, 0.0), j, offset, self.nodes)
    }

    /// Nodes and trapezoid weights in the scalar type `C`.
    pub fn node_set<C: ComplexScalar>(&self, offset: f64) -> NodeSet<C> {
        NodeSet::circle_in(C::from_c64(self.center), C::from_c64(Complex64::new(self.radius, 0.0)), self.nodes, offset)
    }
}

/// Quadrature nodes with their weights; a union of circles is a
/// concatenation.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet<C> {
    pub nodes: Vec<C>,
    pub weights: Vec<C>,
}

impl<C: ComplexScalar> NodeSet<C> {
    pub fn empty() -> Self {
        NodeSet { nodes: Vec::new(), weights: Vec::new() }
    }

    /// `m` equispaced nodes rotated by `offset` node spacings.
    pub fn circle_in(center: C, radius: C, m: usize, offset: f64) -> Self {
        let scale = C::one() / C::from_i64(m as i64);
        let nodes: Vec<C> = (0..m).map(|j| C::circle_node(center, radius, j, offset, m)).collect();
        let weights = nodes.iter().map(|&z| (z - center) * scale).collect();
        NodeSet { nodes, weights }
    }

    pub fn append(&mut self, other: &NodeSet<C>) {
        self.nodes.extend_from_slice(&other.nodes);
        self.weights.extend_from_slice(&other.weights);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl NodeSet<Complex64> {
    pub fn circle(center: Complex64, radius: f64, m: usize, offset: f64) -> Self {
        NodeSet::circle_in(center, Complex64::new(radius, 0.0), m, offset)
    }
}

/// Result of a quadrature sum.
#[derive(Clone, Copy, Debug)]
pub struct Quadrature<C> {
    pub value: C,
    /// `Σ |weight · f|` over all nodes; scales the rounding error.
    pub abs_sum: f64,
    pub evaluations: u64,
}

const BLOCK: usize = 1 << 12;

/// Sums in a fixed binary tree so the result does not depend on how the
/// blocks were scheduled.
pub(crate) fn pairwise_sum<C: ComplexScalar>(v: &[C]) -> C {
    match v.len() {
        0 => C::zero(),
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Full tensor-product sum `Σ f(z) ∏ w` over the given node sets, evaluated
/// in parallel blocks and reduced deterministically.
pub fn tensor_sum<C, F>(f: F, sets: &[NodeSet<C>], budget: u64) -> Result<Quadrature<C>>
where
    C: ComplexScalar,
    F: Fn(&[C]) -> C + Sync,
{
    let k = sets.len();
    let total = sets.iter().try_fold(1u64, |acc, s| acc.checked_mul(s.len() as u64));
    let total = match total {
        Some(t) if t <= budget => t as usize,
        _ => return Err(Error::Resource(format!("tensor grid exceeds the evaluation budget of {budget}"))),
    };
    if k == 0 {
        let v = f(&[]);
        return Ok(Quadrature { value: v, abs_sum: v.magnitude(), evaluations: 1 });
    }
    let blocks = total.div_ceil(BLOCK);
    let partial: Vec<Result<(C, f64)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut z = vec![C::zero(); k];
            let mut idx = vec![0usize; k];
            let mut acc = C::zero();
            let mut abs = 0.0;
            let start = b * BLOCK;
            let end = (start + BLOCK).min(total);
            let mut rem = start;
            for d in (0..k).rev() {
                idx[d] = rem % sets[d].len();
                rem /= sets[d].len();
            }
            for _ in start..end {
                let mut w = C::one();
                for d in 0..k {
                    z[d] = sets[d].nodes[idx[d]];
                    w *= sets[d].weights[idx[d]];
                }
                let term = f(&z) * w;
                if !term.is_finite() {
                    return Err(Error::Evaluation(format!("{:?}", z.iter().map(|c| c.to_c64()).collect::<Vec<_>>())));
                }
                abs += term.magnitude();
                acc += term;
                for d in (0..k).rev() {
                    idx[d] += 1;
                    if idx[d] < sets[d].len() {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            Ok((acc, abs))
        })
        .collect();
    let mut sums = Vec::with_capacity(blocks);
    let mut abs_sum = 0.0;
    for r in partial {
        let (v, a) = r?;
        sums.push(v);
        abs_sum += a;
    }
    Ok(Quadrature { value: pairwise_sum(&sums), abs_sum, evaluations: total as u64 })
}

/// `(1/2πi)∮ f dz` on one circle.
pub fn circle_integral<F: Fn(Complex64) -> Complex64 + Sync>(f: F, c: &CircleContour) -> Result<Complex64> {
    let set = c.node_set::<Complex64>(0.0);
    Ok(tensor_sum(|z: &[Complex64]| f(z[0]), &[set], u64::MAX)?.value)
}

/// Tensor product of circles, dimension `d` rotated by `offsets[d]` node
/// spacings so that nodes of different dimensions never coincide.
pub fn tensor_integral<F>(f: F, contours: &[CircleContour], offsets: &[f64], budget: u64) -> Result<Quadrature<Complex64>>
where
    F: Fn(&[Complex64]) -> Complex64 + Sync,
{
    if offsets.len() != contours.len() {
        return Err(Error::Contour("one rotation offset per dimension is required".into()));
    }
    let sets: Vec<NodeSet<Complex64>> = contours.iter().zip(offsets).map(|(c, &o)| c.node_set(o)).collect();
    tensor_sum(f, &sets, budget)
}

/// Rotation offset (in node spacings) for dimension `d`: golden-ratio
/// stepping keeps every pair of dimensions apart.
pub fn default_offset(d: usize) -> f64 {
    (d as f64 * 0.618_033_988_749_895) % 1.0
}

/// Circles about `0` and `τ` for each of `L` variables, radii strictly
/// decreasing from the outer variable `z_1` to the inner `z_L`.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedTwoCenterContour {
    pub radii: Vec<f64>,
    pub tau: f64,
}

impl NestedTwoCenterContour {
    pub fn new(radii: Vec<f64>, tau: f64) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::Contour("nested contour needs at least one variable".into()));
        }
        if !(tau > 0.0) || tau == 1.0 {
            return Err(Error::Contour(format!("nested contour needs τ > 0, τ ≠ 1 (got {tau})")));
        }
        if radii.windows(2).any(|w| !(w[1] < w[0])) || !(radii[radii.len() - 1] > 0.0) {
            return Err(Error::Contour("nested radii must be positive and strictly decreasing".into()));
        }
        let cap = tau.min((1.0 - tau).abs()) / 2.0;
        if !(radii[0] < cap) {
            return Err(Error::Contour(format!("outer radius {} not below min(τ, |1−τ|)/2 = {cap}", radii[0])));
        }
        Ok(NestedTwoCenterContour { radii, tau })
    }

    /// Default radii for `L` variables at the given rates.
    pub fn for_params(l: usize, params: &Params) -> Result<Self> {
        params.require_both_positive()?;
        let tau = params.tau_f64()?;
        let p = params.p_f64();
        let rho1 = [tau, (1.0 - tau).abs(), p, (tau - p).abs()].into_iter().fold(f64::INFINITY, f64::min) / 8.0;
        let factor = 0.5f64.min(tau / 4.0);
        NestedTwoCenterContour::new((0..l).map(|i| rho1 * factor.powi(i as i32)).collect(), tau)
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Union of the two circles for variable `i` (zero-based).
    pub fn node_set(&self, i: usize, inner_nodes: usize) -> NodeSet<Complex64> {
        let offset = (0.31 * i as f64) % 1.0;
        let mut set = NodeSet::circle(Complex64::new(0.0, 0.0), self.radii[i], inner_nodes, offset);
        set.append(&NodeSet::circle(Complex64::new(self.tau, 0.0), self.radii[i], inner_nodes, offset));
        set
    }

    /// Checks that the zero of `p + q·z_j·z_i − z_j` (a pole of
    /// `1/U(z_j, z_i)`), for `z_i` on an outer circle, stays outside every
    /// inner circle `j > i` with a margin.
    pub fn validate_cross_poles(&self, params: &Params, inner_nodes: usize) -> Result<()> {
        let (p, q) = (params.p_f64(), params.q_f64());
        for i in 0..self.radii.len() {
            let set = self.node_set(i, inner_nodes);
            for j in i + 1..self.radii.len() {
                for zi in &set.nodes {
                    let pole = p / (1.0 - q * zi);
                    for c in [0.0, self.tau] {
                        let d = (pole - c).norm();
                        if d < self.radii[j] * 1.5 {
                            return Err(Error::Contour(format!(
                                "pole {pole} of the z_{} integrand within {d:e} of center {c} (radius {})",
                                j + 1,
                                self.radii[j]
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Iterated integral over `Γ_{0,τ}`: for each variable the sum of the two
/// circle integrals about `0` and `τ`. The tensor product with the nested
/// radii reproduces the prescription "residues at `z_L` first, then `z_{L−1}`, …".
pub fn nested_two_center_integral<F>(f: F, n: &NestedTwoCenterContour, inner_nodes: usize, budget: u64) -> Result<Quadrature<Complex64>>
where
    F: Fn(&[Complex64]) -> Complex64 + Sync,
{
    if inner_nodes < 8 {
        return Err(Error::Contour(format!("{inner_nodes} nodes per circle is below the minimum of 8")));
    }
    let sets: Vec<NodeSet<Complex64>> = (0..n.len()).map(|i| n.node_set(i, inner_nodes)).collect();
    tensor_sum(f, &sets, budget)
}

/// Outcome of [`adaptive`].
#[derive(Clone, Debug)]
pub struct Adaptive {
    pub value: Complex64,
    pub delta: f64,
    pub nodes: usize,
    pub history: Vec<f64>,
}

/// Doubles the node count from `m0` until two successive values differ by
/// less than `tol`, at most `max_doublings` times.
pub fn adaptive<F>(mut converge: F, m0: usize, tol: f64, max_doublings: usize) -> Result<Adaptive>
where
    F: FnMut(usize) -> Result<Complex64>,
{
    let mut m = m0;
    let mut prev = converge(m)?;
    let mut history = Vec::new();
    for _ in 0..max_doublings {
        m *= 2;
        let next = converge(m)?;
        let delta = (next - prev).norm();
        history.push(delta);
        if delta < tol {
            return Ok(Adaptive { value: next, delta, nodes: m, history });
        }
        prev = next;
    }
    Err(Error::Convergence { deltas: history })
}

/// Arithmetic used for tensor-grid evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    Double,
    DoubleDouble,
    /// Double precision unless the rounding bound of a term exceeds a
    /// hundredth of the tolerance, then double-double.
    #[default]
    Auto,
}

/// All contours and numerical settings for one computation.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourPlan {
    /// `C_r` about the origin.
    pub small: CircleContour,
    /// `C_R` about the origin (also the Nyström contour).
    pub large: CircleContour,
    /// `Γ_{0,τ}` radii for the largest block length prepared.
    pub nested: NestedTwoCenterContour,
    pub nested_nodes: usize,
    /// Node count of the λ circle; its geometry depends on `m`.
    pub lambda_circle: CircleContour,
    pub tolerance: f64,
    pub max_doublings: usize,
    pub budget: u64,
    pub precision: Precision,
}

pub const DEFAULT_NODES: usize = 64;
pub const DEFAULT_NESTED_NODES: usize = 32;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

impl ContourPlan {
    /// Defaults: `r = min(p,1)/2`, `R = max(3, 3/q)`, 64 nodes per circle.
    /// Contours that need `p = 0` or `q = 0` excluded are replaced by unit
    /// placeholders and rejected later by the routines that use them.
    pub fn for_params(params: &Params) -> Result<Self> {
        let (p, q) = (params.p_f64(), params.q_f64());
        let origin = Complex64::new(0.0, 0.0);
        let small = CircleContour::new(origin, if p > 0.0 { p.min(1.0) / 2.0 } else { 0.5 }, DEFAULT_NODES)?;
        let large = CircleContour::new(origin, if q > 0.0 { (3.0f64).max(3.0 / q) } else { 3.0 }, DEFAULT_NODES)?;
        let nested = if p > 0.0 && q > 0.0 && p != q {
            NestedTwoCenterContour::for_params(1, params)?
        } else {
            NestedTwoCenterContour { radii: vec![0.1], tau: if q > 0.0 { p / q } else { f64::INFINITY } }
        };
        let lambda_circle = CircleContour::new(Complex64::new(1.0, 0.0), 0.5, DEFAULT_NODES)?;
        Ok(ContourPlan {
            small,
            large,
            nested,
            nested_nodes: DEFAULT_NESTED_NODES,
            lambda_circle,
            tolerance: DEFAULT_TOLERANCE,
            max_doublings: 4,
            budget: budget_from_env(),
            precision: Precision::Auto,
        })
    }

    pub fn with_small_nodes(mut self, nodes: usize) -> Self {
        self.small.nodes = nodes;
        self
    }

    pub fn with_large_nodes(mut self, nodes: usize) -> Self {
        self.large.nodes = nodes;
        self
    }

    /// Sets every per-circle node count that `--nodes` controls.
    pub fn with_nodes(mut self, nodes: usize) -> Result<Self> {
        self.small = self.small.with_nodes(nodes)?;
        self.large = self.large.with_nodes(nodes)?;
        self.lambda_circle = self.lambda_circle.with_nodes(nodes)?;
        Ok(self)
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        CircleContour::new(self.small.center, self.small.radius, self.small.nodes)?;
        CircleContour::new(self.large.center, self.large.radius, self.large.nodes)?;
        CircleContour::new(self.lambda_circle.center, self.lambda_circle.radius, self.lambda_circle.nodes)?;
        if !(self.tolerance > 0.0) {
            return Err(Error::Contour("tolerance must be positive".into()));
        }
        if self.nested_nodes < 8 {
            return Err(Error::Contour("nested circles need at least 8 nodes".into()));
        }
        Ok(())
    }
}
