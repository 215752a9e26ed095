//! Formula-independent ground truth: the master equation on a finite window
//! solved by uniformization, and exact event-driven simulation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finite::{block_event, BlockQuery, Method, ParticleConfig, ProbabilityEstimate};
use crate::weights::Params;

/// Largest state space the window solver accepts.
pub const MAX_STATES: u64 = 2_000_000;
/// Samples per RNG stream; streams are keyed by `(seed, chunk index)`.
pub const CHUNK: u64 = 4096;

/// Integer interval `[lo, hi]` of sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if hi < lo {
            return Err(Error::Domain(format!("empty window [{lo}, {hi}]")));
        }
        Ok(Window { lo, hi })
    }

    /// `[y_1 − ⌈8t⌉ − 8, y_N + ⌈8t⌉ + 8]`.
    pub fn default_for(y: &[i64], t: f64) -> Result<Self> {
        let (first, last) = match (y.first(), y.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Domain("empty configuration".into())),
        };
        let pad = (8.0 * t).ceil() as i64 + 8;
        Window::new(first - pad, last + pad)
    }

    pub fn width(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }
}

/// All strictly increasing `N`-tuples in a window, indexed by their colex
/// rank. Moves that leave the window are exits.
#[derive(Clone, Debug)]
pub struct WindowChain {
    pub window: Window,
    pub n: usize,
    p: f64,
    q: f64,
    /// `binom[c * (n + 1) + k] = C(c, k)`.
    binom: Vec<u64>,
    /// Offsets from `window.lo`, `n` per state.
    states: Vec<u32>,
}

/// One generator entry leaving a state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Move {
    To { state: usize, rate: f64 },
    Exit { rate: f64 },
}

impl WindowChain {
    pub fn new(window: Window, n: usize, params: &Params) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("no particles".into()));
        }
        let w = window.width();
        if n > w {
            return Err(Error::Domain(format!("{n} particles do not fit in {w} sites")));
        }
        let mut binom = vec![0u64; (w + 1) * (n + 1)];
        for c in 0..=w {
            binom[c * (n + 1)] = 1;
            for k in 1..=n.min(c) {
                let a = binom[(c - 1) * (n + 1) + k - 1];
                let b = if k <= c - 1 { binom[(c - 1) * (n + 1) + k] } else { 0 };
                binom[c * (n + 1) + k] = a.saturating_add(b);
            }
        }
        let count = binom[w * (n + 1) + n];
        if count > MAX_STATES {
            return Err(Error::Resource(format!("C({w}, {n}) = {count} states exceed the cap {MAX_STATES}")));
        }
        let mut chain = WindowChain { window, n, p: params.p_f64(), q: params.q_f64(), binom, states: vec![0; count as usize * n] };
        let mut c: Vec<u32> = (0..n as u32).collect();
        loop {
            let r = chain.rank_offsets(&c);
            chain.states[r * n..(r + 1) * n].copy_from_slice(&c);
            // next combination in lex order
            let mut i = n;
            loop {
                if i == 0 {
                    return Ok(chain);
                }
                i -= 1;
                if (c[i] as usize) < w - n + i {
                    break;
                }
            }
            c[i] += 1;
            for j in i + 1..n {
                c[j] = c[j - 1] + 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn choose(&self, c: usize, k: usize) -> u64 {
        if k > c {
            0
        } else {
            self.binom[c * (self.n + 1) + k]
        }
    }

    fn rank_offsets(&self, c: &[u32]) -> usize {
        c.iter().enumerate().map(|(i, &ci)| self.choose(ci as usize, i + 1)).sum::<u64>() as usize
    }

    /// Index of a configuration, if it lies in the window.
    pub fn index_of(&self, positions: &[i64]) -> Option<usize> {
        if positions.len() != self.n || positions.windows(2).any(|w| w[0] >= w[1]) {
            return None;
        }
        if positions[0] < self.window.lo || positions[self.n - 1] > self.window.hi {
            return None;
        }
        let c: Vec<u32> = positions.iter().map(|&x| (x - self.window.lo) as u32).collect();
        Some(self.rank_offsets(&c))
    }

    pub fn state(&self, index: usize) -> Vec<i64> {
        self.states[index * self.n..(index + 1) * self.n].iter().map(|&c| self.window.lo + c as i64).collect()
    }

    /// Off-diagonal generator entries of a state (the diagonal is minus
    /// their sum).
    pub fn moves(&self, index: usize, out: &mut Vec<Move>) {
        out.clear();
        let n = self.n;
        let w = self.window.width() as u32;
        let c = &self.states[index * n..(index + 1) * n];
        for i in 0..n {
            let ci = c[i];
            let k = i + 1;
            let right_free = if i + 1 < n { c[i + 1] != ci + 1 } else { true };
            let left_free = if i > 0 { c[i - 1] + 1 != ci } else { true };
            if right_free && self.p > 0.0 {
                if ci + 1 >= w {
                    out.push(Move::Exit { rate: self.p });
                } else {
                    let r = index as u64 + self.choose(ci as usize + 1, k) - self.choose(ci as usize, k);
                    out.push(Move::To { state: r as usize, rate: self.p });
                }
            }
            if left_free && self.q > 0.0 {
                if ci == 0 {
                    out.push(Move::Exit { rate: self.q });
                } else {
                    let r = index as u64 + self.choose(ci as usize - 1, k) - self.choose(ci as usize, k);
                    out.push(Move::To { state: r as usize, rate: self.q });
                }
            }
        }
    }

    /// Exhaustive generator check: off-diagonal rates in `{p, q}`, targets
    /// are valid exclusion states differing by one unit step, and row sums
    /// are `≤ 0` with equality iff no exit is possible.
    pub fn check_generator(&self) -> Result<()> {
        let mut moves = Vec::new();
        for s in 0..self.len() {
            let from = self.state(s);
            self.moves(s, &mut moves);
            let mut exit = 0.0;
            for mv in &moves {
                match *mv {
                    Move::To { state, rate } => {
                        if rate != self.p && rate != self.q {
                            return Err(Error::Evaluation(format!("rate {rate} from {from:?}")));
                        }
                        let to = self.state(state);
                        if to.windows(2).any(|w| w[0] >= w[1]) {
                            return Err(Error::Evaluation(format!("exclusion violated: {to:?}")));
                        }
                        let diff: Vec<i64> = from.iter().zip(&to).map(|(a, b)| b - a).filter(|d| *d != 0).collect();
                        let step_ok = match diff.as_slice() {
                            [1] => rate == self.p,
                            [-1] => rate == self.q,
                            _ => false,
                        };
                        if !step_ok {
                            return Err(Error::Evaluation(format!("{from:?} → {to:?} at rate {rate} is not a single step")));
                        }
                    }
                    Move::Exit { rate } => exit += rate,
                }
            }
            let mut expected = 0.0;
            if from[0] == self.window.lo {
                expected += self.q;
            }
            if from[self.n - 1] == self.window.hi {
                expected += self.p;
            }
            if exit != expected {
                return Err(Error::Evaluation(format!("exit rate {exit} at {from:?}, expected {expected}")));
            }
        }
        Ok(())
    }
}

/// Transient distribution on a window.
#[derive(Clone, Debug)]
pub struct WindowDist {
    pub chain: WindowChain,
    pub probs: Vec<f64>,
    /// Probability carried by paths that left the window.
    pub leak: f64,
    /// Poisson mass beyond the truncation point.
    pub tail: f64,
}

impl WindowDist {
    pub fn prob_of(&self, positions: &[i64]) -> f64 {
        self.chain.index_of(positions).map_or(0.0, |i| self.probs[i])
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Sum of the probabilities of states satisfying `event`.
    pub fn event_prob(&self, event: impl Fn(&[i64]) -> bool) -> f64 {
        (0..self.probs.len()).filter(|&s| self.probs[s] != 0.0 && event(&self.chain.state(s))).map(|s| self.probs[s]).sum()
    }
}

/// `P(t) = Σ_k e^{−Λt}(Λt)^k/k! P̂^k P(0)` with `P̂ = I + G/Λ`, `Λ = N`,
/// truncated when the Poisson tail drops below `tol`.
pub fn uniformization_dist(y: &[i64], window: Window, t: f64, params: &Params, tol: f64) -> Result<WindowDist> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("time {t} must be finite and non-negative")));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol} must be positive")));
    }
    let chain = WindowChain::new(window, y.len(), params)?;
    let start = chain.index_of(y).ok_or_else(|| Error::Domain(format!("{y:?} is not an increasing configuration inside the window")))?;
    let ns = chain.len();
    let lambda = chain.n as f64;
    let mut v = vec![0.0; ns];
    v[start] = 1.0;
    let mut out = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut weight = (-lambda * t).exp();
    let mut cum = 0.0;
    let mut lost = 0.0;
    let mut leak = 0.0;
    let mut moves = Vec::new();
    let mut k = 0u64;
    loop {
        for s in 0..ns {
            out[s] += weight * v[s];
        }
        cum += weight;
        leak += weight * lost;
        let tail = 1.0 - cum;
        if tail < tol && (k as f64) >= lambda * t {
            return Ok(WindowDist { chain, probs: out, leak, tail: tail.max(0.0) });
        }
        if k > 10_000_000 {
            return Err(Error::Resource("uniformization did not reach the tolerance".into()));
        }
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..ns {
            let vs = v[s];
            if vs == 0.0 {
                continue;
            }
            chain.moves(s, &mut moves);
            let mut stay = 1.0;
            for mv in &moves {
                match *mv {
                    Move::To { state, rate } => {
                        next[state] += vs * rate / lambda;
                        stay -= rate / lambda;
                    }
                    Move::Exit { rate } => {
                        lost += vs * rate / lambda;
                        stay -= rate / lambda;
                    }
                }
            }
            next[s] += vs * stay;
        }
        std::mem::swap(&mut v, &mut next);
        k += 1;
        weight *= lambda * t / k as f64;
    }
}

/// Block probability from the window solver; `abs_error = leak + tail`.
pub fn exact_block_prob(y: &ParticleConfig, q: &BlockQuery, params: &Params, tol: f64) -> Result<ProbabilityEstimate> {
    let pos = y.positions().ok_or_else(|| Error::Domain("the window solver needs a finite configuration".into()))?;
    q.check_against(pos.len())?;
    let dist = uniformization_dist(pos, Window::default_for(pos, q.t)?, q.t, params, tol)?;
    let value = dist.event_prob(|s| block_event(s, q));
    Ok(ProbabilityEstimate { value, abs_error: dist.leak + dist.tail, method: Method::Uniformization })
}

/// `P(X, t | Y)` from the window solver, with `leak + tail` as error.
pub fn exact_transition_prob(y: &[i64], x: &[i64], t: f64, params: &Params, tol: f64) -> Result<ProbabilityEstimate> {
    if x.len() != y.len() {
        return Err(Error::Domain("X and Y have different particle counts".into()));
    }
    let mut lo_hi: Vec<i64> = y.iter().chain(x).copied().collect();
    lo_hi.sort();
    let w = Window::default_for(&[lo_hi[0], lo_hi[lo_hi.len() - 1]], t)?;
    let dist = uniformization_dist(y, w, t, params, tol)?;
    Ok(ProbabilityEstimate { value: dist.prob_of(x), abs_error: dist.leak + dist.tail, method: Method::Uniformization })
}

/// `P(x(t) − y = d)` for one particle: Poisson jump counts right at rate
/// `p` and left at rate `q`.
pub fn single_particle_pmf(d: i64, t: f64, params: &Params) -> f64 {
    let (p, q) = (params.p_f64(), params.q_f64());
    let pois = |k: i64, rate: f64| -> f64 {
        if k < 0 {
            return 0.0;
        }
        if rate == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        let lg: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
        (k as f64 * (rate * t).ln() - rate * t - lg).exp()
    };
    if t == 0.0 {
        return if d == 0 { 1.0 } else { 0.0 };
    }
    let mut sum = 0.0;
    let mut l = 0i64.max(-d);
    loop {
        let term = pois(l + d, p) * pois(l, q);
        sum += term;
        if l > 20 + (4.0 * t) as i64 && term < 1e-18 * sum.max(1e-300) {
            break;
        }
        if l > 10_000 {
            break;
        }
        l += 1;
    }
    sum
}

/// Exact-in-law configuration at time `t`: exponential holding times with
/// the current total rate, the move drawn proportionally to its rate.
pub fn gillespie_sample<R: Rng + ?Sized>(y: &[i64], t: f64, params: &Params, rng: &mut R) -> Vec<i64> {
    let (p, q) = (params.p_f64(), params.q_f64());
    let mut x = y.to_vec();
    let n = x.len();
    if n == 0 || t <= 0.0 {
        return x;
    }
    let rate = |x: &[i64], i: usize| -> f64 {
        let right = i + 1 == n || x[i + 1] != x[i] + 1;
        let left = i == 0 || x[i - 1] != x[i] - 1;
        (if right { p } else { 0.0 }) + (if left { q } else { 0.0 })
    };
    let mut total: f64 = (0..n).map(|i| rate(&x, i)).sum();
    let mut clock = 0.0;
    loop {
        if total <= 1e-12 {
            return x;
        }
        let hold: f64 = rng.sample(Exp1);
        clock += hold / total;
        if clock > t {
            return x;
        }
        // proportional choice by rejection: particle uniform, direction by
        // its rate, accept if the target site is free
        let (i, dir) = loop {
            let i = rng.random_range(0..n);
            let right = rng.random::<f64>() < p;
            let free = if right { i + 1 == n || x[i + 1] != x[i] + 1 } else { i == 0 || x[i - 1] != x[i] - 1 };
            if free {
                break (i, if right { 1 } else { -1 });
            }
        };
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        let before: f64 = (lo..=hi).map(|j| rate(&x, j)).sum();
        x[i] += dir;
        let after: f64 = (lo..=hi).map(|j| rate(&x, j)).sum();
        total += after - before;
    }
}

/// Graphical construction: particle `i` attempts jumps at the times of its
/// own rate-1 Poisson clock, rightward with probability `p`, and the attempt
/// is suppressed when the target is occupied. `streams` yields the random
/// source of each particle, so runs sharing streams are coupled.
pub fn clock_sample(y: &[i64], t: f64, params: &Params, mut streams: impl FnMut(usize) -> ChaCha8Rng) -> Vec<i64> {
    let p = params.p_f64();
    let mut x = y.to_vec();
    let n = x.len();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(&mut streams).collect();
    let mut next: Vec<f64> = rngs.iter_mut().map(|r| r.sample::<f64, _>(Exp1)).collect();
    loop {
        let (i, &ti) = match next.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
            Some(v) => v,
            None => return x,
        };
        if ti > t {
            return x;
        }
        let right = rngs[i].random::<f64>() < p;
        if right {
            if i + 1 == n || x[i + 1] != x[i] + 1 {
                x[i] += 1;
            }
        } else if i == 0 || x[i - 1] != x[i] - 1 {
            x[i] -= 1;
        }
        next[i] += rngs[i].sample::<f64, _>(Exp1);
    }
}

/// Step-truncation check: the same per-particle clocks drive `n_tr` and
/// `2·n_tr` particles. Returns both estimates and the number of samples
/// whose event indicator differs.
pub fn step_truncation_shift(q: &BlockQuery, params: &Params, samples: u64, seed: u64) -> Result<(ProbabilityEstimate, ProbabilityEstimate, u64)> {
    let n_tr = step_truncation(q.x, q.m, q.l, q.t);
    q.check_against(n_tr)?;
    let short: Vec<i64> = (1..=n_tr as i64).collect();
    let long: Vec<i64> = (1..=2 * n_tr as i64).collect();
    let (hits_a, hits_b, differ) = (0..samples)
        .into_par_iter()
        .map(|s| {
            let streams = |i: usize| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream((s << 24) | i as u64);
                r
            };
            let a = block_event(&clock_sample(&short, q.t, params, streams), q);
            let b = block_event(&clock_sample(&long, q.t, params, streams), q);
            (a as u64, b as u64, (a != b) as u64)
        })
        .reduce(|| (0, 0, 0), |u, v| (u.0 + v.0, u.1 + v.1, u.2 + v.2));
    let run = |hits: u64| {
        let mut tallies = BTreeMap::new();
        tallies.insert((q.x, q.m, q.l), hits);
        McRun { seed, samples, tallies }.estimate(q.x, q.m, q.l)
    };
    Ok((run(hits_a), run(hits_b), differ))
}

/// Particles simulated for step initial condition:
/// `x + L + ⌈10t⌉ + 20` (at least `m + L`).
pub fn step_truncation(x: i64, m: usize, l: usize, t: f64) -> usize {
    let base = x + l as i64 + (10.0 * t).ceil() as i64 + 20;
    (base.max(0) as usize).max(m + l)
}

/// Hit counts of block events over a batch of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct McRun {
    pub seed: u64,
    pub samples: u64,
    /// `(x, m, L) → hits`.
    pub tallies: BTreeMap<(i64, usize, usize), u64>,
}

impl McRun {
    pub fn hits(&self, x: i64, m: usize, l: usize) -> u64 {
        self.tallies.get(&(x, m, l)).copied().unwrap_or(0)
    }

    /// `√(p̂(1−p̂)/samples)`.
    pub fn std_error(&self, x: i64, m: usize, l: usize) -> f64 {
        let p = self.hits(x, m, l) as f64 / self.samples as f64;
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }

    /// Estimate with `abs_error` four standard errors, floored at
    /// `4/samples` so empty or full cells still get a band.
    pub fn estimate(&self, x: i64, m: usize, l: usize) -> ProbabilityEstimate {
        let value = self.hits(x, m, l) as f64 / self.samples as f64;
        let se = self.std_error(x, m, l).max(1.0 / self.samples as f64);
        ProbabilityEstimate { value, abs_error: 4.0 * se, method: Method::Mc }
    }
}

fn initial_positions(y: &ParticleConfig, n_tr: usize) -> Vec<i64> {
    match y {
        ParticleConfig::Finite(v) => v.clone(),
        ParticleConfig::Step => (1..=n_tr as i64).collect(),
    }
}

/// One simulation batch tallying every `(x, m, L)` with `x` in `xs`.
/// For step initial condition the first `n_tr` particles are simulated.
pub fn mc_block_histogram(y: &ParticleConfig, xs: (i64, i64), ms: &[usize], ls: &[usize], t: f64, params: &Params, samples: u64, seed: u64, n_tr: usize) -> Result<McRun> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!("time {t} must be finite and non-negative")));
    }
    if samples == 0 {
        return Err(Error::Parameter("samples must be positive".into()));
    }
    let y0 = initial_positions(y, n_tr);
    for &m in ms {
        for &l in ls {
            BlockQuery::new(xs.0, m, l, t)?.check_against(y0.len())?;
        }
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<BTreeMap<(i64, usize, usize), u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut tally = BTreeMap::new();
            for _ in 0..count {
                let s = gillespie_sample(&y0, t, params, &mut rng);
                for &m in ms {
                    let x = s[m - 1];
                    if x < xs.0 || x > xs.1 {
                        continue;
                    }
                    for &l in ls {
                        if (0..l).all(|i| s[m - 1 + i] == x + i as i64) {
                            *tally.entry((x, m, l)).or_insert(0) += 1;
                        }
                    }
                }
            }
            tally
        })
        .collect();
    let mut tallies = BTreeMap::new();
    for part in parts {
        for (k, v) in part {
            *tallies.entry(k).or_insert(0) += v;
        }
    }
    Ok(McRun { seed, samples, tallies })
}

/// Monte Carlo block probability; `abs_error` is four standard errors.
pub fn mc_block_prob(y: &ParticleConfig, q: &BlockQuery, params: &Params, samples: u64, seed: u64) -> Result<ProbabilityEstimate> {
    let n_tr = step_truncation(q.x, q.m, q.l, q.t);
    let run = mc_block_histogram(y, (q.x, q.x), &[q.m], &[q.l], q.t, params, samples, seed, n_tr)?;
    Ok(run.estimate(q.x, q.m, q.l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: i64, b: i64) -> Params {
        Params::from_ratio(a, b).unwrap()
    }

    #[test]
    fn ranks_are_a_bijection() {
        let chain = WindowChain::new(Window::new(-2, 5).unwrap(), 3, &params(7, 10)).unwrap();
        assert_eq!(chain.len(), 56);
        for s in 0..chain.len() {
            assert_eq!(chain.index_of(&chain.state(s)), Some(s));
        }
    }

    #[test]
    fn generator_is_valid_for_two_particles() {
        for w in 2..=8 {
            for (a, b) in [(7, 10), (1, 2), (1, 1), (0, 1)] {
                let chain = WindowChain::new(Window::new(0, w - 1).unwrap(), 2, &params(a, b)).unwrap();
                chain.check_generator().unwrap();
            }
        }
    }

    #[test]
    fn time_zero_is_a_point_mass() {
        let p = params(7, 10);
        let y = [0, 2, 5];
        let d = uniformization_dist(&y, Window::default_for(&y, 0.0).unwrap(), 0.0, &p, 1e-14).unwrap();
        assert_eq!(d.prob_of(&y), 1.0);
        assert_eq!(d.leak, 0.0);
    }

    #[test]
    fn single_particle_matches_series() {
        let p = params(7, 10);
        for t in [0.5, 2.0] {
            let d = uniformization_dist(&[0], Window::default_for(&[0], t).unwrap(), t, &p, 1e-15).unwrap();
            assert!(d.leak < 1e-12, "leak {}", d.leak);
            let mass = d.total_mass() + d.leak;
            assert!(mass <= 1.0 + 1e-12 && mass >= 1.0 - 1e-12);
            for x in -5..=5 {
                assert!((d.prob_of(&[x]) - single_particle_pmf(x, t, &p)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn leak_bounds_mass_defect() {
        let p = params(7, 10);
        let d = uniformization_dist(&[0, 1], Window::new(-1, 3).unwrap(), 1.0, &p, 1e-14).unwrap();
        assert!(d.leak > 1e-3);
        assert!(1.0 - d.total_mass() <= d.leak + d.tail + 1e-14);
    }

    #[test]
    fn exact_block_full_event_is_single_state() {
        let p = params(7, 10);
        let y = ParticleConfig::finite(vec![0, 2, 5]).unwrap();
        let q = BlockQuery::new(1, 1, 3, 0.5).unwrap();
        let b = exact_block_prob(&y, &q, &p, 1e-14).unwrap();
        let s = exact_transition_prob(&[0, 2, 5], &[1, 2, 3], 0.5, &p, 1e-14).unwrap();
        assert!((b.value - s.value).abs() < 1e-15);
    }

    #[test]
    fn state_cap() {
        let p = params(7, 10);
        assert!(matches!(WindowChain::new(Window::new(0, 200).unwrap(), 5, &p), Err(Error::Resource(_))));
    }

    #[test]
    fn gillespie_time_zero_and_totally_asymmetric() {
        let p = params(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(gillespie_sample(&[0, 4], 0.0, &p, &mut rng), vec![0, 4]);
        let run = mc_block_histogram(&ParticleConfig::finite(vec![0]).unwrap(), (0, 6), &[1], &[1], 1.0, &p, 100_000, 11, 1).unwrap();
        let mut fact = 1.0;
        for k in 0..=6i64 {
            if k > 0 {
                fact *= k as f64;
            }
            let pois = (-1.0f64).exp() / fact;
            let e = run.estimate(k, 1, 1);
            assert!((e.value - pois).abs() <= e.abs_error, "k={k}: {} vs {pois}", e.value);
        }
    }

    #[test]
    fn single_particle_mc_matches_series() {
        let p = params(7, 10);
        let run = mc_block_histogram(&ParticleConfig::finite(vec![0]).unwrap(), (-4, 6), &[1], &[1], 1.0, &p, 200_000, 5, 1).unwrap();
        for d in -4..=6 {
            let e = run.estimate(d, 1, 1);
            assert!((e.value - single_particle_pmf(d, 1.0, &p)).abs() <= e.abs_error);
        }
    }

    #[test]
    fn clock_construction_matches_gillespie_law() {
        let p = params(7, 10);
        let n = 40_000u64;
        let mut hits = 0u64;
        for s in 0..n {
            let x = clock_sample(&[0, 1], 0.7, &p, |i| {
                let mut r = ChaCha8Rng::seed_from_u64(21);
                r.set_stream((s << 24) | i as u64);
                r
            });
            hits += (x == vec![0, 1]) as u64;
        }
        let exact = exact_transition_prob(&[0, 1], &[0, 1], 0.7, &p, 1e-14).unwrap().value;
        let est = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((est - exact).abs() < 4.0 * se, "{est} vs {exact}");
    }

    #[test]
    fn step_truncation_is_insensitive() {
        let p = params(3, 5);
        let q = BlockQuery::new(1, 1, 1, 1.0).unwrap();
        let (a, b, differ) = step_truncation_shift(&q, &p, 20_000, 4).unwrap();
        assert!((a.value - b.value).abs() < a.abs_error / 4.0);
        assert_eq!(differ, 0);
    }

    #[test]
    fn mc_is_reproducible_and_pool_independent() {
        let p = params(3, 5);
        let go = || mc_block_histogram(&ParticleConfig::Step, (-2, 3), &[1, 2], &[1, 2], 0.3, &p, 20_000, 99, 30).unwrap();
        let a = go();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(go);
        assert_eq!(a, b);
        let t0 = mc_block_prob(&ParticleConfig::finite(vec![0, 2, 5]).unwrap(), &BlockQuery::new(2, 2, 1, 0.0).unwrap(), &p, 10_000, 1).unwrap();
        assert_eq!(t0.value, 1.0);
    }
}
