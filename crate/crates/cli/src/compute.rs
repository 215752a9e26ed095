//! Evaluates a configured grid of block queries with several methods.

use std::collections::BTreeMap;
use std::time::Instant;

use asep_blocks::contour::ContourPlan;
use asep_blocks::finite::{block_probs, transition_prob, BlockQuery, Method, ParticleConfig, ProbabilityEstimate};
use asep_blocks::fredholm::{remark_l1_prob, step_series_probs, theorem3_probs, LambdaMode};
use asep_blocks::oracle::{exact_transition_prob, mc_block_histogram, step_truncation, uniformization_dist, Window};
use asep_blocks::weights::Params;
use asep_blocks::{Error, Result};

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Instance {
    pub x: i64,
    pub m: usize,
    pub l: usize,
    pub t: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub estimate: ProbabilityEstimate,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub instance: Instance,
    pub cells: BTreeMap<Method, Cell>,
}

pub fn plan_for(cfg: &RunConfig, params: &Params) -> Result<ContourPlan> {
    let mut plan = ContourPlan::for_params(params)?.with_tolerance(cfg.tol).with_precision(cfg.precision);
    if let Some(n) = cfg.nodes {
        plan = plan.with_nodes(n)?;
    }
    Ok(plan)
}

pub fn instances(cfg: &RunConfig) -> Result<Vec<Instance>> {
    let (lo, hi) = cfg.x_range().map_err(|e| Error::Parameter(e.0))?;
    let mut out = Vec::new();
    for &t in &cfg.t {
        for &l in &cfg.l {
            for &m in &cfg.m {
                for x in lo..=hi {
                    BlockQuery::new(x, m, l, t)?;
                    out.push(Instance { x, m, l, t });
                }
            }
        }
    }
    Ok(out)
}

fn query(i: &Instance) -> BlockQuery {
    BlockQuery { x: i.x, m: i.m, l: i.l, t: i.t }
}

fn finite_only(y: &ParticleConfig, method: Method) -> Result<&[i64]> {
    y.positions().ok_or_else(|| Error::Parameter(format!("method {method} needs a finite initial configuration")))
}

fn step_only(y: &ParticleConfig, method: Method) -> Result<()> {
    if y.is_step() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("method {method} is for step initial condition")))
    }
}

/// Values for every instance and method, in instance order.
pub fn compute(cfg: &RunConfig, methods: &[Method], params: &Params) -> Result<Vec<Row>> {
    let insts = instances(cfg)?;
    let plan = plan_for(cfg, params)?;
    let mut rows: Vec<Row> = insts.iter().map(|&instance| Row { instance, cells: BTreeMap::new() }).collect();
    let ts: Vec<f64> = cfg.t.clone();
    for &method in methods {
        for &t in &ts {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].instance.t == t).collect();
            let batch: Vec<Instance> = idx.iter().map(|&i| rows[i].instance).collect();
            let start = Instant::now();
            let values = run_batch(cfg, method, t, &batch, params, &plan)?;
            let per = start.elapsed().as_secs_f64() * 1e3 / batch.len().max(1) as f64;
            for (&i, estimate) in idx.iter().zip(values) {
                rows[i].cells.insert(method, Cell { estimate, runtime_ms: per });
            }
        }
    }
    Ok(rows)
}

fn run_batch(cfg: &RunConfig, method: Method, t: f64, batch: &[Instance], params: &Params, plan: &ContourPlan) -> Result<Vec<ProbabilityEstimate>> {
    let y = &cfg.y;
    let mode = if cfg.enclose_zero { LambdaMode::EncloseZero } else { LambdaMode::ExcludeZero };
    match method {
        Method::Thm1 | Method::Thm2 | Method::M2Direct => {
            finite_only(y, method)?;
            let qs: Vec<BlockQuery> = batch.iter().map(query).collect();
            block_probs(y, &qs, method, params, plan)
        }
        Method::Transition => {
            let pos = finite_only(y, method)?;
            batch
                .iter()
                .map(|i| {
                    if i.m != 1 || i.l != pos.len() {
                        return Err(Error::Parameter("the transition method covers only m = 1, L = N".into()));
                    }
                    let x = ParticleConfig::finite((0..pos.len() as i64).map(|k| i.x + k).collect())?;
                    transition_prob(y, &x, t, params, plan)
                })
                .collect()
        }
        Method::Uniformization => {
            let pos = finite_only(y, method)?;
            for i in batch {
                query(i).check_against(pos.len())?;
            }
            let dist = uniformization_dist(pos, Window::default_for(pos, t)?, t, params, cfg.oracle_tol)?;
            Ok(batch
                .iter()
                .map(|i| {
                    let q = query(i);
                    ProbabilityEstimate {
                        value: dist.event_prob(|s| asep_blocks::finite::block_event(s, &q)),
                        abs_error: dist.leak + dist.tail,
                        method,
                    }
                })
                .collect())
        }
        Method::Mc => {
            let xs = (batch.iter().map(|i| i.x).min().unwrap_or(0), batch.iter().map(|i| i.x).max().unwrap_or(0));
            let mut ms: Vec<usize> = batch.iter().map(|i| i.m).collect();
            ms.sort();
            ms.dedup();
            let mut ls: Vec<usize> = batch.iter().map(|i| i.l).collect();
            ls.sort();
            ls.dedup();
            let n_tr = step_truncation(xs.1, ms.last().copied().unwrap_or(1), ls.last().copied().unwrap_or(1), t);
            let run = mc_block_histogram(y, xs, &ms, &ls, t, params, cfg.samples, cfg.seed, n_tr)?;
            Ok(batch.iter().map(|i| run.estimate(i.x, i.m, i.l)).collect())
        }
        Method::Thm3 | Method::Series => {
            step_only(y, method)?;
            let mut out = Vec::with_capacity(batch.len());
            let mut cache: BTreeMap<(i64, usize), BTreeMap<usize, ProbabilityEstimate>> = BTreeMap::new();
            for i in batch {
                if !cache.contains_key(&(i.x, i.l)) {
                    let mut ms: Vec<usize> = batch.iter().filter(|j| j.x == i.x && j.l == i.l).map(|j| j.m).collect();
                    ms.sort();
                    ms.dedup();
                    let vals: Vec<ProbabilityEstimate> = if method == Method::Thm3 {
                        theorem3_probs(i.x, i.l, t, &ms, params, plan, mode)?
                    } else {
                        step_series_probs(i.x, i.l, t, &ms, params, plan, cfg.series_k)?.into_iter().map(|s| s.estimate).collect()
                    };
                    cache.insert((i.x, i.l), ms.into_iter().zip(vals).collect());
                }
                out.push(cache[&(i.x, i.l)][&i.m]);
            }
            Ok(out)
        }
        Method::Remark => {
            step_only(y, method)?;
            batch.iter().map(|i| remark_l1_prob(&query(i), params, plan)).collect()
        }
    }
}

/// Transition probabilities `P(X, t | Y)` for every `t`.
pub fn transition_rows(cfg: &RunConfig, x: &ParticleConfig, methods: &[Method], params: &Params) -> Result<Vec<(f64, BTreeMap<Method, Cell>)>> {
    let plan = plan_for(cfg, params)?;
    let y = finite_only(&cfg.y, Method::Transition)?;
    let xs = finite_only(x, Method::Transition)?;
    let mut rows = Vec::new();
    for &t in &cfg.t {
        let mut cells = BTreeMap::new();
        for &method in methods {
            let start = Instant::now();
            let estimate = match method {
                Method::Transition => transition_prob(&cfg.y, x, t, params, &plan)?,
                Method::Uniformization => exact_transition_prob(y, xs, t, params, cfg.oracle_tol)?,
                other => return Err(Error::Parameter(format!("method {other} does not compute transition probabilities"))),
            };
            cells.insert(method, Cell { estimate, runtime_ms: start.elapsed().as_secs_f64() * 1e3 });
        }
        rows.push((t, cells));
    }
    Ok(rows)
}
