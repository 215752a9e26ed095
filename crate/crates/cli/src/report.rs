//! CSV and JSON emission, identity suite and comparison reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use asep_blocks::algebra::{subset_qsum_identity_check, CheckReport};
use asep_blocks::finite::{Method, ParticleConfig};
use asep_blocks::weights::{
    probe_inversion_conjecture, verify_appendix_b_sum, verify_degeneration, verify_identity_1l_with, verify_identity_2l, verify_lemma, Params,
    Perturbation,
};
use asep_blocks::Result;

use crate::compute::{plan_for, Cell, Instance, Row};
use crate::config::RunConfig;
use crate::Failure;

/// Seventeen significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn sidecar_path(out: &Path) -> PathBuf {
    if out.extension().is_some_and(|e| e == "json") {
        out.with_extension("meta.json")
    } else {
        out.with_extension("json")
    }
}

fn instance_json(i: &Instance) -> Value {
    json!({ "x": i.x, "m": i.m, "L": i.l, "t": i.t })
}

fn plan_json(cfg: &RunConfig, params: &Params) -> Value {
    match plan_for(cfg, params) {
        Ok(plan) => json!({
            "small_radius": plan.small.radius,
            "small_nodes": plan.small.nodes,
            "large_radius": plan.large.radius,
            "large_nodes": plan.large.nodes,
            "nested_nodes": plan.nested_nodes,
            "tolerance": plan.tolerance,
            "precision": format!("{:?}", plan.precision),
            "budget": plan.budget,
        }),
        Err(e) => json!({ "unavailable": e.to_string() }),
    }
}

fn metadata(cfg: &RunConfig, command: &str, params: &Params, elapsed: Duration, results: Vec<Value>) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.to_text(),
        "params": { "p": params.to_string(), "q": params.q().to_string(), "p_input": cfg.p },
        "plan": plan_json(cfg, params),
        "workers": rayon::current_num_threads(),
        "timing_ms": elapsed.as_secs_f64() * 1e3,
        "results": results,
    })
}

fn write_outputs(cfg: &RunConfig, csv_bytes: Vec<u8>, meta: &Value) -> std::result::Result<(), Failure> {
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, &csv_bytes)?;
            std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta).expect("json") + "\n")?;
        }
        None => std::io::stdout().write_all(&csv_bytes)?,
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> Failure {
    Failure::Config(format!("csv: {e}"))
}

/// Wide CSV: one row per `(x, m, L, t)`, a value and an error column per method.
pub fn emit_block(cfg: &RunConfig, command: &str, methods: &[Method], params: &Params, rows: &[Row], elapsed: Duration) -> std::result::Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["x".to_string(), "m".into(), "L".into(), "t".into()];
    for m in methods {
        header.push(m.name().to_string());
        header.push(format!("{}_abs_error", m.name()));
    }
    w.write_record(&header).map_err(csv_error)?;
    let mut results = Vec::new();
    for row in rows {
        let i = row.instance;
        let mut rec = vec![i.x.to_string(), i.m.to_string(), i.l.to_string(), format!("{:?}", i.t)];
        for m in methods {
            let c = row.cells[m];
            rec.push(fmt17(c.estimate.value));
            rec.push(fmt17(c.estimate.abs_error));
            results.push(json!({
                "instance": instance_json(&i),
                "method": m.name(),
                "value": c.estimate.value,
                "abs_error": c.estimate.abs_error,
                "runtime_ms": c.runtime_ms,
            }));
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Config(format!("csv: {e}")))?;
    write_outputs(cfg, bytes, &metadata(cfg, command, params, elapsed, results))
}

pub fn emit_transition(
    cfg: &RunConfig,
    x: &ParticleConfig,
    methods: &[Method],
    params: &Params,
    rows: &[(f64, BTreeMap<Method, Cell>)],
    elapsed: Duration,
) -> std::result::Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    for m in methods {
        header.push(m.name().to_string());
        header.push(format!("{}_abs_error", m.name()));
    }
    w.write_record(&header).map_err(csv_error)?;
    let mut results = Vec::new();
    for (t, cells) in rows {
        let mut rec = vec![format!("{t:?}")];
        for m in methods {
            let c = cells[m];
            rec.push(fmt17(c.estimate.value));
            rec.push(fmt17(c.estimate.abs_error));
            results.push(json!({
                "instance": { "y": cfg.y.to_string(), "x": x.to_string(), "t": t },
                "method": m.name(),
                "value": c.estimate.value,
                "abs_error": c.estimate.abs_error,
                "runtime_ms": c.runtime_ms,
            }));
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Config(format!("csv: {e}")))?;
    write_outputs(cfg, bytes, &metadata(cfg, "transition-prob", params, elapsed, results))
}

pub fn emit_json(cfg: &RunConfig, value: &Value) -> std::result::Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json") + "\n";
    match &cfg.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub struct IdentityOutcome {
    pub json: Value,
    pub passed: bool,
}

fn check_row(kind: &str, r: &CheckReport, conjecture: bool) -> Value {
    let status = match (conjecture, r.passed()) {
        (true, true) => "CONJECTURE",
        (true, false) => "CONJECTURE-FAIL",
        (false, true) => "PASS",
        (false, false) => "FAIL",
    };
    json!({
        "kind": kind,
        "name": r.name,
        "status": status,
        "cases": r.cases,
        "failures": r.failures,
        "max_residual": r.max_residual,
        "notes": r.notes,
    })
}

/// Runs the exact identity suite over `N ≤ n_max`, `L ≤ l_max`.
pub fn identities(cfg: &RunConfig) -> std::result::Result<IdentityOutcome, Failure> {
    let params = cfg.params()?;
    let tau = params.tau()?;
    let (trials, seed) = (cfg.trials, cfg.seed);
    let perturb = if cfg.corrupt { Perturbation::DoubleFirstSummand } else { Perturbation::None };
    let mut rows = Vec::new();
    let mut passed = true;
    let mut push = |kind: &str, r: Result<CheckReport>, conjecture: bool| -> std::result::Result<(), Failure> {
        let r = r?;
        if !conjecture && !r.passed() {
            passed = false;
        }
        rows.push(check_row(kind, &r, conjecture));
        Ok(())
    };
    for n in 1..=cfg.n_max {
        for l in 1..=n.min(cfg.l_max) {
            push("identity_1L", verify_identity_1l_with(n, l, &params, trials, seed, perturb), false)?;
            for m in 0..=n - l {
                push("identity_2L", verify_identity_2l(n, l, m, &params, trials, seed), false)?;
            }
            if n >= 2 {
                push("degeneration", verify_degeneration(n, l, &params, trials, seed), false)?;
            }
            for m in 1..=n + 1 - l {
                for size in l..=n {
                    push("appendix_b", verify_appendix_b_sum(n, l, m, size, &params), false)?;
                }
            }
            push("inversion_probe", probe_inversion_conjecture(n, l, &params, trials, seed), true)?;
        }
        for k in 0..=n {
            push("subset_qsum", subset_qsum_identity_check(n, k, &tau), false)?;
        }
    }
    for m in 1..=cfg.m_max.min(6) {
        push("lemma", verify_lemma(m, &params, trials, seed), false)?;
    }
    let json = json!({
        "params": { "p": params.to_string() },
        "n_max": cfg.n_max,
        "l_max": cfg.l_max,
        "trials": trials,
        "passed": passed,
        "checks": rows,
    });
    Ok(IdentityOutcome { json, passed })
}

pub struct Comparison {
    pub json: Value,
    pub passed: bool,
    pub pairs: usize,
    pub max_abs_diff: f64,
    pub max_abs_z: f64,
}

/// Pairwise differences. A pair with Monte Carlo passes when `|z| ≤ max_z`
/// (standard error floored at `1/samples`); a pair with the series passes
/// within `tol` plus its truncation estimate; other pairs within `tol`.
pub fn compare(cfg: &RunConfig, methods: &[Method], rows: &[Row]) -> Comparison {
    let mut out = Vec::new();
    let (mut passed, mut pairs, mut max_abs_diff, mut max_abs_z) = (true, 0, 0.0f64, 0.0f64);
    let floor = 1.0 / cfg.samples.max(1) as f64;
    for row in rows {
        for (ia, a) in methods.iter().enumerate() {
            for b in &methods[ia + 1..] {
                let (ca, cb) = (row.cells[a].estimate, row.cells[b].estimate);
                let diff = ca.value - cb.value;
                let rel = diff.abs() / ca.value.abs().max(cb.value.abs()).max(f64::MIN_POSITIVE);
                let mc = if *a == Method::Mc { Some(ca) } else if *b == Method::Mc { Some(cb) } else { None };
                let (ok, z) = if let Some(mc) = mc {
                    let se = (mc.abs_error / 4.0).max(floor);
                    let z = diff / se;
                    (z.abs() <= cfg.max_z, Some(z))
                } else {
                    let slack = [ca, cb].iter().filter(|e| e.method == Method::Series).map(|e| e.abs_error).sum::<f64>();
                    (diff.abs() <= cfg.compare_tol + slack, None)
                };
                pairs += 1;
                passed &= ok;
                max_abs_diff = max_abs_diff.max(diff.abs());
                if let Some(z) = z {
                    max_abs_z = max_abs_z.max(z.abs());
                }
                out.push(json!({
                    "instance": instance_json(&row.instance),
                    "methods": [a.name(), b.name()],
                    "values": [ca.value, cb.value],
                    "abs_errors": [ca.abs_error, cb.abs_error],
                    "abs_diff": diff.abs(),
                    "rel_diff": rel,
                    "z": z,
                    "pass": ok,
                }));
            }
        }
    }
    let json = json!({
        "tolerance": cfg.compare_tol,
        "max_z": cfg.max_z,
        "pairs": pairs,
        "max_abs_diff": max_abs_diff,
        "max_abs_z": max_abs_z,
        "passed": passed,
        "rows": out,
    });
    Comparison { json, passed, pairs, max_abs_diff, max_abs_z }
}
