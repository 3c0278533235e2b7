use bregtik::iteration::{self, IterationConfig, IterationTrace, StopReason, TraceSummary};
use bregtik::problems::ProblemSpec;
use serde::Serialize;

use super::Context;
use crate::config::{self, IterateConfig};
use crate::error::CliError;
use crate::output::{num, Provenance, Report};

#[derive(Debug, Clone, Serialize)]
pub struct IterateResult {
    pub problem: &'static str,
    pub penalty: &'static str,
    pub grid_n: usize,
    pub stop_index: Option<usize>,
    pub stop_reason: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub trace_csv: String,
    pub trace: TraceSummary<f64>,
}

fn to_config(cfg: &IterateConfig) -> IterationConfig<f64> {
    let a0 = cfg.schedule.raw(0);
    IterationConfig {
        schedule: cfg.schedule,
        alpha_lower: cfg.alpha_lower.unwrap_or(match cfg.schedule {
            iteration::AlphaSchedule::Constant { alpha0 } => alpha0,
            iteration::AlphaSchedule::Geometric { alpha0, ratio } => alpha0 * ratio.powi(cfg.max_outer.min(i32::MAX as usize) as i32),
        }),
        alpha_upper: cfg.alpha_upper.unwrap_or(a0),
        tau: cfg.tau,
        delta: cfg.delta,
        max_outer: cfg.max_outer,
        inner_tol: cfg.inner_tol,
        inner_max_iter: cfg.inner_max_iter,
        eta: cfg.eta,
        gamma: cfg.gamma,
        rho: cfg.rho,
    }
}

fn rows(trace: &IterationTrace<f64>, spec: &ProblemSpec<f64>) -> Result<Vec<Vec<String>>, CliError> {
    trace
        .iterates
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let d = spec.penalty.bregman_value(&r.xi, &spec.ubar_true, &r.u)?;
            Ok(vec![k.to_string(), num(r.alpha), num(r.residual), num(d), r.inner_iterations.to_string(), num(r.inner_kkt)])
        })
        .collect()
}

pub fn run(ctx: &Context) -> Result<bool, CliError> {
    let loaded = config::load::<IterateConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let spec: ProblemSpec<f64> = cfg.problem.build(config::penalty_or_default(&cfg.penalty)?)?;
    let icfg = to_config(cfg);
    for w in icfg.validate()? {
        eprintln!("warning: {w}");
    }
    let y = spec.noisy_data(cfg.delta, seed)?;
    let u0 = spec.default_start();
    let xi0 = spec.penalty.subgradient(&u0)?;
    let (trace, failure) = match iteration::run(&spec.op, &spec.penalty, &y, &icfg, &u0, &xi0) {
        Ok(t) => (t, None),
        Err(f) => (f.trace, Some(f.source.to_string())),
    };

    let header = ["k", "alpha_k", "residual_k", "bregman_to_truth", "inner_iterations", "inner_kkt"];
    let csv_path = ctx.out.write_csv("iterate.csv", &header, &rows(&trace, &spec)?)?;
    let passed = failure.is_none();
    let result = IterateResult {
        problem: spec.name,
        penalty: spec.penalty.name(),
        grid_n: spec.grid_n,
        stop_index: trace.stop_index,
        stop_reason: trace.stop_reason,
        failure: failure.clone(),
        trace_csv: "iterate.csv".into(),
        trace: trace.summary(),
    };
    let report = Report { provenance: Provenance::new("iterate", seed, &loaded.text), passed, result };
    let json_path = ctx.out.write_json("iterate.json", &report)?;
    match trace.stop_index {
        Some(k) => println!("{}: stopped at k* = {k} ({:?}), residual {:.6e}", spec.name, trace.stop_reason, trace.iterates[k].residual),
        None => println!("{}: no stop after {} steps ({:?})", spec.name, trace.iterates.len() - 1, trace.stop_reason),
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    if let Some(f) = failure {
        eprintln!("iteration failed after {} steps: {f}", trace.iterates.len() - 1);
    }
    Ok(passed)
}
