use bregtik::problems::ProblemSpec;
use bregtik::solver::{self, TikhonovProblem};
use serde::Serialize;

use super::Context;
use crate::config::{self, SolveConfig};
use crate::error::CliError;
use crate::output::{num, Provenance, Report};

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub problem: &'static str,
    pub penalty: &'static str,
    pub grid_n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub tolerance: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    pub residual: f64,
    pub penalty_value: f64,
    pub solution_csv: String,
}

pub fn run(ctx: &Context) -> Result<bool, CliError> {
    let loaded = config::load::<SolveConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    if !(cfg.delta >= 0.0) {
        return Err(CliError::Config(format!("delta {} must be nonnegative", cfg.delta)));
    }
    let spec: ProblemSpec<f64> = cfg.problem.build(config::penalty_or_default(&cfg.penalty)?)?;
    let y = spec.noisy_data(cfg.delta, seed)?;
    let prob = TikhonovProblem::new(&spec.op, spec.penalty, &y, cfg.alpha)?;
    let tol = match cfg.tol {
        Some(t) => t,
        None => prob.default_tolerance()?,
    };
    let sol = solver::solve(&prob, &spec.default_start(), tol, cfg.max_iter)?;
    let u = &sol.minimizer;

    let rows: Vec<Vec<String>> =
        u.points().iter().zip(u.values()).enumerate().map(|(i, (&x, &v))| vec![i.to_string(), num(x), num(v)]).collect();
    let csv_path = ctx.out.write_csv("solution.csv", &["index", "x", "u"], &rows)?;

    let summary = SolveSummary {
        problem: spec.name,
        penalty: spec.penalty.name(),
        grid_n: spec.grid_n,
        alpha: cfg.alpha,
        delta: cfg.delta,
        tolerance: tol,
        objective: sol.objective_value,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        converged: sol.converged,
        restarts: sol.restarts,
        residual: spec.op.apply(u)?.sub(&y)?.norm(),
        penalty_value: spec.penalty.eval(u)?,
        solution_csv: "solution.csv".into(),
    };
    println!(
        "{} alpha {:e}: objective {:.6e}, kkt {:.3e}, {} iterations, converged {}",
        spec.name, cfg.alpha, sol.objective_value, sol.kkt_residual, sol.iterations, sol.converged
    );
    let report = Report { provenance: Provenance::new("solve", seed, &loaded.text), passed: sol.converged, result: summary };
    let json_path = ctx.out.write_json("solve.json", &report)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    if !sol.converged {
        eprintln!("solver did not reach tolerance {tol:e}; output is partial");
    }
    Ok(sol.converged)
}
