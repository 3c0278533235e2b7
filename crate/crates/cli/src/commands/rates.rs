use bregtik::operators::estimate_nonlinearity;
use bregtik::problems::ProblemSpec;
use bregtik::rates::{self, RateOptions, RateReport, SourceSetup};
use bregtik::Grid;
use serde::Serialize;

use super::Context;
use crate::config::{self, RatesConfig, SourceMethod};
use crate::error::CliError;
use crate::output::{num, opt_num, Provenance, Report};

#[derive(Debug, Clone, Serialize)]
pub struct RatesResult {
    pub problem: &'static str,
    pub penalty: &'static str,
    pub grid_n: usize,
    pub slope_tolerance: f64,
    pub slope_ok: bool,
    pub bound_violations: Vec<usize>,
    pub residual_violations: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonlinearity_estimate: Option<f64>,
    pub membership_violation: f64,
    pub rates_csv: String,
    pub report: RateReport<f64>,
}

fn build_source(cfg: &RatesConfig, spec: &ProblemSpec<f64>) -> Result<SourceSetup<f64>, CliError> {
    let s = &cfg.source;
    let omega = || -> Result<Grid, CliError> {
        s.omega.as_ref().ok_or_else(|| CliError::Config("source.omega is required for this method".into()))?.build(spec.grid_n)
    };
    let src = match s.method {
        SourceMethod::Invert => rates::construct_source(&spec.op, &spec.penalty, s.kind, &omega()?, None)?,
        SourceMethod::FromTruth => rates::source_from_solution(&spec.op, &spec.penalty, s.kind, &spec.ubar_true)?,
        SourceMethod::FixedPoint => {
            if spec.penalty != bregtik::Penalty::Quadratic {
                return Err(CliError::Config("fixed_point sources need the quadratic penalty".into()));
            }
            let norm = s.ubar_norm.ok_or_else(|| CliError::Config("source.ubar_norm is required for fixed_point".into()))?;
            rates::quadratic_fixed_point_source(&spec.op, s.kind, &omega()?, norm, s.fixed_point_iterations)?
        }
    };
    Ok(src)
}

fn rows(report: &RateReport<f64>) -> Vec<Vec<String>> {
    report
        .points
        .iter()
        .map(|p| {
            vec![
                num(p.delta),
                num(p.alpha),
                num(p.bregman_error),
                num(p.bound),
                num(p.residual),
                opt_num(p.residual_bound),
                opt_num(p.s),
                opt_num(p.s_bound),
                num(p.c_effective),
                p.iterations.to_string(),
                num(p.kkt_residual),
                p.converged.to_string(),
                p.flags.join("; "),
            ]
        })
        .collect()
}

pub fn run(ctx: &Context) -> Result<bool, CliError> {
    let loaded = config::load::<RatesConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    if !(cfg.slope_tolerance > 0.0) {
        return Err(CliError::Config(format!("slope_tolerance {} must be positive", cfg.slope_tolerance)));
    }
    let spec: ProblemSpec<f64> = cfg.problem.build(config::penalty_or_default(&cfg.penalty)?)?;
    let src = build_source(cfg, &spec)?;

    let nonlinearity = match (&cfg.nonlinearity, spec.op.is_linear()) {
        (_, true) => None,
        (Some(nl), false) => {
            let est = estimate_nonlinearity(&spec.op, &spec.penalty, &src.ubar, &src.xi, nl.radius, nl.samples, nl.seed)?;
            Some(est.c_estimate)
        }
        (None, false) => return Err(CliError::Config("nonlinear problems need a [nonlinearity] table".into())),
    };
    let opts = RateOptions {
        constant: cfg.constant,
        noise_seed: seed,
        tol_factor: cfg.tol_factor,
        max_iter: cfg.max_iter,
        init: cfg.init_constant.map(|c| Grid::constant(spec.grid_n, spec.spacing, c)),
        nonlinearity,
        bound_tol: cfg.bound_tol,
    };
    let g = &cfg.delta_grid;
    let deltas = rates::geometric_grid(g.hi, g.lo, g.count)?;
    let report = rates::run_rate_experiment(&spec.op, &spec.penalty, &src, cfg.rule, &deltas, &opts)?;

    let header = [
        "delta",
        "alpha",
        "bregman_error",
        "bound",
        "residual",
        "residual_bound",
        "s",
        "s_bound",
        "c_effective",
        "iterations",
        "kkt_residual",
        "converged",
        "flags",
    ];
    let csv_path = ctx.out.write_csv("rates.csv", &header, &rows(&report))?;
    let bound_violations = report.bound_violations(cfg.bound_tol);
    let residual_violations = report.residual_violations(cfg.bound_tol);
    let slope_ok = report.slope_within(cfg.slope_tolerance);
    let passed = slope_ok && bound_violations.is_empty() && residual_violations.is_empty();

    println!(
        "{} {:?} {}: fitted slope {:.4} (expected {:.4} +- {}), {} flagged points",
        spec.name,
        src.kind,
        cfg.rule.name(),
        report.fitted_slope,
        report.expected_slope,
        cfg.slope_tolerance,
        report.points.iter().filter(|p| !p.flags.is_empty()).count()
    );
    for &i in bound_violations.iter().chain(&residual_violations) {
        let p = &report.points[i];
        eprintln!(
            "violation at row {i}: delta {:e}, D {:e} vs bound {:e}, residual {:e} vs {}",
            p.delta,
            p.bregman_error,
            p.bound,
            p.residual,
            opt_num(p.residual_bound)
        );
    }
    if !slope_ok {
        eprintln!("fitted slope {:.4} outside {} +- {}", report.fitted_slope, report.expected_slope, cfg.slope_tolerance);
    }
    let result = RatesResult {
        problem: spec.name,
        penalty: spec.penalty.name(),
        grid_n: spec.grid_n,
        slope_tolerance: cfg.slope_tolerance,
        slope_ok,
        bound_violations,
        residual_violations,
        nonlinearity_estimate: nonlinearity,
        membership_violation: src.membership_violation,
        rates_csv: "rates.csv".into(),
        report,
    };
    let out = Report { provenance: Provenance::new("rates", seed, &loaded.text), passed, result };
    let json_path = ctx.out.write_json("rates.json", &out)?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(passed)
}
