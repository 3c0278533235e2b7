use bregtik::operators::{adjoint_test, taylor_test, DENSE_CHECK_MAX_DIM};
use bregtik::problems::ProblemSpec;
use bregtik::{rng, Grid, Penalty};
use serde::Serialize;

use super::Context;
use crate::config::{self, VerifyConfig};
use crate::error::CliError;
use crate::output::{Provenance, Report};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// `None` when the quantity is not finite, e.g. the Taylor slope of a linear map.
    pub measured: Option<f64>,
    pub threshold: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyResult {
    pub problem: &'static str,
    pub penalty: &'static str,
    pub grid_n: usize,
    pub checks: Vec<Check>,
}

fn check(name: &str, passed: bool, measured: f64, threshold: String) -> Check {
    Check { name: name.into(), passed, measured: measured.is_finite().then_some(measured), threshold, note: None }
}

fn random_point(penalty: &Penalty<f64>, r: &mut rng::SeededRng, n: usize, h: f64, quantize: bool) -> Grid {
    let g = rng::standard_normal(r, n, h);
    match penalty {
        Penalty::NegativeEntropy { .. } => g.map(f64::exp),
        _ if quantize => g.map(|v| (2.0 * v).round() / 2.0),
        _ => g,
    }
}

fn bregman_checks(spec: &ProblemSpec<f64>, cfg: &VerifyConfig, seed: u64) -> Result<Vec<Check>, CliError> {
    let p = spec.penalty;
    let (n, h) = (spec.grid_n, spec.spacing);
    let mut r = rng::substream(seed, 1);
    let tol = cfg.bregman_tol;
    let (mut neg, mut selfd, mut quad, mut lower) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for case in 0..cfg.bregman_cases {
        let u = random_point(&p, &mut r, n, h, case % 2 == 0);
        let v = random_point(&p, &mut r, n, h, case % 2 == 0);
        let xi = p.subgradient(&u)?;
        let d = p.bregman_value(&xi, &v, &u)?;
        let half = 0.5 * v.sub(&u)?.norm_sq();
        neg = neg.max(-d);
        selfd = selfd.max(p.bregman_value(&xi, &u, &u)?.abs());
        quad = quad.max((d - half).abs());
        lower = lower.max(half - d);
    }
    let mut out = vec![
        check("bregman_nonnegative", neg <= tol, neg, format!("max(-D) <= {tol:e}")),
        check("bregman_self_zero", selfd <= tol, selfd, format!("max |D(u,u)| <= {tol:e}")),
    ];
    match p {
        Penalty::Quadratic => out.push(check("bregman_quadratic_identity", quad <= tol, quad, format!("max |D - |v-u|^2/2| <= {tol:e}"))),
        Penalty::QuadraticPlusTv { .. } => {
            out.push(check("bregman_lower_bound", lower <= tol, lower, format!("max(|v-u|^2/2 - D) <= {tol:e}")))
        }
        _ => {}
    }
    Ok(out)
}

pub fn run(ctx: &Context) -> Result<bool, CliError> {
    let loaded = config::load::<VerifyConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    if cfg.taylor_band[0] >= cfg.taylor_band[1] {
        return Err(CliError::Config("taylor_band must be increasing".into()));
    }
    let spec: ProblemSpec<f64> = cfg.problem.build(config::penalty_or_default(&cfg.penalty)?)?;
    let (n, h) = (spec.grid_n, spec.spacing);
    let mut checks = Vec::new();

    let cons = spec.consistency_error()?;
    checks.push(check("consistency", cons <= 1e-12, cons, "|F(ubar) - y| <= 1e-12".into()));

    let mut r = rng::substream(seed, 0);
    let at_random = rng::standard_normal(&mut r, n, h);
    let adj = adjoint_test(&spec.op, &spec.ubar_true, cfg.adjoint_trials, seed)?.max(adjoint_test(
        &spec.op,
        &at_random,
        cfg.adjoint_trials,
        seed.wrapping_add(1),
    )?);
    checks.push(check("adjoint", adj <= cfg.adjoint_tol, adj, format!("<= {:e}", cfg.adjoint_tol)));
    if n.max(spec.op.range_dim()) <= DENSE_CHECK_MAX_DIM {
        let dense = spec.op.dense_adjoint_mismatch(&spec.ubar_true)?;
        checks.push(check("adjoint_dense", dense <= cfg.adjoint_tol, dense, format!("<= {:e}", cfg.adjoint_tol)));
    }

    let du = rng::standard_normal(&mut r, n, h);
    let slope = taylor_test(&spec.op, &spec.ubar_true, &du)?;
    let [lo, hi] = cfg.taylor_band;
    let mut taylor = if spec.op.is_linear() {
        check("taylor", slope.is_infinite(), slope, "remainder below rounding floor".into())
    } else {
        check("taylor", (lo..=hi).contains(&slope), slope, format!("slope in [{lo}, {hi}]"))
    };
    if slope.is_infinite() {
        taylor.note = Some("exactly linear".into());
    }
    checks.push(taylor);

    checks.extend(bregman_checks(&spec, cfg, seed)?);

    let y = spec.noisy_data(1e-2, seed)?;
    let level = (y.sub(&spec.y_exact)?.norm() - 1e-2).abs() / 1e-2;
    checks.push(check("noise_level", level <= 1e-14, level, "relative |y_delta - y| - delta <= 1e-14".into()));

    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        let m = c.measured.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "inf".into());
        println!("{} {}: {m} ({})", if c.passed { "ok  " } else { "FAIL" }, c.name, c.threshold);
    }
    let result = VerifyResult { problem: spec.name, penalty: spec.penalty.name(), grid_n: n, checks };
    let report = Report { provenance: Provenance::new("verify", seed, &loaded.text), passed, result };
    let path = ctx.out.write_json("verify.json", &report)?;
    println!("wrote {}", path.display());
    Ok(passed)
}
