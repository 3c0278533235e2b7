//! Source conditions, a-priori error bounds, parameter choice rules and the
//! harness that measures convergence rates against them.
//!
//! Source conditions of type I ask for `xi = F'(ubar)* omega` with `omega` in
//! the data space, type II for `xi = F'(ubar)* F'(ubar) omega` with `omega` in
//! the parameter space, with `xi` a subgradient of the penalty at `ubar`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operators::{taylor_remainder, ForwardOperator};
use crate::penalty::Penalty;
use crate::problems::add_noise;
use crate::scalar::Real;
use crate::solver::{self, TikhonovProblem};

/// Largest admissible `|xi - subgradient|` when verifying a supplied `ubar`.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    TypeI,
    #[serde(rename = "type_ii")]
    TypeII,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    /// `alpha = constant delta`.
    Linear,
    /// `alpha = constant delta^(2/3)`.
    TwoThirds,
    /// `alpha = constant`.
    Fixed,
}

impl AlphaRule {
    pub fn name(&self) -> &'static str {
        match self {
            AlphaRule::Linear => "linear",
            AlphaRule::TwoThirds => "two_thirds",
            AlphaRule::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SourceSetup<T> {
    pub kind: SourceKind,
    pub omega: GridFunction<T>,
    pub ubar: GridFunction<T>,
    pub xi: GridFunction<T>,
    pub omega_norm: T,
    /// `|F'(ubar) omega|`, type II only.
    pub f_omega_norm: Option<T>,
    /// `|xi - subgradient(ubar)|` style violation measured at construction.
    pub membership_violation: T,
}

impl<T: Real> SourceSetup<T> {
    /// Exact data `F(ubar)`.
    pub fn exact_data(&self, op: &ForwardOperator<T>) -> Result<GridFunction<T>> {
        op.apply(&self.ubar)
    }

    /// `s = D_xi(ubar - alpha omega, ubar)`, type II only.
    pub fn s_value(&self, penalty: &Penalty<T>, alpha: T) -> Result<T> {
        if self.kind != SourceKind::TypeII {
            return Err(Error::InvalidParameter("s is defined for type II sources".into()));
        }
        let shifted = self.ubar.axpy(-alpha, &self.omega)?;
        penalty.bregman_value(&self.xi, &shifted, &self.ubar)
    }
}

fn source_element<T: Real>(
    op: &ForwardOperator<T>,
    at: &GridFunction<T>,
    kind: SourceKind,
    omega: &GridFunction<T>,
) -> Result<(GridFunction<T>, Option<T>)> {
    match kind {
        SourceKind::TypeI => {
            omega.check_len(op.range_dim())?;
            Ok((op.adjoint_apply(at, omega)?, None))
        }
        SourceKind::TypeII => {
            omega.check_len(op.domain_dim())?;
            let fo = op.derivative_apply(at, omega)?;
            Ok((op.adjoint_apply(at, &fo)?, Some(fo.norm())))
        }
    }
}

/// Builds `xi` from `omega` and recovers `ubar` by inverting the subdifferential.
///
/// Inversion is available for the quadratic and entropy penalties with linear
/// operators. Otherwise `ubar` must be supplied and `xi` is checked to be a
/// subgradient there; for nonlinear operators `xi` is formed at the supplied `ubar`.
pub fn construct_source<T: Real>(
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    kind: SourceKind,
    omega: &GridFunction<T>,
    ubar: Option<&GridFunction<T>>,
) -> Result<SourceSetup<T>> {
    let (xi, ubar, violation, f_omega_norm) = match ubar {
        Some(ubar) => {
            ubar.check_len(op.domain_dim())?;
            let (xi, fon) = source_element(op, ubar, kind, omega)?;
            let v = penalty.subgradient_violation(ubar, &xi)?;
            if !(v <= T::lit(MEMBERSHIP_TOL) * (T::one() + xi.max_abs())) {
                return Err(Error::MembershipFailure(v.to_f64_lossy()));
            }
            (xi, ubar.clone(), v, fon)
        }
        None => {
            if !op.is_linear() {
                return Err(Error::NotInvertible("nonlinear operator needs an explicit ubar"));
            }
            let at = GridFunction::zeros(op.domain_dim(), omega.spacing());
            let (xi, fon) = source_element(op, &at, kind, omega)?;
            let ubar = match *penalty {
                Penalty::Quadratic => xi.clone(),
                Penalty::NegativeEntropy { .. } => xi.map(|v| (v - T::one()).exp()),
                Penalty::L1 => return Err(Error::NotInvertible("l1")),
                Penalty::QuadraticPlusTv { .. } => return Err(Error::NotInvertible("quadratic_plus_tv")),
            };
            penalty.check_domain(&ubar)?;
            let v = penalty.subgradient_violation(&ubar, &xi)?;
            (xi, ubar, v, fon)
        }
    };
    Ok(SourceSetup { kind, omega_norm: omega.norm(), omega: omega.clone(), ubar, xi, f_omega_norm, membership_violation: violation })
}

/// Solves the source equation for `omega` given `ubar`, taking `xi` as the
/// penalty's subgradient at `ubar`. Needs an invertible `F'(ubar)`.
pub fn source_from_solution<T>(
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    kind: SourceKind,
    ubar: &GridFunction<T>,
) -> Result<SourceSetup<T>>
where
    T: Real + nalgebra::RealField,
{
    ubar.check_len(op.domain_dim())?;
    if op.domain_dim() != op.range_dim() {
        return Err(Error::NotInvertible("non-square derivative"));
    }
    let xi = penalty.subgradient(ubar)?;
    let n = op.domain_dim();
    let rows = op.dense_derivative(ubar)?;
    let m = nalgebra::DMatrix::<T>::from_fn(n, n, |i, j| rows[i][j]);
    let system = match kind {
        SourceKind::TypeI => m.transpose(),
        SourceKind::TypeII => m.transpose() * &m,
    };
    let rhs = nalgebra::DVector::<T>::from_column_slice(xi.values());
    let sol = system.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    if sol.iter().any(|v| !num_traits::Float::is_finite(*v)) {
        return Err(Error::SingularSystem);
    }
    let omega = ubar.with_values(sol.iter().copied().collect())?;
    construct_source(op, penalty, kind, &omega, Some(ubar))
}

/// Source for the quadratic penalty and an operator whose derivative is linear
/// in the base point, such as autoconvolution, where `xi = ubar`.
///
/// Type I: `v -> F'(v)* omega` is linear, so power iteration gives `(lambda, v)`
/// and `omega = profile / lambda`. Type II: `v -> F'(v)* F'(v) omega` is
/// quadratic; normalised iteration gives `B(v) = mu v` and
/// `omega = profile / (ubar_norm mu)`. In both cases `ubar = ubar_norm v / |v|`.
pub fn quadratic_fixed_point_source<T: Real>(
    op: &ForwardOperator<T>,
    kind: SourceKind,
    profile: &GridFunction<T>,
    ubar_norm: T,
    iterations: usize,
) -> Result<SourceSetup<T>> {
    if op.is_linear() {
        return Err(Error::NotInvertible("linear operator has no base-point dependence"));
    }
    if !(ubar_norm > T::zero()) {
        return Err(Error::InvalidParameter(format!("ubar norm {ubar_norm} must be positive")));
    }
    let map = |v: &GridFunction<T>| -> Result<GridFunction<T>> {
        match kind {
            SourceKind::TypeI => op.adjoint_apply(v, profile),
            SourceKind::TypeII => op.adjoint_apply(v, &op.derivative_apply(v, profile)?),
        }
    };
    match kind {
        SourceKind::TypeI => profile.check_len(op.range_dim())?,
        SourceKind::TypeII => profile.check_len(op.domain_dim())?,
    }
    let mut v = GridFunction::constant(op.domain_dim(), profile.spacing(), T::one());
    v = v.scale(T::one() / v.norm());
    let mut eig = T::zero();
    for _ in 0..iterations.max(1) {
        let w = map(&v)?;
        eig = w.inner(&v)?;
        let nw = w.norm();
        if !(nw > T::zero()) {
            return Err(Error::SingularSystem);
        }
        v = w.scale(T::one() / nw);
    }
    if !(eig > T::zero()) {
        return Err(Error::SingularSystem);
    }
    let omega = match kind {
        SourceKind::TypeI => profile.scale(T::one() / eig),
        SourceKind::TypeII => profile.scale(T::one() / (ubar_norm * eig)),
    };
    let ubar = v.scale(ubar_norm);
    construct_source(op, &Penalty::Quadratic, kind, &omega, Some(&ubar))
}

/// `(alpha |omega| + delta)^2 / (2 alpha)`.
pub fn bound_type1_noisy<T: Real>(alpha: T, delta: T, omega_norm: T) -> T {
    let a = alpha * omega_norm + delta;
    a * a / (T::lit(2.0) * alpha)
}

/// `(s + delta^2/alpha + (delta/alpha) sqrt(delta^2 + 2 alpha s), alpha |F omega| + delta + sqrt(delta^2 + 2 alpha s))`.
pub fn bound_type2_noisy<T: Real>(alpha: T, delta: T, s: T, f_omega_norm: T) -> (T, T) {
    let root = (delta * delta + T::lit(2.0) * alpha * s).sqrt();
    let bregman = s + delta * delta / alpha + delta / alpha * root;
    let residual = alpha * f_omega_norm + delta + root;
    (bregman, residual)
}

/// Residual and Bregman bounds for type I sources of a nonlinear operator
/// satisfying the nonlinearity condition with constant `c`.
pub fn bound_nl_type1<T: Real>(alpha: T, delta: T, omega_norm: T, c: T) -> Result<(T, T)> {
    let cw = c * omega_norm;
    if !(cw < T::one()) {
        return Err(Error::HypothesisViolated(format!("c |omega| = {cw} is not below 1")));
    }
    let root = (alpha * alpha * omega_norm * omega_norm + delta * delta).sqrt();
    let two = T::lit(2.0);
    let residual = two * alpha * omega_norm + two * root;
    let bregman = two / (T::one() - cw) * (delta * delta / (two * alpha) + alpha * omega_norm * omega_norm + omega_norm * root);
    Ok((residual, bregman))
}

/// Residual and Bregman bounds for type II sources of a nonlinear operator.
pub fn bound_nl_type2<T: Real>(alpha: T, delta: T, s: T, f_omega_norm: T, c: T) -> Result<(T, T)> {
    let cf = c * f_omega_norm;
    if !(cf < T::one()) {
        return Err(Error::HypothesisViolated(format!("c |F'(ubar) omega| = {cf} is not below 1")));
    }
    if !(s >= T::zero()) {
        return Err(Error::InvalidParameter(format!("s = {s} must be nonnegative")));
    }
    let two = T::lit(2.0);
    let cs = c * s;
    let g = delta + ((delta + cs) * (delta + cs) + two * alpha * s * (T::one() + cf)).sqrt();
    let residual = alpha * f_omega_norm + g;
    let bregman = (alpha * s + cs * cs / two + delta * g + cs * (delta + alpha * f_omega_norm)) / (alpha * (T::one() - cf));
    Ok((residual, bregman))
}

pub fn choose_alpha<T: Real>(rule: AlphaRule, delta: T, constant: T) -> T {
    match rule {
        AlphaRule::Linear => constant * delta,
        AlphaRule::TwoThirds => constant * delta.powf(T::lit(2.0 / 3.0)),
        AlphaRule::Fixed => constant,
    }
}

/// Rate exponent of the Bregman bound for the given source type and rule.
pub fn expected_slope<T: Real>(kind: SourceKind, rule: AlphaRule) -> T {
    match (kind, rule) {
        (_, AlphaRule::Fixed) => T::zero(),
        (_, AlphaRule::Linear) => T::one(),
        (SourceKind::TypeI, AlphaRule::TwoThirds) => T::lit(2.0 / 3.0),
        (SourceKind::TypeII, AlphaRule::TwoThirds) => T::lit(4.0 / 3.0),
    }
}

/// Ordinary least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope<T: Real>(points: &[(T, T)]) -> Result<T> {
    if points.iter().any(|&(x, y)| !(x > T::zero()) || !(y > T::zero())) {
        return Err(Error::DegenerateFit("log-log fit needs positive coordinates".into()));
    }
    let n = T::from_usize_lossy(points.len());
    let logs: Vec<(T, T)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<T>() / n;
    let my = logs.iter().map(|p| p.1).sum::<T>() / n;
    let sxx = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<T>();
    if points.len() < 2 || !(sxx > T::zero()) {
        return Err(Error::DegenerateFit("log-log fit needs two distinct abscissae".into()));
    }
    let sxy = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<T>();
    Ok(sxy / sxx)
}

/// `alpha^2 (M/2) |omega|^2`, the bound on `s` for penalties with curvature at most `M`.
pub fn corollary_s_bound<T: Real>(penalty: &Penalty<T>, alpha: T, omega_norm: T, curvature: T) -> Result<T> {
    if !penalty.is_smooth() {
        return Err(Error::NotSmooth(penalty.name()));
    }
    Ok(alpha * alpha * curvature / T::lit(2.0) * omega_norm * omega_norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RateOptions<T> {
    /// Constant of the parameter choice rule.
    pub constant: T,
    pub noise_seed: u64,
    /// Solver tolerance as a multiple of `1 + |F'(u0)* y_delta|`.
    pub tol_factor: T,
    pub max_iter: usize,
    /// Starting point; zeros (ones for entropy) when absent.
    pub init: Option<GridFunction<T>>,
    /// Nonlinearity constant from sampling; required for nonlinear operators.
    pub nonlinearity: Option<T>,
    /// Relative slack when comparing measured values with bounds.
    pub bound_tol: T,
}

impl<T: Real> Default for RateOptions<T> {
    fn default() -> Self {
        Self {
            constant: T::one(),
            noise_seed: 0,
            tol_factor: T::lit(1e-12),
            max_iter: solver::DEFAULT_MAX_ITER,
            init: None,
            nonlinearity: None,
            bound_tol: T::lit(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RatePoint<T> {
    pub delta: T,
    pub alpha: T,
    pub bregman_error: T,
    pub residual: T,
    pub bound: T,
    pub residual_bound: Option<T>,
    pub s: Option<T>,
    pub s_bound: Option<T>,
    /// Nonlinearity constant used in the bound (0 for linear operators).
    pub c_effective: T,
    pub iterations: usize,
    pub kkt_residual: T,
    pub converged: bool,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RateReport<T> {
    pub deltas: Vec<T>,
    pub alphas: Vec<T>,
    pub bregman_errors: Vec<T>,
    pub residuals: Vec<T>,
    pub bounds: Vec<T>,
    pub fitted_slope: T,
    pub expected_slope: T,
    pub rule: AlphaRule,
    pub source_kind: SourceKind,
    pub hypothesis_flags: Vec<String>,
    pub omega_norm: T,
    pub f_omega_norm: Option<T>,
    pub noise_seed: u64,
    pub points: Vec<RatePoint<T>>,
}

impl<T: Real> RateReport<T> {
    /// Indices whose error exceeds the bound by more than `rel_tol`, among points without flags.
    pub fn bound_violations(&self, rel_tol: T) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.flags.is_empty() && !(p.bregman_error <= p.bound * (T::one() + rel_tol)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices whose residual exceeds the residual bound, among points without flags.
    pub fn residual_violations(&self, rel_tol: T) -> Vec<usize> {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let b = p.residual_bound?;
                (p.flags.is_empty() && !(p.residual <= b * (T::one() + rel_tol))).then_some(i)
            })
            .collect()
    }

    pub fn slope_within(&self, tol: T) -> bool {
        (self.fitted_slope - self.expected_slope).abs() <= tol
    }
}

fn default_init<T: Real>(penalty: &Penalty<T>, n: usize, spacing: T) -> GridFunction<T> {
    match penalty {
        Penalty::NegativeEntropy { .. } => GridFunction::constant(n, spacing, T::one()),
        _ => GridFunction::zeros(n, spacing),
    }
}

/// `|F(u) - F(ubar) - F'(ubar)(u - ubar)| / D_xi(u, ubar)`, zero when both vanish.
fn cone_ratio<T: Real>(op: &ForwardOperator<T>, penalty: &Penalty<T>, src: &SourceSetup<T>, u: &GridFunction<T>) -> Result<T> {
    let r = taylor_remainder(op, &src.ubar, &u.sub(&src.ubar)?)?.norm();
    let d = penalty.bregman_value(&src.xi, u, &src.ubar)?;
    let floor = T::lit(1e-14) * (T::one() + op.apply(&src.ubar)?.norm());
    if r <= floor {
        Ok(T::zero())
    } else if d > T::zero() {
        Ok(r / d)
    } else {
        Ok(T::infinity())
    }
}

fn rate_point<T: Real>(
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    src: &SourceSetup<T>,
    y: &GridFunction<T>,
    rule: AlphaRule,
    delta: T,
    opts: &RateOptions<T>,
) -> Result<RatePoint<T>> {
    let alpha = choose_alpha(rule, delta, opts.constant);
    let ydelta = add_noise(y, delta, opts.noise_seed)?;
    let prob = TikhonovProblem::new(op, *penalty, &ydelta, alpha)?;
    let init = match &opts.init {
        Some(u) => u.clone(),
        None => default_init(penalty, op.domain_dim(), y.spacing()),
    };
    let fty = op.adjoint_apply(&init, &ydelta)?.norm();
    let tol = opts.tol_factor * (T::one() + fty);
    let sol = solver::solve(&prob, &init, tol, opts.max_iter)?;
    let u = &sol.minimizer;
    let bregman_error = penalty.bregman_value(&src.xi, u, &src.ubar)?;
    let residual = op.apply(u)?.sub(y)?.norm();
    let mut flags = Vec::new();
    if !sol.converged {
        flags.push(format!("inner solver stopped at kkt {:e} after {} iterations", sol.kkt_residual, sol.iterations));
    }

    let mut s = None;
    let mut s_bound = None;
    let mut shifted = None;
    if src.kind == SourceKind::TypeII {
        let cand = src.ubar.axpy(-alpha, &src.omega)?;
        if penalty.in_domain(&cand) {
            let sv = penalty.bregman_value(&src.xi, &cand, &src.ubar)?;
            s = Some(sv);
            if penalty.is_smooth() {
                let m = penalty.curvature_bound(&src.ubar, &cand)?;
                s_bound = Some(corollary_s_bound(penalty, alpha, src.omega_norm, m)?);
            }
            shifted = Some(cand);
        } else {
            flags.push("ubar - alpha omega leaves the penalty domain".into());
        }
    }

    let (bound, residual_bound, c_effective) = if op.is_linear() {
        match src.kind {
            SourceKind::TypeI => (bound_type1_noisy(alpha, delta, src.omega_norm), None, T::zero()),
            SourceKind::TypeII => match s {
                Some(sv) => {
                    let (b, r) = bound_type2_noisy(alpha, delta, sv, src.f_omega_norm.unwrap_or(T::zero()));
                    (b, Some(r), T::zero())
                }
                None => (T::nan(), None, T::zero()),
            },
        }
    } else {
        let obj_u = prob.objective(u)?;
        let mut c_eff = cone_ratio(op, penalty, src, u)?;
        match opts.nonlinearity {
            Some(c) => c_eff = c_eff.max(c),
            None => flags.push("nonlinearity constant not supplied".into()),
        }
        let reference = match (&src.kind, &shifted) {
            (SourceKind::TypeI, _) => Some(src.ubar.clone()),
            (SourceKind::TypeII, Some(cand)) => {
                c_eff = c_eff.max(cone_ratio(op, penalty, src, cand)?);
                Some(cand.clone())
            }
            (SourceKind::TypeII, None) => None,
        };
        if let Some(r) = reference {
            let obj_ref = prob.objective(&r)?;
            if obj_u > obj_ref {
                flags.push(format!("objective {obj_u:e} at the computed point exceeds {obj_ref:e} at the comparison point"));
            }
        }
        let bounds = match src.kind {
            SourceKind::TypeI => bound_nl_type1(alpha, delta, src.omega_norm, c_eff),
            SourceKind::TypeII => match s {
                Some(sv) => bound_nl_type2(alpha, delta, sv, src.f_omega_norm.unwrap_or(T::zero()), c_eff),
                None => Err(Error::HypothesisViolated("s undefined".into())),
            },
        };
        match bounds {
            Ok((rb, bb)) => (bb, Some(rb), c_eff),
            Err(e) => {
                flags.push(e.to_string());
                (T::nan(), None, c_eff)
            }
        }
    };

    Ok(RatePoint {
        delta,
        alpha,
        bregman_error,
        residual,
        bound,
        residual_bound,
        s,
        s_bound,
        c_effective,
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        converged: sol.converged,
        flags,
    })
}

/// Solves the regularized problem for every noise level (in parallel), compares
/// the Bregman error with the applicable bound and fits the log-log rate.
/// Points whose solve fails are kept as flagged gaps.
pub fn run_rate_experiment<T: Real>(
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    source: &SourceSetup<T>,
    rule: AlphaRule,
    delta_grid: &[T],
    opts: &RateOptions<T>,
) -> Result<RateReport<T>> {
    if delta_grid.iter().any(|&d| !(d > T::zero())) {
        return Err(Error::InvalidParameter("noise levels must be positive".into()));
    }
    if delta_grid.len() < 2 {
        return Err(Error::DegenerateFit("a rate fit needs at least two noise levels".into()));
    }
    let y = source.exact_data(op)?;
    let outcomes: Vec<Result<RatePoint<T>>> =
        delta_grid.par_iter().map(|&delta| rate_point(op, penalty, source, &y, rule, delta, opts)).collect();
    if outcomes.iter().all(|o| o.is_err()) {
        return Err(outcomes.into_iter().find_map(|o| o.err()).unwrap_or(Error::EmptySample));
    }
    let points: Vec<RatePoint<T>> = outcomes
        .into_iter()
        .zip(delta_grid)
        .map(|(o, &delta)| {
            o.unwrap_or_else(|e| RatePoint {
                delta,
                alpha: choose_alpha(rule, delta, opts.constant),
                bregman_error: T::nan(),
                residual: T::nan(),
                bound: T::nan(),
                residual_bound: None,
                s: None,
                s_bound: None,
                c_effective: T::nan(),
                iterations: 0,
                kkt_residual: T::nan(),
                converged: false,
                flags: vec![format!("solve failed: {e}")],
            })
        })
        .collect();
    let fit: Vec<(T, T)> =
        points.iter().filter(|p| p.bregman_error > T::zero() && p.bregman_error.is_finite()).map(|p| (p.delta, p.bregman_error)).collect();
    let fitted_slope = fit_loglog_slope(&fit)?;
    let hypothesis_flags =
        points.iter().enumerate().flat_map(|(i, p)| p.flags.iter().map(move |f| format!("point {i} (delta {:e}): {f}", p.delta))).collect();
    Ok(RateReport {
        deltas: points.iter().map(|p| p.delta).collect(),
        alphas: points.iter().map(|p| p.alpha).collect(),
        bregman_errors: points.iter().map(|p| p.bregman_error).collect(),
        residuals: points.iter().map(|p| p.residual).collect(),
        bounds: points.iter().map(|p| p.bound).collect(),
        fitted_slope,
        expected_slope: expected_slope(source.kind, rule),
        rule,
        source_kind: source.kind,
        hypothesis_flags,
        omega_norm: source.omega_norm,
        f_omega_norm: source.f_omega_norm,
        noise_seed: opts.noise_seed,
        points,
    })
}

/// `count` geometrically spaced values from `hi` down to `lo`.
pub fn geometric_grid<T: Real>(hi: T, lo: T, count: usize) -> Result<Vec<T>> {
    if !(hi > T::zero() && lo > T::zero()) || count < 2 {
        return Err(Error::InvalidParameter("geometric grid needs positive ends and two points".into()));
    }
    let step = (lo / hi).ln() / T::from_usize_lossy(count - 1);
    Ok((0..count).map(|i| hi * (step * T::from_usize_lossy(i)).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(v: &[f64]) -> GridFunction<f64> {
        GridFunction::new(v.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn construct_source_examples() {
        let id = ForwardOperator::identity(2).unwrap();
        let s = construct_source(&id, &Penalty::Quadratic, SourceKind::TypeI, &g(&[1.0, 2.0]), None).unwrap();
        assert_eq!(s.ubar.values(), &[1.0, 2.0]);
        let d = ForwardOperator::diagonal(vec![1.0, 0.5]).unwrap();
        let s = construct_source(&d, &Penalty::Quadratic, SourceKind::TypeI, &g(&[2.0, 2.0]), None).unwrap();
        assert_eq!(s.xi.values(), &[2.0, 1.0]);
        assert_eq!(s.ubar.values(), &[2.0, 1.0]);
        let s = construct_source(&d, &Penalty::Quadratic, SourceKind::TypeII, &g(&[4.0, 4.0]), None).unwrap();
        assert_eq!(s.ubar.values(), &[4.0, 1.0]);
        assert_eq!(s.f_omega_norm, Some((16.0f64 + 4.0).sqrt()));
    }

    #[test]
    fn construct_source_entropy_and_rejections() {
        let d = ForwardOperator::diagonal(vec![1.0, 0.5]).unwrap();
        let e = Penalty::negative_entropy();
        let s = construct_source(&d, &e, SourceKind::TypeI, &g(&[0.2, -0.4]), None).unwrap();
        assert!((s.ubar[0] - (0.2f64 - 1.0).exp()).abs() < 1e-15);
        assert!(s.membership_violation < 1e-14);
        assert!(matches!(construct_source(&d, &Penalty::L1, SourceKind::TypeI, &g(&[0.2, 0.1]), None), Err(Error::NotInvertible(_))));
        // l1 with explicit ubar: xi = (1, 0.5) is a subgradient at (3, 0), not at (3, -1)
        let s = construct_source(&d, &Penalty::L1, SourceKind::TypeI, &g(&[1.0, 1.0]), Some(&g(&[3.0, 0.0]))).unwrap();
        assert_eq!(s.xi.values(), &[1.0, 0.5]);
        assert!(matches!(
            construct_source(&d, &Penalty::L1, SourceKind::TypeI, &g(&[1.0, 1.0]), Some(&g(&[3.0, -1.0]))),
            Err(Error::MembershipFailure(_))
        ));
    }

    #[test]
    fn source_from_solution_recovers_omega() {
        let n = 8;
        let h = 1.0 / n as f64;
        let op = ForwardOperator::autoconvolution(n).unwrap();
        let ubar = GridFunction::from_fn(n, h, |x| 1.0 + x).unwrap();
        for kind in [SourceKind::TypeI, SourceKind::TypeII] {
            let s = source_from_solution(&op, &Penalty::Quadratic, kind, &ubar).unwrap();
            assert!(s.xi.sub(&ubar).unwrap().max_abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_source_satisfies_source_equation() {
        let n = 16;
        let op = ForwardOperator::autoconvolution(n).unwrap();
        let profile = GridFunction::from_fn(n, 1.0 / n as f64, |x| (1.0 - x) * (1.0 - x)).unwrap();
        for kind in [SourceKind::TypeI, SourceKind::TypeII] {
            let src = quadratic_fixed_point_source(&op, kind, &profile, 0.5, 500).unwrap();
            assert!((src.ubar.norm() - 0.5).abs() < 1e-14);
            let (xi, _) = source_element(&op, &src.ubar, kind, &src.omega).unwrap();
            assert!(xi.sub(&src.ubar).unwrap().max_abs() < 1e-10);
            assert!(src.ubar.values().iter().all(|&v| v > 0.0));
        }
        let lin = ForwardOperator::identity(n).unwrap();
        assert!(quadratic_fixed_point_source(&lin, SourceKind::TypeI, &profile, 1.0, 10).is_err());
        assert!(quadratic_fixed_point_source(&op, SourceKind::TypeI, &profile, 0.0, 10).is_err());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(bound_type1_noisy(1.0f64, 1.0, 1.0), 2.0);
        assert!((bound_type1_noisy(0.3f64, 0.0, 2.0) - 0.3 * 4.0 / 2.0).abs() < 1e-15);
        let (b, r) = bound_type2_noisy(0.5f64, 0.0, 0.2, 3.0);
        assert!((b - 0.2).abs() < 1e-15);
        assert!((r - (1.5 + (0.2f64).sqrt())).abs() < 1e-15);
        assert_eq!(bound_type2_noisy(0.5, 0.0, 0.0, 3.0), (0.0, 1.5));
        let (_, b) = bound_nl_type1(0.1f64, 0.0, 2.0, 0.0).unwrap();
        assert!((b - 4.0 * 0.1 * 4.0).abs() < 1e-14);
        assert!(matches!(bound_nl_type1(0.1, 0.1, 2.0, 0.5), Err(Error::HypothesisViolated(_))));
        assert!(bound_nl_type2(0.1, 0.1, 0.1, 2.0, 0.5).is_err());
    }

    #[test]
    fn nonlinear_bounds_reduce_to_linear() {
        let (alpha, delta, s, fw) = (0.03f64, 0.004, 0.002, 1.7);
        let (b, r) = bound_type2_noisy(alpha, delta, s, fw);
        let (rn, bn) = bound_nl_type2(alpha, delta, s, fw, 0.0).unwrap();
        // g = delta + sqrt(delta^2 + 2 alpha s) at c = 0
        assert!((rn - r).abs() < 1e-15);
        assert!((bn - b).abs() < 1e-12 * b);
        // exact-data collapse of the nonlinear type II bound
        let c = 0.2f64;
        let (_, b0) = bound_nl_type2(alpha, 0.0, s, fw, c).unwrap();
        let expect = (alpha * s + (c * s).powi(2) / 2.0 + alpha * c * s * fw) / (alpha * (1.0 - c * fw));
        assert!((b0 - expect).abs() < 1e-15 * expect.max(1.0));
    }

    #[test]
    fn alpha_rules() {
        assert_eq!(choose_alpha(AlphaRule::Linear, 0.01, 1.0), 0.01);
        assert!((choose_alpha(AlphaRule::TwoThirds, 1e-3f64, 1.0) - 1e-2).abs() < 1e-15);
        assert_eq!(choose_alpha(AlphaRule::Fixed, 0.5, 0.3), 0.3);
        assert_eq!(expected_slope::<f64>(SourceKind::TypeII, AlphaRule::TwoThirds), 4.0 / 3.0);
    }

    #[test]
    fn fit_examples() {
        assert!((fit_loglog_slope(&[(1.0f64, 1.0), (10.0, 10.0)]).unwrap() - 1.0).abs() < 1e-15);
        assert!((fit_loglog_slope(&[(1.0f64, 1.0), (10.0, 100.0)]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(fit_loglog_slope(&[(1.0, 2.0), (4.0, 2.0)]).unwrap(), 0.0);
        assert!(matches!(fit_loglog_slope(&[(1.0, 2.0)]), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_loglog_slope(&[(1.0, 2.0), (1.0, 3.0)]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn s_bound_for_quadratic_is_exact() {
        let d = ForwardOperator::diagonal(vec![1.0, 0.5, 0.25]).unwrap();
        let s = construct_source(&d, &Penalty::Quadratic, SourceKind::TypeII, &g(&[1.0, -2.0, 3.0]), None).unwrap();
        let alpha = 0.3f64;
        let sv = s.s_value(&Penalty::Quadratic, alpha).unwrap();
        let b = corollary_s_bound(&Penalty::Quadratic, alpha, s.omega_norm, 1.0).unwrap();
        assert!((sv - b).abs() < 1e-14);
        assert_eq!(corollary_s_bound(&Penalty::Quadratic, 0.0, 3.0, 1.0).unwrap(), 0.0);
        assert!(corollary_s_bound(&Penalty::L1, 0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_point_grid_is_degenerate() {
        let d = ForwardOperator::diagonal(vec![1.0, 0.5]).unwrap();
        let s = construct_source(&d, &Penalty::Quadratic, SourceKind::TypeI, &g(&[1.0, 1.0]), None).unwrap();
        let r = run_rate_experiment(&d, &Penalty::Quadratic, &s, AlphaRule::Linear, &[0.1], &RateOptions::default());
        assert!(matches!(r, Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn geometric_grid_endpoints() {
        let grid = geometric_grid(1e-1f64, 1e-4, 7).unwrap();
        assert_eq!(grid.len(), 7);
        assert!((grid[0] - 1e-1).abs() < 1e-16 && (grid[6] - 1e-4).abs() < 1e-16);
        assert!((grid[1] / grid[0] - grid[2] / grid[1]).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn type1_bound_minimised_at_delta_over_omega(delta in 1e-4f64..1.0, w in 0.1f64..10.0) {
            let a_star = delta / w;
            let f = |a: f64| bound_type1_noisy(a, delta, w);
            prop_assert!(f(a_star) <= f(a_star * 1.001));
            prop_assert!(f(a_star) <= f(a_star / 1.001));
            prop_assert!((f(a_star) - 2.0 * delta * w).abs() <= 1e-12 * f(a_star));
        }

        #[test]
        fn noisy_bounds_collapse_at_zero_noise(a in 1e-4f64..1.0, w in 0.0f64..10.0, s in 0.0f64..1.0) {
            prop_assert!((bound_type1_noisy(a, 0.0, w) - a * w * w / 2.0).abs() <= 1e-15 * (1.0 + a * w * w));
            let (b, r) = bound_type2_noisy(a, 0.0, s, w);
            prop_assert_eq!(b, s);
            prop_assert!((r - (a * w + (2.0 * a * s).sqrt())).abs() <= 1e-15 * (1.0 + r));
        }
    }
}
