//! Iterated Tikhonov regularization with a Bregman-distance penalty.
//!
//! Each outer step minimises `1/2 |F(u) - y|^2 + alpha_k D_{xi_k}(u, u_k)` and
//! then updates the subgradient by
//! `xi_{k+1} = xi_k - (1/alpha_k) F'(u_{k+1})* (F(u_{k+1}) - y)`.
//! Noisy runs stop at the first index with `|F(u_k) - y| <= tau delta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operators::ForwardOperator;
use crate::penalty::Penalty;
use crate::scalar::Real;
use crate::solver::{self, SolveResult, TikhonovProblem};

/// Residual below which an exact-data run counts as having fitted the data.
pub const EXACT_DATA_FLOOR: f64 = 1e-12;
/// Grids longer than this are left out of trace summaries.
pub const GRID_ELISION_THRESHOLD: usize = 256;
/// Slack allowed in the three-point inequality.
pub const THREE_POINT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum AlphaSchedule<T> {
    Constant {
        alpha0: T,
    },
    /// `alpha_k = alpha0 ratio^k`.
    Geometric {
        alpha0: T,
        ratio: T,
    },
}

impl<T: Real> AlphaSchedule<T> {
    pub fn raw(&self, k: usize) -> T {
        match *self {
            AlphaSchedule::Constant { alpha0 } => alpha0,
            AlphaSchedule::Geometric { alpha0, ratio } => alpha0 * ratio.powi(k.min(i32::MAX as usize) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IterationConfig<T> {
    pub schedule: AlphaSchedule<T>,
    pub alpha_lower: T,
    pub alpha_upper: T,
    pub tau: T,
    pub delta: T,
    pub max_outer: usize,
    /// Inner stopping tolerance; the problem default when absent.
    pub inner_tol: Option<T>,
    pub inner_max_iter: usize,
    pub eta: Option<T>,
    pub gamma: Option<T>,
    pub rho: Option<T>,
}

impl<T: Real> IterationConfig<T> {
    /// Constant `alpha`, `tau = 2`.
    pub fn constant(alpha: T, delta: T, max_outer: usize) -> Self {
        Self {
            schedule: AlphaSchedule::Constant { alpha0: alpha },
            alpha_lower: alpha,
            alpha_upper: alpha,
            tau: T::lit(2.0),
            delta,
            max_outer,
            inner_tol: None,
            inner_max_iter: solver::DEFAULT_MAX_ITER,
            eta: None,
            gamma: None,
            rho: None,
        }
    }

    /// `alpha_k` clamped to `[alpha_lower, alpha_upper]`.
    pub fn alpha_at(&self, k: usize) -> T {
        self.schedule.raw(k).max(self.alpha_lower).min(self.alpha_upper)
    }

    /// Rejects inconsistent settings and returns warnings for settings that
    /// void the convergence hypotheses without making the run meaningless.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha_lower > T::zero()) {
            return bad(format!("alpha_lower {} must be positive", self.alpha_lower));
        }
        if !(self.alpha_upper >= self.alpha_lower) || !self.alpha_upper.is_finite() {
            return bad(format!("alpha_upper {} must be finite and at least alpha_lower", self.alpha_upper));
        }
        if !(self.tau > T::one()) {
            return bad(format!("tau {} must exceed 1", self.tau));
        }
        if !(self.delta >= T::zero()) || !self.delta.is_finite() {
            return bad(format!("delta {} must be finite and nonnegative", self.delta));
        }
        if let Some(t) = self.inner_tol {
            if !(t > T::zero()) {
                return bad(format!("inner_tol {t} must be positive"));
            }
        }
        match self.schedule {
            AlphaSchedule::Constant { alpha0 } if !(alpha0 > T::zero()) => {
                return bad(format!("alpha0 {alpha0} must be positive"));
            }
            AlphaSchedule::Geometric { alpha0, ratio } if !(alpha0 > T::zero()) || !(ratio > T::zero() && ratio <= T::one()) => {
                return bad(format!("geometric schedule needs alpha0 > 0 and ratio in (0, 1], got {alpha0}, {ratio}"));
            }
            _ => {}
        }
        let mut warnings = Vec::new();
        let a0 = self.schedule.raw(0);
        if a0 < self.alpha_lower || a0 > self.alpha_upper {
            warnings.push(format!("alpha0 {a0} lies outside [{}, {}] and is clamped", self.alpha_lower, self.alpha_upper));
        }
        if let (Some(eta), Some(gamma)) = (self.eta, self.gamma) {
            let eg = eta * gamma;
            if eg >= T::one() {
                warnings.push(format!("eta * gamma = {eg} is not below 1"));
            } else {
                let need = (T::one() + eg) / (T::one() - eg);
                if !(self.tau > need) {
                    warnings.push(format!("tau {} does not exceed (1 + eta gamma)/(1 - eta gamma) = {need}", self.tau));
                }
            }
            if let Some(rho) = self.rho {
                if !(gamma < rho / T::lit(2.0)) {
                    warnings.push(format!("gamma {gamma} is not below rho / 2 = {}", rho / T::lit(2.0)));
                }
            }
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Discrepancy,
    MaxOuter,
    InnerFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IterateRecord<T> {
    pub u: GridFunction<T>,
    pub xi: GridFunction<T>,
    /// Parameter of the step leaving this iterate.
    pub alpha: T,
    pub residual: T,
    /// Whether the solve producing this iterate converged (always true for `k = 0`).
    pub inner_converged: bool,
    pub inner_iterations: usize,
    pub inner_kkt: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IterationTrace<T> {
    pub iterates: Vec<IterateRecord<T>>,
    pub stop_index: Option<usize>,
    pub stop_reason: StopReason,
    pub ydelta: GridFunction<T>,
    pub delta: T,
    pub tau: T,
    pub warnings: Vec<String>,
}

/// Failed run together with everything computed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("iteration stopped after {} iterates: {source}", trace.iterates.len())]
pub struct IterationFailure<T: Real> {
    pub trace: IterationTrace<T>,
    #[source]
    pub source: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    pub u: GridFunction<T>,
    pub xi: GridFunction<T>,
    pub solve: SolveResult<T>,
}

/// One outer step from `(u_k, xi_k)`; fails if the shifted solve does not converge.
#[allow(clippy::too_many_arguments)]
pub fn step<T: Real>(
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    ydelta: &GridFunction<T>,
    u_k: &GridFunction<T>,
    xi_k: &GridFunction<T>,
    alpha_k: T,
    inner_tol: Option<T>,
    inner_max_iter: usize,
) -> Result<StepOutcome<T>> {
    let prob = TikhonovProblem::new(op, *penalty, ydelta, alpha_k)?.with_shift(xi_k, u_k)?;
    let tol = match inner_tol {
        Some(t) => t,
        None => prob.default_tolerance()?,
    };
    let solve = solver::solve(&prob, u_k, tol, inner_max_iter)?;
    if !solve.converged {
        return Err(Error::ConvergenceFailure { iterations: solve.iterations, residual: solve.kkt_residual.to_f64_lossy() });
    }
    let u = solve.minimizer.clone();
    let xi = update_subgradient(op, ydelta, &u, xi_k, alpha_k)?;
    Ok(StepOutcome { u, xi, solve })
}

/// `xi - (1/alpha) F'(u)* (F(u) - y)`.
pub fn update_subgradient<T: Real>(
    op: &ForwardOperator<T>,
    ydelta: &GridFunction<T>,
    u: &GridFunction<T>,
    xi: &GridFunction<T>,
    alpha: T,
) -> Result<GridFunction<T>> {
    let r = op.apply(u)?.sub(ydelta)?;
    xi.axpy(-T::one() / alpha, &op.adjoint_apply(u, &r)?)
}

fn residual<T: Real>(op: &ForwardOperator<T>, u: &GridFunction<T>, ydelta: &GridFunction<T>) -> Result<T> {
    Ok(op.apply(u)?.sub(ydelta)?.norm())
}

/// Runs the iteration from `(u_0, xi_0)` until the discrepancy principle or
/// `max_outer` stops it.
pub fn run<T: Real>(
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    ydelta: &GridFunction<T>,
    config: &IterationConfig<T>,
    u0: &GridFunction<T>,
    xi0: &GridFunction<T>,
) -> std::result::Result<IterationTrace<T>, IterationFailure<T>> {
    let mut trace = IterationTrace {
        iterates: Vec::new(),
        stop_index: None,
        stop_reason: StopReason::MaxOuter,
        ydelta: ydelta.clone(),
        delta: config.delta,
        tau: config.tau,
        warnings: Vec::new(),
    };
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(source) => {
                    trace.stop_reason = StopReason::InnerFailure;
                    return Err(IterationFailure { trace, source });
                }
            }
        };
    }
    trace.warnings = attempt!(config.validate());
    attempt!(ydelta.check_len(op.range_dim()));
    attempt!(u0.check_len(op.domain_dim()));
    attempt!(u0.check_compatible(xi0));
    attempt!(penalty.check_domain(u0));

    let threshold = if config.delta > T::zero() { config.tau * config.delta } else { T::lit(EXACT_DATA_FLOOR) };
    let r0 = attempt!(residual(op, u0, ydelta));
    trace.iterates.push(IterateRecord {
        u: u0.clone(),
        xi: xi0.clone(),
        alpha: config.alpha_at(0),
        residual: r0,
        inner_converged: true,
        inner_iterations: 0,
        inner_kkt: T::zero(),
    });
    if r0 <= threshold {
        trace.stop_index = Some(0);
        trace.stop_reason = StopReason::Discrepancy;
        return Ok(trace);
    }
    for k in 0..config.max_outer {
        let alpha_k = config.alpha_at(k);
        let (u_k, xi_k) = {
            let last = &trace.iterates[k];
            (last.u.clone(), last.xi.clone())
        };
        let out = attempt!(step(op, penalty, ydelta, &u_k, &xi_k, alpha_k, config.inner_tol, config.inner_max_iter));
        let r = attempt!(residual(op, &out.u, ydelta));
        trace.iterates.push(IterateRecord {
            u: out.u,
            xi: out.xi,
            alpha: config.alpha_at(k + 1),
            residual: r,
            inner_converged: out.solve.converged,
            inner_iterations: out.solve.iterations,
            inner_kkt: out.solve.kkt_residual,
        });
        if r <= threshold {
            trace.stop_index = Some(k + 1);
            trace.stop_reason = StopReason::Discrepancy;
            return Ok(trace);
        }
    }
    Ok(trace)
}

impl<T: Real> IterationTrace<T> {
    pub fn residuals(&self) -> Vec<T> {
        self.iterates.iter().map(|r| r.residual).collect()
    }

    /// Largest increase `residual_{k+1} - residual_k` (negative when strictly decreasing).
    pub fn max_residual_increase(&self) -> T {
        self.iterates.windows(2).map(|w| w[1].residual - w[0].residual).fold(T::neg_infinity(), |m, v| m.max(v))
    }

    pub fn last(&self) -> Option<&IterateRecord<T>> {
        self.iterates.last()
    }

    /// Per-iterate scalars, plus the grids when they are short enough.
    pub fn summary(&self) -> TraceSummary<T> {
        let keep = self.iterates.first().is_some_and(|r| r.u.len() <= GRID_ELISION_THRESHOLD);
        TraceSummary {
            stop_index: self.stop_index,
            stop_reason: self.stop_reason,
            delta: self.delta,
            tau: self.tau,
            warnings: self.warnings.clone(),
            grids_elided: !keep,
            iterates: self
                .iterates
                .iter()
                .enumerate()
                .map(|(k, r)| IterateSummary {
                    k,
                    alpha: r.alpha,
                    residual: r.residual,
                    inner_converged: r.inner_converged,
                    inner_iterations: r.inner_iterations,
                    inner_kkt: r.inner_kkt,
                    u: keep.then(|| r.u.values().to_vec()),
                    xi: keep.then(|| r.xi.values().to_vec()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IterateSummary<T> {
    pub k: usize,
    pub alpha: T,
    pub residual: T,
    pub inner_converged: bool,
    pub inner_iterations: usize,
    pub inner_kkt: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TraceSummary<T> {
    pub stop_index: Option<usize>,
    pub stop_reason: StopReason,
    pub delta: T,
    pub tau: T,
    pub warnings: Vec<String>,
    pub grids_elided: bool,
    pub iterates: Vec<IterateSummary<T>>,
}

/// `xi_0 - sum_{j<=k} (1/alpha_j) F'(u_{j+1})* (F(u_{j+1}) - y)` for the last
/// iterate `k + 1` of the trace.
pub fn closed_form_subgradient<T: Real>(
    trace: &IterationTrace<T>,
    xi0: &GridFunction<T>,
    op: &ForwardOperator<T>,
) -> Result<GridFunction<T>> {
    if trace.iterates.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sum = GridFunction::zeros(xi0.len(), xi0.spacing());
    for w in trace.iterates.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        let r = op.apply(&next.u)?.sub(&trace.ydelta)?;
        let g = op.adjoint_apply(&next.u, &r)?;
        sum = sum.axpy(T::one() / prev.alpha, &g)?;
    }
    xi0.sub(&sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ThreePointRecord<T> {
    pub k: usize,
    /// `D_{xi_{k+1}}(ubar, u_{k+1})`.
    pub distance_next: T,
    /// `D_{xi_k}(ubar, u_k)`.
    pub distance_prev: T,
    /// `D_{xi_k}(u_{k+1}, u_k)`.
    pub step_distance: T,
    /// `<xi_{k+1} - xi_k, u_{k+1} - ubar>`.
    pub pairing: T,
    /// Identity defect relative to the magnitude of its terms.
    pub identity_residual: T,
    /// `|y - F(u_{k+1}) - F'(u_{k+1})(ubar - u_{k+1})| <= c |y - F(u_{k+1})|`.
    pub hypothesis_holds: bool,
    /// The decrease estimate `lhs <= -((1 - c)/alpha_k) |y - F(u_{k+1})|^2 + slack`.
    pub inequality_holds: bool,
    pub inequality_margin: T,
}

/// Evaluates the three-point identity and the Bregman decrease estimate at every step.
pub fn three_point_check<T: Real>(
    trace: &IterationTrace<T>,
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    ubar: &GridFunction<T>,
    c: T,
) -> Result<Vec<ThreePointRecord<T>>> {
    if !(c >= T::zero() && c < T::one()) {
        return Err(Error::InvalidParameter(format!("c = {c} must lie in [0, 1)")));
    }
    ubar.check_len(op.domain_dim())?;
    let hbar = penalty.eval(ubar)?;
    let mut out = Vec::with_capacity(trace.iterates.len().saturating_sub(1));
    for (k, w) in trace.iterates.windows(2).enumerate() {
        let (prev, next) = (&w[0], &w[1]);
        ubar.check_compatible(&next.u)?;
        let d_next = penalty.bregman_value(&next.xi, ubar, &next.u)?;
        let d_prev = penalty.bregman_value(&prev.xi, ubar, &prev.u)?;
        let d_step = penalty.bregman_value(&prev.xi, &next.u, &prev.u)?;
        let pairing = next.xi.sub(&prev.xi)?.inner(&next.u.sub(ubar)?)?;
        let lhs = d_next - d_prev + d_step;
        let scale = hbar.abs()
            + penalty.eval(&next.u)?.abs()
            + penalty.eval(&prev.u)?.abs()
            + next.xi.norm() * (ubar.norm() + next.u.norm())
            + prev.xi.norm() * (ubar.norm() + prev.u.norm() + next.u.norm());
        let scale = scale.max(T::min_positive_value());
        let identity_residual = (lhs - pairing).abs() / scale;

        let fnext = op.apply(&next.u)?;
        let defect = trace.ydelta.sub(&fnext)?;
        let lin = op.derivative_apply(&next.u, &ubar.sub(&next.u)?)?;
        let remainder = defect.sub(&lin)?.norm();
        let res = defect.norm();
        let hypothesis_holds = remainder <= c * res;
        let rhs = -(T::one() - c) / prev.alpha * res * res;
        let margin = rhs + T::lit(THREE_POINT_SLACK) - lhs;
        out.push(ThreePointRecord {
            k,
            distance_next: d_next,
            distance_prev: d_prev,
            step_distance: d_step,
            pairing,
            identity_residual,
            hypothesis_holds,
            inequality_holds: margin >= T::zero(),
            inequality_margin: margin,
        });
    }
    Ok(out)
}

/// `sum_{i <= k* - 2} (1/alpha_i) |y - F(u_{i+1})|^2`, with `k*` the stop index
/// or the last index of an unstopped trace.
pub fn summability_check<T: Real>(trace: &IterationTrace<T>) -> T {
    let Some(last) = trace.iterates.len().checked_sub(1) else {
        return T::zero();
    };
    let kstar = trace.stop_index.unwrap_or(last);
    (0..kstar.saturating_sub(1))
        .map(|i| {
            let r = trace.iterates[i + 1].residual;
            r * r / trace.iterates[i].alpha
        })
        .sum()
}

/// `c = (1/tau)(1 + eta gamma) + eta gamma`.
pub fn stopping_constant<T: Real>(tau: T, eta: T, gamma: T) -> T {
    (T::one() + eta * gamma) / tau + eta * gamma
}

/// Upper bound `(gamma/(tau delta))^2 alpha_upper / (8 (1 - c)) + 1` on the stop index.
pub fn stop_index_bound<T: Real>(gamma: T, tau: T, delta: T, alpha_upper: T, c: T) -> Result<T> {
    if !(c < T::one()) {
        return Err(Error::HypothesisViolated(format!("c = {c} is not below 1")));
    }
    if !(delta > T::zero()) {
        return Err(Error::InvalidParameter("stop index bound needs delta > 0".into()));
    }
    let q = gamma / (tau * delta);
    Ok(q * q * alpha_upper / (T::lit(8.0) * (T::one() - c)) + T::one())
}

/// `gamma^2 / (8 (1 - c))`, the bound on the weighted residual sum.
pub fn summability_bound<T: Real>(gamma: T, c: T) -> T {
    gamma * gamma / (T::lit(8.0) * (T::one() - c))
}

/// `D_{xi_0}(ubar, u_0)` and whether it is below `gamma^2 / 8`.
pub fn initial_distance_check<T: Real>(
    penalty: &Penalty<T>,
    xi0: &GridFunction<T>,
    ubar: &GridFunction<T>,
    u0: &GridFunction<T>,
    gamma: T,
) -> Result<(T, bool)> {
    let d = penalty.bregman_value(xi0, ubar, u0)?;
    Ok((d, d < gamma * gamma / T::lit(8.0)))
}
