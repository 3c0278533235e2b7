//! Randomised verification of adjoints, derivatives and nonlinearity constants.

use serde::{Deserialize, Serialize};

use super::ForwardOperator;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::penalty::Penalty;
use crate::rates::fit_loglog_slope;
use crate::rng;
use crate::scalar::Real;

/// Slope reported by [`taylor_test`] when every remainder vanishes.
pub const EXACTLY_LINEAR: f64 = f64::INFINITY;

const TAYLOR_STEPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
const REMAINDER_FLOOR: f64 = 1e-14;
const DISTANCE_FLOOR: f64 = 1e-14;

/// Empirical constants of the two nonlinearity conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NonlinearityEstimate<T> {
    /// Max of `|F(u) - F(ubar) - F'(ubar)(u - ubar)| / D_xi(u, ubar)`.
    pub c_estimate: T,
    /// Max of `|F(v) - F(u) - F'(u)(v - u)| / (|u - v| |F(u) - F(v)|)`.
    pub eta_estimate: T,
    pub samples: usize,
}

/// Max relative violation of `<F'(u) du, w> = <du, F'(u)* w>` over random pairs.
pub fn adjoint_test<T: Real>(op: &ForwardOperator<T>, u: &GridFunction<T>, trials: usize, seed: u64) -> Result<T> {
    let mut rng = rng::seeded(seed);
    let h = u.spacing();
    let scale = op.derivative_norm_estimate(u, 30)?;
    let scale = if scale > T::zero() { scale } else { T::one() };
    let mut worst = T::zero();
    for _ in 0..trials.max(1) {
        let du = rng::standard_normal(&mut rng, op.domain_dim(), h);
        let w = rng::standard_normal(&mut rng, op.range_dim(), h);
        let lhs = op.derivative_apply(u, &du)?.inner(&w)?;
        let rhs = du.inner(&op.adjoint_apply(u, &w)?)?;
        let denom = du.norm() * w.norm() * scale;
        worst = worst.max((lhs - rhs).abs() / denom);
    }
    Ok(worst)
}

/// `F(u + du) - F(u) - F'(u) du`.
pub fn taylor_remainder<T: Real>(op: &ForwardOperator<T>, u: &GridFunction<T>, du: &GridFunction<T>) -> Result<GridFunction<T>> {
    let shifted = op.apply(&u.add(du)?)?;
    let base = op.apply(u)?;
    let lin = op.derivative_apply(u, du)?;
    Ok(shifted.zip_map_unchecked(&base, |a, b| a - b).zip_map_unchecked(&lin, |a, b| a - b))
}

/// Log-log slope of the first-order Taylor remainder against the step size.
///
/// Returns [`EXACTLY_LINEAR`] (`+inf`) when all remainders sit below the
/// rounding floor, which is the expected outcome for linear operators.
pub fn taylor_test<T: Real>(op: &ForwardOperator<T>, u: &GridFunction<T>, du: &GridFunction<T>) -> Result<T> {
    let scale = T::one().max(op.apply(u)?.norm()).max(op.derivative_apply(u, du)?.norm());
    let floor = T::lit(REMAINDER_FLOOR) * scale;
    let mut points = Vec::new();
    for &t in &TAYLOR_STEPS {
        let t = T::lit(t);
        let r = taylor_remainder(op, u, &du.scale(t))?.norm();
        if r > floor {
            points.push((t, r));
        }
    }
    if points.is_empty() {
        return Ok(T::infinity());
    }
    if points.len() < 2 {
        return Err(Error::DegenerateFit("fewer than two remainders above the rounding floor".into()));
    }
    fit_loglog_slope(&points)
}

/// Samples the ball of `radius` around `ubar` and records the worst ratios of
/// both nonlinearity conditions. Linear operators give exact zeros only up to
/// rounding, so remainders below `1e-14` times the data scale are treated as zero.
pub fn estimate_nonlinearity<T: Real>(
    op: &ForwardOperator<T>,
    penalty: &Penalty<T>,
    ubar: &GridFunction<T>,
    xi: &GridFunction<T>,
    radius: T,
    samples: usize,
    seed: u64,
) -> Result<NonlinearityEstimate<T>> {
    if !(radius > T::zero()) {
        return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
    }
    let mut rng = rng::seeded(seed);
    let points: Vec<GridFunction<T>> =
        (0..samples).map(|_| rng::uniform_in_ball(&mut rng, ubar, radius)).filter(|u| penalty.in_domain(u)).collect();
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    let f_bar = op.apply(ubar)?;
    let scale = T::one().max(f_bar.norm());
    let floor = T::lit(REMAINDER_FLOOR) * scale;
    let clip = |r: T| if r > floor { r } else { T::zero() };

    let mut c_est = T::zero();
    for u in &points {
        let d = penalty.bregman_value(xi, u, ubar)?;
        if d < T::lit(DISTANCE_FLOOR) {
            continue;
        }
        let r = clip(taylor_remainder(op, ubar, &u.sub(ubar)?)?.norm());
        c_est = c_est.max(r / d);
    }

    let mut eta_est = T::zero();
    let mut pair = |u: &GridFunction<T>, v: &GridFunction<T>| -> Result<()> {
        let dist = u.sub(v)?.norm();
        let gap = op.apply(u)?.sub(&op.apply(v)?)?.norm();
        let denom = dist * gap;
        if denom < T::lit(DISTANCE_FLOOR) {
            return Ok(());
        }
        let r = clip(taylor_remainder(op, u, &v.sub(u)?)?.norm());
        eta_est = eta_est.max(r / denom);
        Ok(())
    };
    for (i, u) in points.iter().enumerate() {
        pair(ubar, u)?;
        pair(u, ubar)?;
        if let Some(v) = points.get(i + 1) {
            pair(u, v)?;
        }
    }
    Ok(NonlinearityEstimate { c_estimate: c_est, eta_estimate: eta_est, samples: points.len() })
}
