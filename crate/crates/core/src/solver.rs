//! Minimisation of the Tikhonov functional
//! `J(u) = 1/2 |F(u) - y|^2 + alpha h(u)` and of its Bregman-shifted variant
//! `1/2 |F(u) - y|^2 + alpha D_xi(u, u_k)`.
//!
//! Linear operators use an accelerated proximal gradient method with
//! backtracking on the Lipschitz constant of the misfit and a restart whenever
//! the objective increases. Nonlinear operators use a damped Gauss-Newton outer
//! loop whose linearised subproblems go through the same linear path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operators::{ForwardOperator, LinearMap};
use crate::penalty::Penalty;
use crate::scalar::Real;

pub const DEFAULT_MAX_ITER: usize = 20_000;
const MAX_HALVINGS: usize = 60;
const MAX_BACKTRACKS: usize = 100;
const POWER_ITERATIONS: usize = 30;

/// Bregman shift `(xi_k, u_k)`: the penalty becomes `D_{xi_k}(u, u_k)`.
#[derive(Debug, Clone, Copy)]
pub struct BregmanShift<'a, T> {
    pub xi: &'a GridFunction<T>,
    pub base: &'a GridFunction<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct TikhonovProblem<'a, T> {
    pub op: &'a ForwardOperator<T>,
    pub penalty: Penalty<T>,
    pub ydelta: &'a GridFunction<T>,
    pub alpha: T,
    pub shift: Option<BregmanShift<'a, T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SolveResult<T> {
    pub minimizer: GridFunction<T>,
    pub objective_value: T,
    pub iterations: usize,
    pub kkt_residual: T,
    pub converged: bool,
    /// Momentum restarts triggered by an objective increase.
    pub restarts: usize,
    /// Accepted iterates whose objective exceeded their predecessor's.
    pub descent_violations: usize,
    /// The misfit is nonconvex; the minimizer is a stationary point.
    pub nonconvex: bool,
}

impl<'a, T: Real> TikhonovProblem<'a, T> {
    pub fn new(op: &'a ForwardOperator<T>, penalty: Penalty<T>, ydelta: &'a GridFunction<T>, alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha {alpha} must be positive")));
        }
        ydelta.check_len(op.range_dim())?;
        Ok(Self { op, penalty, ydelta, alpha, shift: None })
    }

    pub fn with_shift(mut self, xi: &'a GridFunction<T>, base: &'a GridFunction<T>) -> Result<Self> {
        xi.check_len(self.op.domain_dim())?;
        base.check_compatible(xi)?;
        self.shift = Some(BregmanShift { xi, base });
        Ok(self)
    }

    /// Default stopping tolerance `1e-9 (1 + |F* y|)`, evaluated at zero for nonlinear `F`.
    pub fn default_tolerance(&self) -> Result<T> {
        let at = GridFunction::zeros(self.op.domain_dim(), self.ydelta.spacing());
        let fty = self.op.adjoint_apply(&at, self.ydelta)?.norm();
        Ok(T::lit(1e-9) * (T::one() + fty))
    }

    /// Full objective, including the constant terms of the Bregman shift.
    pub fn objective(&self, u: &GridFunction<T>) -> Result<T> {
        let misfit = T::lit(0.5) * self.op.apply(u)?.sub(self.ydelta)?.norm_sq();
        let reg = match &self.shift {
            None => self.penalty.eval(u)?,
            Some(s) => self.penalty.bregman_value(s.xi, u, s.base)?,
        };
        Ok(misfit + self.alpha * reg)
    }

    pub fn misfit_gradient(&self, u: &GridFunction<T>) -> Result<GridFunction<T>> {
        let r = self.op.apply(u)?.sub(self.ydelta)?;
        self.op.adjoint_apply(u, &r)
    }
}

/// Linear composite problem `1/2 |M x - b|^2 - alpha <xi, x> + alpha h(x)`.
struct LinearComposite<'a, T, M> {
    map: &'a M,
    rhs: &'a GridFunction<T>,
    xi: Option<&'a GridFunction<T>>,
    penalty: Penalty<T>,
    alpha: T,
}

struct InnerOutcome<T> {
    x: GridFunction<T>,
    kkt: T,
    iterations: usize,
    converged: bool,
    restarts: usize,
    violations: usize,
    lipschitz: T,
}

impl<T: Real, M: LinearMap<T>> LinearComposite<'_, T, M> {
    fn gradient(&self, x: &GridFunction<T>) -> Result<(GridFunction<T>, GridFunction<T>)> {
        let r = self.map.forward(x)?.sub(self.rhs)?;
        let mut g = self.map.adjoint(&r)?;
        if let Some(xi) = self.xi {
            g = g.axpy(-self.alpha, xi)?;
        }
        Ok((g, r))
    }

    fn value(&self, x: &GridFunction<T>, residual: &GridFunction<T>) -> Result<T> {
        let mut v = T::lit(0.5) * residual.norm_sq() + self.alpha * self.penalty.eval(x)?;
        if let Some(xi) = self.xi {
            v = v - self.alpha * xi.inner(x)?;
        }
        Ok(v)
    }

    fn lipschitz_estimate(&self, like: &GridFunction<T>) -> Result<T> {
        let mut x = like.map(|_| T::one());
        let mut est = T::zero();
        for _ in 0..POWER_ITERATIONS {
            let nx = x.norm();
            if nx == T::zero() {
                break;
            }
            x = x.scale(T::one() / nx);
            let y = self.map.adjoint(&self.map.forward(&x)?)?;
            est = y.norm();
            x = y;
        }
        Ok(est.max(T::lit(1e-12)))
    }

    fn solve(&self, init: &GridFunction<T>, tol: T, max_iter: usize, l_hint: Option<T>) -> Result<InnerOutcome<T>> {
        let mut l = match l_hint {
            Some(l) => l,
            None => self.lipschitz_estimate(init)?,
        };
        let (_, r0) = self.gradient(init)?;
        let mut x = init.clone();
        let mut fx = self.value(&x, &r0)?;
        let mut y = x.clone();
        let mut theta = T::one();
        let mut restarted = false;
        let mut restarts = 0;
        let mut violations = 0;
        let mut kkt = T::infinity();
        let slack = T::lit(1e-15);

        for it in 1..=max_iter {
            let (grad_y, _) = self.gradient(&y)?;
            let mut backtracks = 0;
            let x_new = loop {
                let z = y.axpy(-T::one() / l, &grad_y)?;
                let cand = self.penalty.prox(self.alpha / l, &z)?;
                let d = cand.sub(&y)?;
                let md = self.map.forward(&d)?.norm_sq();
                if md <= l * d.norm_sq() * (T::one() + T::lit(1e-12)) || backtracks >= MAX_BACKTRACKS {
                    break cand;
                }
                l = l + l;
                backtracks += 1;
            };
            let (grad_new, r_new) = self.gradient(&x_new)?;
            let f_new = self.value(&x_new, &r_new)?;
            let mapping = y.sub(&x_new)?.scale(l);
            kkt = grad_new.sub(&grad_y)?.add(&mapping)?.norm();
            if kkt <= tol {
                return Ok(InnerOutcome { x: x_new, kkt, iterations: it, converged: true, restarts, violations, lipschitz: l });
            }
            if f_new > fx + slack * (T::one() + fx.abs()) {
                if !restarted {
                    restarts += 1;
                    restarted = true;
                    theta = T::one();
                    y = x.clone();
                    continue;
                }
                violations += 1;
            }
            let theta_new = (T::one() + (T::one() + T::lit(4.0) * theta * theta).sqrt()) / T::lit(2.0);
            let beta = (theta - T::one()) / theta_new;
            y = x_new.axpy(beta, &x_new.sub(&x)?)?;
            x = x_new;
            fx = f_new;
            theta = theta_new;
            restarted = false;
        }
        Ok(InnerOutcome { x, kkt, iterations: max_iter, converged: false, restarts, violations, lipschitz: l })
    }
}

/// Minimises the problem from `init`; non-convergence is reported through
/// `converged = false` together with the last iterate.
pub fn solve<T: Real>(prob: &TikhonovProblem<'_, T>, init: &GridFunction<T>, tol: T, max_iter: usize) -> Result<SolveResult<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    init.check_len(prob.op.domain_dim())?;
    prob.penalty.check_domain(init)?;
    if prob.op.is_linear() {
        solve_linear(prob, init, tol, max_iter)
    } else {
        solve_gauss_newton(prob, init, tol, max_iter)
    }
}

fn solve_linear<T: Real>(prob: &TikhonovProblem<'_, T>, init: &GridFunction<T>, tol: T, max_iter: usize) -> Result<SolveResult<T>> {
    let map = prob.op.linearization(init);
    let inner =
        LinearComposite { map: &map, rhs: prob.ydelta, xi: prob.shift.as_ref().map(|s| s.xi), penalty: prob.penalty, alpha: prob.alpha };
    let out = inner.solve(init, tol, max_iter, None)?;
    Ok(SolveResult {
        objective_value: prob.objective(&out.x)?,
        minimizer: out.x,
        iterations: out.iterations,
        kkt_residual: out.kkt,
        converged: out.converged,
        restarts: out.restarts,
        descent_violations: out.violations,
        nonconvex: false,
    })
}

/// One proximal gradient step on the true objective from `u`, with
/// backtracking on the descent lemma. Returns the new point, its composite
/// gradient residual and the accepted Lipschitz constant.
fn true_prox_step<T: Real>(prob: &TikhonovProblem<'_, T>, u: &GridFunction<T>, mut l: T) -> Result<(GridFunction<T>, T, T)> {
    let xi = prob.shift.as_ref().map(|s| s.xi);
    let smooth = |x: &GridFunction<T>| -> Result<(T, GridFunction<T>)> {
        let r = prob.op.apply(x)?.sub(prob.ydelta)?;
        let mut g = prob.op.adjoint_apply(x, &r)?;
        let mut f = T::lit(0.5) * r.norm_sq();
        if let Some(xi) = xi {
            g = g.axpy(-prob.alpha, xi)?;
            f = f - prob.alpha * xi.inner(x)?;
        }
        Ok((f, g))
    };
    let (fu, gu) = smooth(u)?;
    let mut backtracks = 0;
    loop {
        let z = u.axpy(-T::one() / l, &gu)?;
        let x = prob.penalty.prox(prob.alpha / l, &z)?;
        let d = x.sub(u)?;
        let (fx, gx) = smooth(&x)?;
        let model = fu + gu.inner(&d)? + T::lit(0.5) * l * d.norm_sq();
        let slack = T::lit(1e-13) * (T::one() + fu.abs());
        if fx <= model + slack || backtracks >= MAX_BACKTRACKS {
            let kkt = gx.sub(&gu)?.add(&d.scale(-l))?.norm();
            return Ok((x, kkt, l));
        }
        l = l + l;
        backtracks += 1;
    }
}

fn solve_gauss_newton<T: Real>(prob: &TikhonovProblem<'_, T>, init: &GridFunction<T>, tol: T, max_iter: usize) -> Result<SolveResult<T>> {
    let mut u = init.clone();
    let mut obj_u = prob.objective(&u)?;
    let mut used = 0usize;
    let mut restarts = 0usize;
    let mut violations = 0usize;
    let mut l_true = {
        let n = prob.op.derivative_norm_estimate(&u, POWER_ITERATIONS)?;
        (n * n).max(T::lit(1e-12))
    };
    let mut kkt;

    loop {
        let (x_plus, k_plus, l_acc) = true_prox_step(prob, &u, l_true)?;
        l_true = l_acc;
        used += 1;
        kkt = k_plus;
        if kkt <= tol {
            let obj = prob.objective(&x_plus)?;
            return Ok(SolveResult {
                minimizer: x_plus,
                objective_value: obj,
                iterations: used,
                kkt_residual: kkt,
                converged: true,
                restarts,
                descent_violations: violations,
                nonconvex: true,
            });
        }
        if used >= max_iter {
            break;
        }

        // linearised subproblem around u: min 1/2 |J x - (J u - r)|^2 + alpha (shifted) h(x)
        let map = prob.op.linearization(&u);
        let r = prob.op.apply(&u)?.sub(prob.ydelta)?;
        let rhs = map.forward(&u)?.sub(&r)?;
        let sub = LinearComposite { map: &map, rhs: &rhs, xi: prob.shift.as_ref().map(|s| s.xi), penalty: prob.penalty, alpha: prob.alpha };
        let sub_tol = (tol * T::lit(0.1)).max(kkt * T::lit(1e-2));
        let budget = max_iter.saturating_sub(used).max(1);
        let out = sub.solve(&u, sub_tol, budget, None)?;
        used += out.iterations;
        restarts += out.restarts;
        violations += out.violations;
        let _ = out.lipschitz;

        let direction = out.x.sub(&u)?;
        // objective differences below this are rounding noise
        let noise = T::lit(64.0) * T::epsilon() * (obj_u.abs() + prob.ydelta.norm_sq());
        let mut step = T::one();
        let mut accepted = None;
        for halving in 0..=MAX_HALVINGS {
            let cand = u.axpy(step, &direction)?;
            if prob.penalty.in_domain(&cand) {
                let obj = prob.objective(&cand)?;
                if obj < obj_u || (halving == 0 && out.converged && obj <= obj_u + noise) {
                    accepted = Some((cand, obj));
                    break;
                }
            }
            step = step * T::lit(0.5);
        }
        if accepted.is_none() {
            let obj = prob.objective(&x_plus)?;
            if obj < obj_u {
                accepted = Some((x_plus, obj));
            }
        }
        match accepted {
            Some((cand, obj)) => {
                u = cand;
                obj_u = obj;
            }
            None => break,
        }
        if used >= max_iter {
            break;
        }
    }
    Ok(SolveResult {
        minimizer: u,
        objective_value: obj_u,
        iterations: used,
        kkt_residual: kkt,
        converged: false,
        restarts,
        descent_violations: violations,
        nonconvex: true,
    })
}

/// Exact solution of the weighted normal equations `(F* F + alpha I) u = F* y`
/// by a dense Cholesky factorisation; the oracle for quadratic penalties.
pub fn solve_closed_form<T>(op: &ForwardOperator<T>, alpha: T, ydelta: &GridFunction<T>) -> Result<GridFunction<T>>
where
    T: Real + nalgebra::RealField,
{
    if !op.is_linear() {
        return Err(Error::InvalidParameter("closed form requires a linear operator".into()));
    }
    if !(alpha > <T as num_traits::Zero>::zero()) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} must be positive")));
    }
    ydelta.check_len(op.range_dim())?;
    let at = GridFunction::zeros(op.domain_dim(), ydelta.spacing());
    let rows = op.dense_derivative(&at)?;
    let (m, n) = (op.range_dim(), op.domain_dim());
    let mat = nalgebra::DMatrix::<T>::from_fn(m, n, |i, j| rows[i][j]);
    let normal = mat.transpose() * &mat + nalgebra::DMatrix::<T>::identity(n, n) * alpha;
    let rhs = mat.transpose() * nalgebra::DVector::<T>::from_column_slice(ydelta.values());
    let chol = normal.cholesky().ok_or(Error::SingularSystem)?;
    let sol = chol.solve(&rhs);
    GridFunction::new(sol.iter().copied().collect(), ydelta.spacing())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f64]) -> GridFunction<f64> {
        GridFunction::new(v.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn objective_examples() {
        let id = ForwardOperator::identity(1).unwrap();
        let y0 = g(&[0.0]);
        let p = TikhonovProblem::new(&id, Penalty::Quadratic, &y0, 1.0).unwrap();
        assert_eq!(p.objective(&g(&[0.0])).unwrap(), 0.0);
        let y2 = g(&[2.0]);
        let p = TikhonovProblem::new(&id, Penalty::Quadratic, &y2, 1.0).unwrap();
        assert_eq!(p.objective(&g(&[1.0])).unwrap(), 1.0);
        let uk = g(&[0.7]);
        let xik = g(&[0.7]);
        let ps = p.with_shift(&xik, &uk).unwrap();
        assert!((ps.objective(&uk).unwrap() - 0.5 * 1.3f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_alpha() {
        let id = ForwardOperator::identity(1).unwrap();
        let y = g(&[1.0]);
        assert!(TikhonovProblem::new(&id, Penalty::Quadratic, &y, 0.0).is_err());
        assert!(TikhonovProblem::new(&id, Penalty::Quadratic, &y, -1.0).is_err());
    }

    #[test]
    fn identity_quadratic() {
        let id = ForwardOperator::identity(2).unwrap();
        let y = g(&[1.0, 0.0]);
        let p = TikhonovProblem::new(&id, Penalty::Quadratic, &y, 1.0).unwrap();
        let r = solve(&p, &g(&[0.0, 0.0]), 1e-12, 100).unwrap();
        assert!(r.converged);
        assert!((r.minimizer[0] - 0.5).abs() < 1e-12 && r.minimizer[1].abs() < 1e-12);
    }

    #[test]
    fn identity_l1_soft_threshold() {
        let id = ForwardOperator::identity(2).unwrap();
        let y = g(&[3.0, -0.5]);
        let p = TikhonovProblem::new(&id, Penalty::L1, &y, 1.0).unwrap();
        let r = solve(&p, &g(&[0.0, 0.0]), 1e-12, 100).unwrap();
        assert!((r.minimizer[0] - 2.0).abs() < 1e-12 && r.minimizer[1].abs() < 1e-12);
    }

    #[test]
    fn diagonal_matches_closed_form() {
        let op = ForwardOperator::diagonal(vec![1.0, 0.5, 0.25]).unwrap();
        let ubar = g(&[1.0, 1.0, 1.0]);
        let y = op.apply(&ubar).unwrap();
        let p = TikhonovProblem::new(&op, Penalty::Quadratic, &y, 0.1).unwrap();
        let r = solve(&p, &g(&[0.0; 3]), 1e-13, 20_000).unwrap();
        let cf = solve_closed_form(&op, 0.1, &y).unwrap();
        for i in 0..3 {
            let s = [1.0, 0.5, 0.25][i];
            assert!((cf[i] - s * s / (s * s + 0.1)).abs() < 1e-14);
            assert!((r.minimizer[i] - cf[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn closed_form_identity() {
        let id = ForwardOperator::identity(1).unwrap();
        let u = solve_closed_form(&id, 1.0, &g(&[2.0])).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-15);
        let auto = ForwardOperator::autoconvolution(2).unwrap();
        assert!(solve_closed_form(&auto, 1.0, &g(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn entropy_solution_stays_positive() {
        let op = ForwardOperator::diagonal(vec![1.0, 0.6, 0.3, 0.1]).unwrap();
        let y = g(&[0.2, -0.4, 1.0, 0.05]);
        let p = TikhonovProblem::new(&op, Penalty::negative_entropy(), &y, 0.05).unwrap();
        let r = solve(&p, &g(&[1.0; 4]), 1e-10, 20_000).unwrap();
        assert!(r.converged);
        assert!(r.minimizer.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn gauss_newton_autoconvolution() {
        let n = 16;
        let h = 1.0 / n as f64;
        let op = ForwardOperator::autoconvolution(n).unwrap();
        let ubar = GridFunction::from_fn(n, h, |x| 1.0 + 0.5 * (3.0 * x).sin()).unwrap();
        let y = op.apply(&ubar).unwrap();
        let p = TikhonovProblem::new(&op, Penalty::Quadratic, &y, 1e-3).unwrap();
        let r = solve(&p, &GridFunction::constant(n, h, 1.0), 1e-10, 20_000).unwrap();
        assert!(r.converged, "kkt {}", r.kkt_residual);
        assert!(r.nonconvex);
        assert!(r.objective_value <= p.objective(&ubar).unwrap());
    }
}
