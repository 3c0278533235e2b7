//! Convex penalties, their subgradients, proximal maps and Bregman distances.
//!
//! All quantities use the spacing-weighted pairing of [`GridFunction`]: a
//! subgradient `xi` of `h` at `u` satisfies `h(v) >= h(u) + <xi, v - u>` with
//! `<a, b> = h_grid * sum a_i b_i`. Under this convention the gradient of the
//! quadratic penalty `1/2 |u|^2` is `u` itself.

pub mod tv;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::scalar::Real;

/// Default positivity floor of the negative entropy.
pub const ENTROPY_FLOOR: f64 = 1e-12;

const ENTROPY_NEWTON_CAP: usize = 200;

/// A proper convex functional on grid functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum Penalty<T> {
    /// `1/2 h sum u_i^2`
    Quadratic,
    /// `h sum |u_i|`
    L1,
    /// `h sum u_i log u_i`, defined for `u_i >= floor`.
    NegativeEntropy { floor: T },
    /// `1/2 h sum u_i^2 + w sum |u_{i+1} - u_i|`
    QuadraticPlusTv { tv_weight: T },
}

/// Outcome of a Bregman distance evaluation `D_xi(v, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BregmanRecord<T> {
    pub distance: T,
    pub xi: GridFunction<T>,
    pub v: GridFunction<T>,
    pub u: GridFunction<T>,
}

impl<T: Real> Penalty<T> {
    pub fn negative_entropy() -> Self {
        Penalty::NegativeEntropy { floor: T::lit(ENTROPY_FLOOR) }
    }

    /// Composite penalty with unit TV weight.
    pub fn quadratic_plus_tv() -> Self {
        Penalty::QuadraticPlusTv { tv_weight: T::one() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Penalty::Quadratic => "quadratic",
            Penalty::L1 => "l1",
            Penalty::NegativeEntropy { .. } => "negative_entropy",
            Penalty::QuadraticPlusTv { .. } => "quadratic_plus_tv",
        }
    }

    /// Whether `h` is twice differentiable on the interior of its domain.
    pub fn is_smooth(&self) -> bool {
        matches!(self, Penalty::Quadratic | Penalty::NegativeEntropy { .. })
    }

    pub fn check_domain(&self, u: &GridFunction<T>) -> Result<()> {
        if let Some(index) = u.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::DomainViolation { index, value: u[index].to_f64_lossy() });
        }
        if let Penalty::NegativeEntropy { floor } = *self {
            if let Some(index) = u.values().iter().position(|&v| v < floor) {
                return Err(Error::DomainViolation { index, value: u[index].to_f64_lossy() });
            }
        }
        Ok(())
    }

    pub fn in_domain(&self, u: &GridFunction<T>) -> bool {
        self.check_domain(u).is_ok()
    }

    /// `h(u)`.
    pub fn eval(&self, u: &GridFunction<T>) -> Result<T> {
        self.check_domain(u)?;
        let h = u.spacing();
        let half = T::lit(0.5);
        Ok(match *self {
            Penalty::Quadratic => half * u.norm_sq(),
            Penalty::L1 => h * u.values().iter().map(|v| v.abs()).sum::<T>(),
            Penalty::NegativeEntropy { .. } => h * u.values().iter().map(|&v| v * v.ln()).sum::<T>(),
            Penalty::QuadraticPlusTv { tv_weight } => half * u.norm_sq() + tv_weight * u.total_variation(),
        })
    }

    /// Deterministic selection of an element of `dh(u)`; kinks use `sign(0) = 0`.
    pub fn subgradient(&self, u: &GridFunction<T>) -> Result<GridFunction<T>> {
        self.check_domain(u)?;
        Ok(match *self {
            Penalty::Quadratic => u.clone(),
            Penalty::L1 => u.map(Real::sign0),
            Penalty::NegativeEntropy { .. } => u.map(|v| T::one() + v.ln()),
            Penalty::QuadraticPlusTv { tv_weight } => {
                let vals = u.values();
                let n = vals.len();
                let c = tv_weight / u.spacing();
                let q: Vec<T> = vals.windows(2).map(|w| (w[1] - w[0]).sign0()).collect();
                let xi = (0..n)
                    .map(|i| {
                        let left = if i > 0 { q[i - 1] } else { T::zero() };
                        let right = if i + 1 < n { q[i] } else { T::zero() };
                        vals[i] + c * (left - right)
                    })
                    .collect();
                u.with_values_raw(xi)
            }
        })
    }

    /// Largest violation of the exact characterisation of `xi in dh(u)`;
    /// zero means membership holds exactly.
    pub fn subgradient_violation(&self, u: &GridFunction<T>, xi: &GridFunction<T>) -> Result<T> {
        self.check_domain(u)?;
        u.check_compatible(xi)?;
        let vals = u.values();
        let xs = xi.values();
        let worst = |it: &mut dyn Iterator<Item = T>| it.fold(T::zero(), |m, v| m.max(v));
        Ok(match *self {
            Penalty::Quadratic => worst(&mut vals.iter().zip(xs).map(|(&a, &b)| (a - b).abs())),
            Penalty::L1 => worst(&mut vals.iter().zip(xs).map(|(&a, &b)| {
                if a == T::zero() {
                    (b.abs() - T::one()).max(T::zero())
                } else {
                    (b - a.sign0()).abs()
                }
            })),
            Penalty::NegativeEntropy { .. } => worst(&mut vals.iter().zip(xs).map(|(&a, &b)| (T::one() + a.ln() - b).abs())),
            Penalty::QuadraticPlusTv { tv_weight } => {
                // xi - u = (w / h) D^T q with |q| <= 1 and q = sign(Du) off the kinks
                let c = u.spacing() / tv_weight;
                let n = vals.len();
                let mut q = T::zero();
                let mut v = T::zero();
                for i in 0..n {
                    let r = (xs[i] - vals[i]) * c;
                    if i + 1 == n {
                        v = v.max((q - r).abs());
                        break;
                    }
                    q = q - r;
                    v = v.max(q.abs() - T::one());
                    let jump = vals[i + 1] - vals[i];
                    if jump != T::zero() {
                        v = v.max((q - jump.sign0()).abs());
                    }
                }
                v
            }
        })
    }

    /// `D_xi(v, u) = h(v) - h(u) - <xi, v - u>`.
    pub fn bregman_distance(&self, xi: &GridFunction<T>, v: &GridFunction<T>, u: &GridFunction<T>) -> Result<BregmanRecord<T>> {
        let distance = self.bregman_value(xi, v, u)?;
        Ok(BregmanRecord { distance, xi: xi.clone(), v: v.clone(), u: u.clone() })
    }

    /// Scalar part of [`Penalty::bregman_distance`] without copying the inputs.
    pub fn bregman_value(&self, xi: &GridFunction<T>, v: &GridFunction<T>, u: &GridFunction<T>) -> Result<T> {
        v.check_compatible(u)?;
        v.check_compatible(xi)?;
        let hv = self.eval(v)?;
        let hu = self.eval(u)?;
        let pair = xi.values().iter().zip(v.values().iter().zip(u.values())).map(|(&x, (&a, &b))| x * (a - b)).sum::<T>() * u.spacing();
        Ok(hv - hu - pair)
    }

    /// `argmin_u 1/2 |u - z|^2 + t h(u)` in the weighted norm.
    pub fn prox(&self, t: T, z: &GridFunction<T>) -> Result<GridFunction<T>> {
        if !(t > T::zero()) {
            return Err(Error::InvalidParameter(format!("prox step {t} must be positive")));
        }
        Ok(match *self {
            Penalty::Quadratic => z.scale(T::one() / (T::one() + t)),
            Penalty::L1 => z.map(|v| v.sign0() * (v.abs() - t).max(T::zero())),
            Penalty::NegativeEntropy { floor } => {
                let vals = z.values().iter().map(|&v| entropy_prox_scalar(v, t).map(|x| x.max(floor))).collect::<Result<Vec<T>>>()?;
                z.with_values_raw(vals)
            }
            Penalty::QuadraticPlusTv { tv_weight } => {
                let shrink = T::one() + t;
                let scaled: Vec<T> = z.values().iter().map(|&v| v / shrink).collect();
                let lambda = t * tv_weight / (z.spacing() * shrink);
                z.with_values_raw(tv::tv_denoise(&scaled, lambda))
            }
        })
    }

    /// Upper bound `M` on `<h''(w) v, v> / |v|^2` for `w` on the segment `[a, b]`.
    pub fn curvature_bound(&self, a: &GridFunction<T>, b: &GridFunction<T>) -> Result<T> {
        match self {
            Penalty::Quadratic => Ok(T::one()),
            Penalty::NegativeEntropy { .. } => {
                self.check_domain(a)?;
                self.check_domain(b)?;
                let lo = a.values().iter().chain(b.values()).fold(T::infinity(), |m, &v| m.min(v));
                Ok(T::one() / lo)
            }
            _ => Err(Error::NotSmooth(self.name())),
        }
    }
}

/// Solves `x - z + t (1 + ln x) = 0` for `x > 0` by Newton's method on `w = ln x`.
fn entropy_prox_scalar<T: Real>(z: T, t: T) -> Result<T> {
    let rhs = z - t;
    // phi(w) = e^w + t w - rhs is convex and increasing
    let mut w = if rhs > t { rhs.ln() } else { rhs / t };
    let tol = T::epsilon() * T::lit(4.0);
    for _ in 0..ENTROPY_NEWTON_CAP {
        let ew = w.exp();
        let phi = ew + t * w - rhs;
        let step = phi / (ew + t);
        w = w - step;
        if step.abs() <= tol * (T::one() + w.abs()) {
            return Ok(w.exp());
        }
    }
    Err(Error::ConvergenceFailure { iterations: ENTROPY_NEWTON_CAP, residual: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn g(v: &[f64]) -> GridFunction<f64> {
        GridFunction::new(v.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(Penalty::Quadratic.eval(&g(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(Penalty::Quadratic.eval(&g(&[2.0])).unwrap(), 2.0);
        assert_eq!(Penalty::quadratic_plus_tv().eval(&g(&[1.0, 3.0])).unwrap(), 7.0);
        assert_eq!(Penalty::<f64>::L1.eval(&g(&[1.0, -2.0])).unwrap(), 3.0);
    }

    #[test]
    fn entropy_domain() {
        let p = Penalty::<f64>::negative_entropy();
        assert!(matches!(p.eval(&g(&[1.0, -1.0])), Err(Error::DomainViolation { index: 1, .. })));
        assert!(p.eval(&g(&[1.0, 0.0])).is_err());
        assert_eq!(p.eval(&g(&[1.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(Penalty::Quadratic.subgradient(&g(&[1.0, -2.0])).unwrap().values(), &[1.0, -2.0]);
        assert_eq!(Penalty::L1.subgradient(&g(&[2.0, 0.0, -3.0])).unwrap().values(), &[1.0, 0.0, -1.0]);
        let xi = Penalty::negative_entropy().subgradient(&g(&[1.0, E])).unwrap();
        assert!((xi[0] - 1.0).abs() < 1e-15 && (xi[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn tv_subgradient_is_member() {
        let p = Penalty::QuadraticPlusTv { tv_weight: 0.7 };
        let u = GridFunction::new(vec![1.0, 1.0, 3.0, 0.0, 0.0, 2.0], 0.25).unwrap();
        let xi = p.subgradient(&u).unwrap();
        assert!(p.subgradient_violation(&u, &xi).unwrap() < 1e-14);
        let bad = xi.axpy(1.0, &GridFunction::constant(6, 0.25, 1.0)).unwrap();
        assert!(p.subgradient_violation(&u, &bad).unwrap() > 0.1);
    }

    #[test]
    fn bregman_examples() {
        let q = Penalty::Quadratic;
        let d = q.bregman_distance(&g(&[1.0]), &g(&[3.0]), &g(&[1.0])).unwrap();
        assert_eq!(d.distance, 2.0);
        let d = Penalty::L1.bregman_distance(&g(&[1.0, -1.0]), &g(&[1.0, 1.0]), &g(&[2.0, -1.0])).unwrap();
        assert_eq!(d.distance, 2.0);
        for p in [Penalty::Quadratic, Penalty::L1, Penalty::negative_entropy(), Penalty::quadratic_plus_tv()] {
            let u = g(&[0.5, 2.0, 1.5]);
            let xi = p.subgradient(&u).unwrap();
            assert_eq!(p.bregman_value(&xi, &u, &u).unwrap(), 0.0);
        }
    }

    #[test]
    fn bregman_dimension_mismatch() {
        let r = Penalty::Quadratic.bregman_value(&g(&[1.0]), &g(&[1.0, 2.0]), &g(&[1.0]));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn prox_examples() {
        assert_eq!(Penalty::Quadratic.prox(1.0, &g(&[2.0])).unwrap().values(), &[1.0]);
        assert_eq!(Penalty::L1.prox(1.0, &g(&[3.0, -0.5])).unwrap().values(), &[2.0, 0.0]);
        let x = Penalty::quadratic_plus_tv().prox(0.5, &g(&[4.0, 4.0, 4.0])).unwrap();
        for v in x.values() {
            assert!((v - 8.0 / 3.0).abs() < 1e-14);
        }
        assert!(Penalty::Quadratic.prox(0.0, &g(&[1.0])).is_err());
    }

    #[test]
    fn prox_constant_by_grid_search() {
        // constant candidates c: objective 3 * (1/2 (c - 4)^2 + 0.5 * 1/2 c^2)
        let obj = |c: f64| 3.0 * (0.5 * (c - 4.0).powi(2) + 0.25 * c * c);
        let best = (0..=40000).map(|i| i as f64 * 1e-4).min_by(|a, b| obj(*a).partial_cmp(&obj(*b)).unwrap()).unwrap();
        assert!((best - 8.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn entropy_prox_solves_optimality() {
        let p = Penalty::negative_entropy();
        let z = g(&[-3.0, 0.0, 0.5, 2.0, 40.0]);
        for t in [1e-3, 0.3, 1.0, 7.0] {
            let x = p.prox(t, &z).unwrap();
            for (xi, zi) in x.values().iter().zip(z.values()) {
                let r = xi - zi + t * (1.0 + xi.ln());
                if *xi == ENTROPY_FLOOR {
                    // constrained minimiser sits on the floor: objective increasing there
                    assert!(r >= 0.0, "t={t} z={zi} r={r}");
                } else {
                    assert!(r.abs() < 1e-10 * (1.0 + zi.abs()), "t={t} z={zi} r={r}");
                }
            }
        }
    }

    #[test]
    fn curvature_bounds() {
        let a = g(&[0.5, 2.0]);
        let b = g(&[0.25, 1.0]);
        assert_eq!(Penalty::Quadratic.curvature_bound(&a, &b).unwrap(), 1.0);
        assert_eq!(Penalty::negative_entropy().curvature_bound(&a, &b).unwrap(), 4.0);
        assert!(matches!(Penalty::<f64>::L1.curvature_bound(&a, &b), Err(Error::NotSmooth(_))));
    }
}
