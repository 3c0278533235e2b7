//! Forward operators `F`, their derivatives `F'(u)` and adjoints `F'(u)*`.
//!
//! Adjoints are taken with respect to the spacing-weighted pairings on the
//! domain and range grids. All built-in operators map a grid of `n` cells to
//! a grid of `n` cells with the same spacing, so the adjoint of a linear
//! operator is the transpose of its matrix.

mod checks;

pub use checks::{adjoint_test, estimate_nonlinearity, taylor_remainder, taylor_test, NonlinearityEstimate, EXACTLY_LINEAR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::scalar::Real;

/// Largest grid on which constructors validate adjoints against a dense transpose.
pub const DENSE_CHECK_MAX_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum OperatorKind<T> {
    Identity,
    /// Componentwise scaling by singular values.
    Diagonal {
        sigma: Vec<T>,
    },
    /// Zero-padded convolution, truncated to the central `n` samples.
    Convolution {
        kernel: GridFunction<T>,
    },
    /// `F(u) = u * u` truncated to `[0, 1)`.
    Autoconvolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ForwardOperator<T> {
    kind: OperatorKind<T>,
    domain_dim: usize,
    range_dim: usize,
}

/// A linear map between grids together with its adjoint.
pub trait LinearMap<T: Real> {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    fn forward(&self, x: &GridFunction<T>) -> Result<GridFunction<T>>;
    fn adjoint(&self, w: &GridFunction<T>) -> Result<GridFunction<T>>;
}

/// `F'(at)` viewed as a linear map.
#[derive(Debug, Clone, Copy)]
pub struct Linearization<'a, T> {
    pub op: &'a ForwardOperator<T>,
    pub at: &'a GridFunction<T>,
}

impl<T: Real> LinearMap<T> for Linearization<'_, T> {
    fn domain_dim(&self) -> usize {
        self.op.domain_dim
    }
    fn range_dim(&self) -> usize {
        self.op.range_dim
    }
    fn forward(&self, x: &GridFunction<T>) -> Result<GridFunction<T>> {
        self.op.derivative_apply(self.at, x)
    }
    fn adjoint(&self, w: &GridFunction<T>) -> Result<GridFunction<T>> {
        self.op.adjoint_apply(self.at, w)
    }
}

impl<T: Real> ForwardOperator<T> {
    pub fn identity(n: usize) -> Result<Self> {
        Self::build(OperatorKind::Identity, n)
    }

    pub fn diagonal(sigma: Vec<T>) -> Result<Self> {
        if let Some(i) = sigma.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite singular value at {i}")));
        }
        let n = sigma.len();
        Self::build(OperatorKind::Diagonal { sigma }, n)
    }

    /// Convolution on an `n`-cell grid; the kernel is centred at index `(m - 1) / 2`.
    pub fn convolution(kernel: GridFunction<T>, n: usize) -> Result<Self> {
        Self::build(OperatorKind::Convolution { kernel }, n)
    }

    pub fn autoconvolution(n: usize) -> Result<Self> {
        Self::build(OperatorKind::Autoconvolution, n)
    }

    fn build(kind: OperatorKind<T>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("operator dimension must be positive".into()));
        }
        let op = Self { kind, domain_dim: n, range_dim: n };
        if n <= DENSE_CHECK_MAX_DIM {
            let spacing = match &op.kind {
                OperatorKind::Convolution { kernel } => kernel.spacing(),
                _ => T::one() / T::from_usize_lossy(n),
            };
            let at = GridFunction::from_fn(n, spacing, |x| T::one() + x)?;
            let mismatch = op.dense_adjoint_mismatch(&at)?;
            let scale = T::one() + op.dense_derivative(&at)?.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()));
            if mismatch > T::lit(1e-12) * scale {
                return Err(Error::AdjointMismatch(mismatch.to_f64_lossy()));
            }
        }
        Ok(op)
    }

    pub fn kind(&self) -> &OperatorKind<T> {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            OperatorKind::Identity => "identity",
            OperatorKind::Diagonal { .. } => "diagonal",
            OperatorKind::Convolution { .. } => "convolution",
            OperatorKind::Autoconvolution => "autoconvolution",
        }
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn range_dim(&self) -> usize {
        self.range_dim
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self.kind, OperatorKind::Autoconvolution)
    }

    pub fn linearization<'a>(&'a self, at: &'a GridFunction<T>) -> Linearization<'a, T> {
        Linearization { op: self, at }
    }

    fn check_kernel_spacing(&self, u: &GridFunction<T>) -> Result<()> {
        if let OperatorKind::Convolution { kernel } = &self.kind {
            let tol = T::epsilon() * T::lit(16.0) * kernel.spacing();
            if (kernel.spacing() - u.spacing()).abs() > tol {
                return Err(Error::SpacingMismatch(kernel.spacing().to_f64_lossy(), u.spacing().to_f64_lossy()));
            }
        }
        Ok(())
    }

    /// `F(u)`.
    pub fn apply(&self, u: &GridFunction<T>) -> Result<GridFunction<T>> {
        u.check_len(self.domain_dim)?;
        self.check_kernel_spacing(u)?;
        Ok(match &self.kind {
            OperatorKind::Autoconvolution => u.with_values_raw(causal_product(u.values(), u.values(), u.spacing())),
            _ => self.linear_apply(u),
        })
    }

    fn linear_apply(&self, u: &GridFunction<T>) -> GridFunction<T> {
        match &self.kind {
            OperatorKind::Identity => u.clone(),
            OperatorKind::Diagonal { sigma } => u.with_values_raw(sigma.iter().zip(u.values()).map(|(&s, &v)| s * v).collect()),
            OperatorKind::Convolution { kernel } => {
                let k = kernel.values();
                let c = (k.len() - 1) / 2;
                let n = u.len();
                let h = u.spacing();
                let out = (0..n)
                    .map(|i| {
                        // k[i - j + c] for 0 <= i - j + c < m
                        let j_lo = (i + c + 1).saturating_sub(k.len());
                        let j_hi = (i + c).min(n - 1);
                        let s: T = (j_lo..=j_hi).map(|j| k[i + c - j] * u[j]).sum();
                        h * s
                    })
                    .collect();
                u.with_values_raw(out)
            }
            OperatorKind::Autoconvolution => unreachable!("nonlinear"),
        }
    }

    fn linear_adjoint(&self, w: &GridFunction<T>) -> GridFunction<T> {
        match &self.kind {
            OperatorKind::Identity | OperatorKind::Diagonal { .. } => self.linear_apply(w),
            OperatorKind::Convolution { kernel } => {
                let k = kernel.values();
                let c = (k.len() - 1) / 2;
                let n = w.len();
                let h = w.spacing();
                let out = (0..n)
                    .map(|j| {
                        // sum over i with 0 <= i - j + c < m
                        let i_lo = j.saturating_sub(c);
                        let i_hi = (j + k.len() - 1 - c).min(n - 1);
                        let s: T = (i_lo..=i_hi).map(|i| k[i + c - j] * w[i]).sum();
                        h * s
                    })
                    .collect();
                w.with_values_raw(out)
            }
            OperatorKind::Autoconvolution => unreachable!("nonlinear"),
        }
    }

    /// `F'(u) du`.
    pub fn derivative_apply(&self, u: &GridFunction<T>, du: &GridFunction<T>) -> Result<GridFunction<T>> {
        u.check_len(self.domain_dim)?;
        du.check_compatible(u)?;
        self.check_kernel_spacing(du)?;
        Ok(match &self.kind {
            OperatorKind::Autoconvolution => {
                let two = T::lit(2.0);
                du.with_values_raw(causal_product(u.values(), du.values(), u.spacing()).into_iter().map(|v| two * v).collect())
            }
            _ => self.linear_apply(du),
        })
    }

    /// `F'(u)* w`.
    pub fn adjoint_apply(&self, u: &GridFunction<T>, w: &GridFunction<T>) -> Result<GridFunction<T>> {
        u.check_len(self.domain_dim)?;
        w.check_len(self.range_dim)?;
        w.check_compatible(u)?;
        self.check_kernel_spacing(w)?;
        Ok(match &self.kind {
            OperatorKind::Autoconvolution => {
                // (F'(u)* w)_m = 2 h sum_{i >= m} w_i u_{i - m}
                let n = u.len();
                let h = u.spacing();
                let two_h = T::lit(2.0) * h;
                let uv = u.values();
                let out = (0..n).map(|m| two_h * (m..n).map(|i| w[i] * uv[i - m]).sum::<T>()).collect();
                w.with_values_raw(out)
            }
            _ => self.linear_adjoint(w),
        })
    }

    /// Dense matrix of `F'(u)` (row-major), assembled column by column.
    pub fn dense_derivative(&self, u: &GridFunction<T>) -> Result<Vec<Vec<T>>> {
        let n = self.domain_dim;
        let mut rows = vec![vec![T::zero(); n]; self.range_dim];
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = self.derivative_apply(u, &u.with_values_raw(e))?;
            for (i, row) in rows.iter_mut().enumerate() {
                row[j] = col[i];
            }
        }
        Ok(rows)
    }

    /// Max entrywise gap between the closed-form adjoint and the dense transpose.
    pub fn dense_adjoint_mismatch(&self, u: &GridFunction<T>) -> Result<T> {
        let fwd = self.dense_derivative(u)?;
        let m = self.range_dim;
        let mut worst = T::zero();
        for i in 0..m {
            let mut e = vec![T::zero(); m];
            e[i] = T::one();
            let col = self.adjoint_apply(u, &u.with_values_raw(e))?;
            for (j, &v) in col.values().iter().enumerate() {
                worst = worst.max((v - fwd[i][j]).abs());
            }
        }
        Ok(worst)
    }

    /// Power-iteration estimate of the operator norm of `F'(u)`.
    pub fn derivative_norm_estimate(&self, u: &GridFunction<T>, iterations: usize) -> Result<T> {
        let mut x = GridFunction::from_fn(self.domain_dim, u.spacing(), |t| T::one() + t * T::lit(0.37))?;
        let mut est = T::zero();
        for _ in 0..iterations.max(1) {
            let nx = x.norm();
            if nx == T::zero() {
                return Ok(T::zero());
            }
            x = x.scale(T::one() / nx);
            let y = self.derivative_apply(u, &x)?;
            est = y.norm();
            x = self.adjoint_apply(u, &y)?;
        }
        Ok(est)
    }
}

/// Truncated causal product `(a * b)_i = h sum_{j <= i} a_j b_{i - j}`.
fn causal_product<T: Real>(a: &[T], b: &[T], h: T) -> Vec<T> {
    (0..a.len()).map(|i| h * (0..=i).map(|j| a[j] * b[i - j]).sum::<T>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f64]) -> GridFunction<f64> {
        GridFunction::new(v.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn apply_examples() {
        let d = ForwardOperator::diagonal(vec![1.0, 0.5]).unwrap();
        assert_eq!(d.apply(&g(&[2.0, 2.0])).unwrap().values(), &[2.0, 1.0]);
        let id = ForwardOperator::identity(3).unwrap();
        assert_eq!(id.apply(&g(&[1.0, -4.0, 2.5])).unwrap().values(), &[1.0, -4.0, 2.5]);
        let a = ForwardOperator::autoconvolution(3).unwrap();
        assert_eq!(a.apply(&g(&[1.0, 0.0, 0.0])).unwrap().values(), &[1.0, 0.0, 0.0]);
        let u = GridFunction::new(vec![1.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(a.apply(&u).unwrap().values(), &[0.5, 0.0, 0.0]);
    }

    #[test]
    fn autoconvolution_brute_force() {
        let u = GridFunction::new(vec![0.3f64, -1.2, 0.7, 2.0, 0.1], 0.2).unwrap();
        let a = ForwardOperator::autoconvolution(5).unwrap();
        let fu = a.apply(&u).unwrap();
        let mut oracle = vec![0.0; 5];
        for j in 0..5 {
            for k in 0..5 {
                if j + k < 5 {
                    oracle[j + k] += 0.2 * u[j] * u[k];
                }
            }
        }
        for (x, y) in fu.values().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_examples() {
        let a = ForwardOperator::autoconvolution(4).unwrap();
        let u = GridFunction::new(vec![1.0f64, 2.0, -1.0, 0.5], 0.25).unwrap();
        let zero = GridFunction::zeros(4, 0.25);
        assert_eq!(a.derivative_apply(&u, &zero).unwrap().max_abs(), 0.0);
        let d = a.derivative_apply(&u, &u).unwrap();
        let fu = a.apply(&u).unwrap();
        for (x, y) in d.values().iter().zip(fu.values()) {
            assert!((x - 2.0 * y).abs() < 1e-14);
        }
        // finite-difference oracle (F(u + t u) - F(u)) / t -> 2 F(u)
        let t = 1e-6;
        let fd = a.apply(&u.axpy(t, &u).unwrap()).unwrap().sub(&fu).unwrap().scale(1.0 / t);
        for (x, y) in fd.values().iter().zip(d.values()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn adjoint_examples() {
        let d = ForwardOperator::diagonal(vec![1.0, 0.5]).unwrap();
        let u = g(&[0.0, 0.0]);
        assert_eq!(d.adjoint_apply(&u, &g(&[2.0, 2.0])).unwrap().values(), &[2.0, 1.0]);
        let id = ForwardOperator::identity(2).unwrap();
        assert_eq!(id.adjoint_apply(&u, &g(&[3.0, -1.0])).unwrap().values(), &[3.0, -1.0]);
    }

    #[test]
    fn convolution_adjoint_is_correlation() {
        // asymmetric kernel, centre index 1
        let kernel = g(&[1.0, 2.0, 5.0]);
        let c = ForwardOperator::convolution(kernel, 4).unwrap();
        let u = g(&[0.0; 4]);
        let e0 = g(&[1.0, 0.0, 0.0, 0.0]);
        // forward: column 0 picks k[i + 1] -> (2, 5, 0, 0)
        assert_eq!(c.apply(&e0).unwrap().values(), &[2.0, 5.0, 0.0, 0.0]);
        // adjoint: row 0 of the transpose -> reversed kernel taps
        assert_eq!(c.adjoint_apply(&u, &e0).unwrap().values(), &[2.0, 1.0, 0.0, 0.0]);
        // brute-force pairing over the basis
        for i in 0..4 {
            for j in 0..4 {
                let mut a = vec![0.0; 4];
                a[j] = 1.0;
                let mut b = vec![0.0; 4];
                b[i] = 1.0;
                let lhs = c.apply(&g(&a)).unwrap().inner(&g(&b)).unwrap();
                let rhs = g(&a).inner(&c.adjoint_apply(&u, &g(&b)).unwrap()).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn dimension_checks() {
        let d = ForwardOperator::diagonal(vec![1.0, 0.5]).unwrap();
        assert!(matches!(d.apply(&g(&[1.0])), Err(Error::DimensionMismatch { .. })));
        assert!(d.adjoint_apply(&g(&[1.0, 1.0]), &g(&[1.0, 2.0, 3.0])).is_err());
        assert!(ForwardOperator::<f64>::identity(0).is_err());
    }

    #[test]
    fn convolution_rejects_wrong_spacing() {
        let kernel = GridFunction::new(vec![1.0], 0.5).unwrap();
        let c = ForwardOperator::convolution(kernel, 2).unwrap();
        assert!(matches!(c.apply(&g(&[1.0, 1.0])), Err(Error::SpacingMismatch(..))));
    }

    #[test]
    fn autoconvolution_is_symmetric_bilinear() {
        // F'(u) v = 2 B(u, v) with B symmetric
        let a = ForwardOperator::autoconvolution(6).unwrap();
        let u = GridFunction::new(vec![0.3, 1.0, -0.2, 0.5, 0.9, -1.1], 1.0 / 6.0).unwrap();
        let v = GridFunction::new(vec![1.3, -0.4, 0.8, 0.0, 0.2, 0.6], 1.0 / 6.0).unwrap();
        let uv = a.derivative_apply(&u, &v).unwrap();
        let vu = a.derivative_apply(&v, &u).unwrap();
        assert!(uv.sub(&vu).unwrap().max_abs() < 1e-15);
    }
}
