//! Real-valued functions sampled on a uniform 1D grid.
//!
//! Every element of the primal space, the data space and their duals is a
//! [`GridFunction`]. Duals are identified with primal vectors through the
//! spacing-weighted pairing `<a, b> = h * sum_i a_i b_i`, so adjoints of
//! operators between equally spaced grids are plain matrix transposes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GridFunction<T> {
    values: Vec<T>,
    spacing: T,
}

impl<T: Real> GridFunction<T> {
    /// Validating constructor: non-empty, finite values and positive spacing.
    pub fn new(values: Vec<T>, spacing: T) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidGrid("no values".into()));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at index {i}")));
        }
        Ok(Self { values, spacing })
    }

    /// Builds a grid function from already validated parts.
    pub(crate) fn from_raw(values: Vec<T>, spacing: T) -> Self {
        debug_assert!(!values.is_empty());
        Self { values, spacing }
    }

    pub fn zeros(n: usize, spacing: T) -> Self {
        Self::from_raw(vec![T::zero(); n.max(1)], spacing)
    }

    pub fn constant(n: usize, spacing: T, value: T) -> Self {
        Self::from_raw(vec![value; n.max(1)], spacing)
    }

    /// Samples `f` at the cell centres `x_i = (i + 1/2) h` of `[0, n h]`.
    pub fn from_fn(n: usize, spacing: T, f: impl Fn(T) -> T) -> Result<Self> {
        let half = T::lit(0.5);
        let values = (0..n).map(|i| f((T::from_usize_lossy(i) + half) * spacing)).collect();
        Self::new(values, spacing)
    }

    /// Cell centres of the grid.
    pub fn points(&self) -> Vec<T> {
        let half = T::lit(0.5);
        (0..self.len()).map(|i| (T::from_usize_lossy(i) + half) * self.spacing).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Checks that `other` lives on the same grid.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        let tol = T::epsilon() * T::lit(16.0) * self.spacing.abs().max(other.spacing.abs());
        if (self.spacing - other.spacing).abs() > tol {
            return Err(Error::SpacingMismatch(self.spacing.to_f64_lossy(), other.spacing.to_f64_lossy()));
        }
        Ok(())
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.len() });
        }
        Ok(())
    }

    /// Spacing-weighted pairing `h * sum a_i b_i`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.check_compatible(other)?;
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &Self) -> T {
        let s: T = self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum();
        s * self.spacing
    }

    pub fn norm_sq(&self) -> T {
        self.inner_unchecked(self)
    }

    /// Spacing-weighted Euclidean norm.
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.values.iter().map(|&v| f(v)).collect(), self.spacing)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.zip_map_unchecked(other, f))
    }

    pub(crate) fn zip_map_unchecked(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self::from_raw(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(), self.spacing)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: T, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + c * b)
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        self.check_len(values.len())?;
        Self::new(values, self.spacing)
    }

    pub(crate) fn with_values_raw(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.len());
        Self::from_raw(values, self.spacing)
    }

    /// Grid reflection `i -> n - 1 - i`.
    pub fn reversed(&self) -> Self {
        let mut v = self.values.clone();
        v.reverse();
        Self::from_raw(v, self.spacing)
    }

    /// Unweighted forward-difference total variation `sum |u_{i+1} - u_i|`.
    pub fn total_variation(&self) -> T {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn cast<U: Real>(&self) -> GridFunction<U> {
        GridFunction::from_raw(self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(), U::lit(self.spacing.to_f64_lossy()))
    }
}

impl<T: Real> std::ops::Index<usize> for GridFunction<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}
