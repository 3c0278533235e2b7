//! Built-in test problems on `[0, 1]` and controlled noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operators::ForwardOperator;
use crate::penalty::Penalty;
use crate::rates::{construct_source, SourceKind};
use crate::rng;
use crate::scalar::Real;

/// Draws after the first that `add_noise` attempts before giving up.
pub const NOISE_RETRIES: usize = 8;

/// Serializable description of a built-in problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemParams {
    Diagonal { n: usize, decay_rate: f64 },
    Deconvolution { n: usize, kernel_width: f64 },
    Autoconvolution { n: usize },
    TvDenoising { signal: Vec<f64> },
    Identity { signal: Vec<f64> },
}

impl ProblemParams {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemParams::Diagonal { .. } => "diagonal",
            ProblemParams::Deconvolution { .. } => "deconvolution",
            ProblemParams::Autoconvolution { .. } => "autoconvolution",
            ProblemParams::TvDenoising { .. } => "tv_denoising",
            ProblemParams::Identity { .. } => "identity",
        }
    }

    pub fn default_penalty<T: Real>(&self) -> Penalty<T> {
        match self {
            ProblemParams::Deconvolution { .. } | ProblemParams::TvDenoising { .. } => Penalty::quadratic_plus_tv(),
            _ => Penalty::Quadratic,
        }
    }

    /// Builds the problem, with the default penalty when `penalty` is `None`.
    pub fn build<T: Real>(&self, penalty: Option<Penalty<T>>) -> Result<ProblemSpec<T>> {
        let penalty = penalty.unwrap_or_else(|| self.default_penalty());
        let cast = |s: &[f64]| s.iter().map(|&v| T::lit(v)).collect::<Vec<T>>();
        let mut spec = match self {
            ProblemParams::Diagonal { n, decay_rate } => make_diagonal(*n, T::lit(*decay_rate), penalty)?,
            ProblemParams::Deconvolution { n, kernel_width } => make_deconvolution(*n, T::lit(*kernel_width))?,
            ProblemParams::Autoconvolution { n } => make_autoconvolution(*n)?,
            ProblemParams::TvDenoising { signal } => make_tv_denoising(cast(signal))?,
            ProblemParams::Identity { signal } => make_identity(cast(signal))?,
        };
        spec.penalty = penalty;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T> {
    pub name: &'static str,
    pub params: ProblemParams,
    pub op: ForwardOperator<T>,
    pub penalty: Penalty<T>,
    pub ubar_true: GridFunction<T>,
    pub y_exact: GridFunction<T>,
    pub grid_n: usize,
    pub spacing: T,
}

impl<T: Real> ProblemSpec<T> {
    fn assemble(params: ProblemParams, op: ForwardOperator<T>, penalty: Penalty<T>, ubar: GridFunction<T>) -> Result<Self> {
        let y = op.apply(&ubar)?;
        Ok(Self { name: params.name(), params, grid_n: ubar.len(), spacing: ubar.spacing(), op, penalty, ubar_true: ubar, y_exact: y })
    }

    /// `|F(ubar) - y|`.
    pub fn consistency_error(&self) -> Result<T> {
        Ok(self.op.apply(&self.ubar_true)?.sub(&self.y_exact)?.norm())
    }

    /// Noisy data at level `delta`.
    pub fn noisy_data(&self, delta: T, seed: u64) -> Result<GridFunction<T>> {
        add_noise(&self.y_exact, delta, seed)
    }

    /// Starting point inside the penalty domain.
    pub fn default_start(&self) -> GridFunction<T> {
        match self.penalty {
            Penalty::NegativeEntropy { .. } => GridFunction::constant(self.grid_n, self.spacing, T::one()),
            _ if !self.op.is_linear() => GridFunction::constant(self.grid_n, self.spacing, T::one()),
            _ => GridFunction::zeros(self.grid_n, self.spacing),
        }
    }
}

fn unit_spacing<T: Real>(n: usize) -> T {
    T::one() / T::from_usize_lossy(n)
}

/// Singular values `decay_rate^i`. For the quadratic and entropy penalties
/// `ubar` carries a type I source with `omega = 1`; otherwise it is a smooth bump.
pub fn make_diagonal<T: Real>(n: usize, decay_rate: T, penalty: Penalty<T>) -> Result<ProblemSpec<T>> {
    if n < 2 {
        return Err(Error::InvalidGrid(format!("diagonal problem needs n >= 2, got {n}")));
    }
    if !(decay_rate > T::zero() && decay_rate <= T::one()) {
        return Err(Error::InvalidParameter(format!("decay rate {decay_rate} must lie in (0, 1]")));
    }
    let sigma: Vec<T> = (0..n).map(|i| decay_rate.powi(i as i32)).collect();
    let op = ForwardOperator::diagonal(sigma)?;
    let h = unit_spacing::<T>(n);
    let ubar = match penalty {
        Penalty::Quadratic | Penalty::NegativeEntropy { .. } => {
            let omega = GridFunction::constant(n, h, T::one());
            construct_source(&op, &penalty, SourceKind::TypeI, &omega, None)?.ubar
        }
        _ => GridFunction::from_fn(n, h, |x| (T::PI() * x).sin())?,
    };
    let params = ProblemParams::Diagonal { n, decay_rate: decay_rate.to_f64_lossy() };
    ProblemSpec::assemble(params, op, penalty, ubar)
}

/// Gaussian kernel sampled at multiples of `spacing`, truncated at four widths
/// (at most `n - 1` samples each side) and normalised to unit mass.
pub fn gaussian_kernel<T: Real>(n: usize, width: T) -> Result<GridFunction<T>> {
    let h = unit_spacing::<T>(n);
    let half = (T::lit(4.0) * width / h).ceil().to_f64_lossy() as usize;
    let half = half.clamp(0, n - 1);
    let two_w2 = T::lit(2.0) * width * width;
    let raw: Vec<T> = (0..=2 * half)
        .map(|j| {
            let x = (T::from_usize_lossy(j) - T::from_usize_lossy(half)) * h;
            (-(x * x) / two_w2).exp()
        })
        .collect();
    let mass = raw.iter().copied().sum::<T>() * h;
    GridFunction::new(raw.into_iter().map(|v| v / mass).collect(), h)
}

/// Box on `[0.2, 0.4)` plus a ramp on `[0.6, 0.9)` that drops back to zero.
pub fn box_ramp<T: Real>(x: T) -> T {
    if x >= T::lit(0.2) && x < T::lit(0.4) {
        T::one()
    } else if x >= T::lit(0.6) && x < T::lit(0.9) {
        T::lit(2.0) * (x - T::lit(0.6))
    } else {
        T::zero()
    }
}

pub fn make_deconvolution<T: Real>(n: usize, kernel_width: T) -> Result<ProblemSpec<T>> {
    if n < 8 {
        return Err(Error::InvalidGrid(format!("deconvolution needs n >= 8, got {n}")));
    }
    if !(kernel_width > T::zero()) {
        return Err(Error::InvalidParameter(format!("kernel width {kernel_width} must be positive")));
    }
    let op = ForwardOperator::convolution(gaussian_kernel(n, kernel_width)?, n)?;
    let ubar = GridFunction::from_fn(n, unit_spacing(n), box_ramp)?;
    let params = ProblemParams::Deconvolution { n, kernel_width: kernel_width.to_f64_lossy() };
    ProblemSpec::assemble(params, op, Penalty::quadratic_plus_tv(), ubar)
}

/// Autoconvolution with the positive profile `1 + 0.3 sin(2 pi x)`.
pub fn make_autoconvolution<T: Real>(n: usize) -> Result<ProblemSpec<T>> {
    if n < 8 {
        return Err(Error::InvalidGrid(format!("autoconvolution needs n >= 8, got {n}")));
    }
    let op = ForwardOperator::autoconvolution(n)?;
    let ubar = GridFunction::from_fn(n, unit_spacing(n), |x| T::one() + T::lit(0.3) * (T::TAU() * x).sin())?;
    ProblemSpec::assemble(ProblemParams::Autoconvolution { n }, op, Penalty::Quadratic, ubar)
}

/// Identity operator with the quadratic-plus-TV penalty and `ubar = signal`.
pub fn make_tv_denoising<T: Real>(signal: Vec<T>) -> Result<ProblemSpec<T>> {
    let n = signal.len();
    if n < 4 {
        return Err(Error::InvalidGrid(format!("tv denoising needs n >= 4, got {n}")));
    }
    let params = ProblemParams::TvDenoising { signal: signal.iter().map(|v| v.to_f64_lossy()).collect() };
    let ubar = GridFunction::new(signal, unit_spacing(n))?;
    ProblemSpec::assemble(params, ForwardOperator::identity(n)?, Penalty::quadratic_plus_tv(), ubar)
}

/// Identity operator with the quadratic penalty and `ubar = signal`.
pub fn make_identity<T: Real>(signal: Vec<T>) -> Result<ProblemSpec<T>> {
    let n = signal.len();
    if n == 0 {
        return Err(Error::InvalidGrid("identity problem needs a nonempty signal".into()));
    }
    let params = ProblemParams::Identity { signal: signal.iter().map(|v| v.to_f64_lossy()).collect() };
    let ubar = GridFunction::new(signal, unit_spacing(n))?;
    ProblemSpec::assemble(params, ForwardOperator::identity(n)?, Penalty::Quadratic, ubar)
}

/// `y + delta e / |e|` for a seeded standard normal `e`, so that `|y - y_delta| = delta`.
pub fn add_noise<T: Real>(y: &GridFunction<T>, delta: T, seed: u64) -> Result<GridFunction<T>> {
    if !(delta >= T::zero()) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("noise level {delta} must be finite and nonnegative")));
    }
    if delta == T::zero() {
        return Ok(y.clone());
    }
    if y.is_empty() {
        return Err(Error::DegenerateNoise(0));
    }
    for attempt in 0..=NOISE_RETRIES {
        let mut rng = rng::seeded(seed.wrapping_add(attempt as u64));
        let e = rng::standard_normal(&mut rng, y.len(), y.spacing());
        let norm = e.norm();
        if norm > T::zero() && norm.is_finite() {
            return y.axpy(delta / norm, &e);
        }
    }
    Err(Error::DegenerateNoise(NOISE_RETRIES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_singular_values() {
        let p = make_diagonal::<f64>(3, 0.5, Penalty::Quadratic).unwrap();
        match p.op.kind() {
            crate::operators::OperatorKind::Diagonal { sigma } => assert_eq!(sigma, &vec![1.0, 0.5, 0.25]),
            _ => panic!("wrong kind"),
        }
        let p = make_diagonal::<f64>(16, 0.5, Penalty::Quadratic).unwrap();
        if let crate::operators::OperatorKind::Diagonal { sigma } = p.op.kind() {
            assert_eq!(sigma[0] / sigma[15], 32768.0);
        }
        let p = make_diagonal::<f64>(5, 1.0, Penalty::L1).unwrap();
        if let crate::operators::OperatorKind::Diagonal { sigma } = p.op.kind() {
            assert!(sigma.iter().all(|&s| s == 1.0));
        }
        assert!(make_diagonal::<f64>(1, 0.5, Penalty::Quadratic).is_err());
        assert!(make_diagonal::<f64>(4, 0.0, Penalty::Quadratic).is_err());
    }

    #[test]
    fn narrow_kernel_approaches_identity() {
        let n = 64;
        let h = 1.0 / n as f64;
        let p = make_deconvolution::<f64>(n, h / 10.0).unwrap();
        let u = GridFunction::from_fn(n, h, |x| (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        let fu = p.op.apply(&u).unwrap();
        assert!(fu.sub(&u).unwrap().norm() < 1e-12);
    }

    #[test]
    fn constant_is_attenuated_only_near_boundary() {
        let n = 64;
        let h = 1.0 / n as f64;
        let p = make_deconvolution::<f64>(n, 0.03).unwrap();
        let y = p.op.apply(&GridFunction::constant(n, h, 1.0)).unwrap();
        // kernel half width ceil(0.12 / h) = 8 samples
        for i in 8..n - 8 {
            assert!((y[i] - 1.0).abs() < 1e-12);
        }
        let k = gaussian_kernel::<f64>(n, 0.03).unwrap();
        let edge: f64 = k.values()[8..].iter().sum::<f64>() * h;
        assert!((y[0] - edge).abs() < 1e-14 && y[0] < 1.0);
        assert!(y.values().iter().all(|&v| v <= 1.0 + 1e-12));
    }

    #[test]
    fn autoconvolution_of_one_is_ramp() {
        let n = 8;
        let op = make_autoconvolution::<f64>(n).unwrap().op;
        let y = op.apply(&GridFunction::constant(n, 1.0 / n as f64, 1.0)).unwrap();
        for i in 0..n {
            let brute: f64 = (0..n).flat_map(|j| (0..n).map(move |k| (j, k))).filter(|(j, k)| j + k == i).count() as f64 / n as f64;
            assert!((y[i] - brute).abs() < 1e-15);
        }
        let zero = GridFunction::zeros(n, 1.0 / n as f64);
        assert_eq!(op.apply(&zero).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn tv_denoising_example() {
        let p = make_tv_denoising(vec![1.0f64, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.y_exact, p.ubar_true);
        assert!((p.penalty.eval(&p.ubar_true).unwrap() - (0.5 * 0.25 * 2.0 + 1.0)).abs() < 1e-15);
        assert!(make_tv_denoising(vec![1.0f64, 0.0]).is_err());
    }

    #[test]
    fn params_round_trip_and_build() {
        let cases = vec![
            ProblemParams::Diagonal { n: 16, decay_rate: 0.7 },
            ProblemParams::Deconvolution { n: 32, kernel_width: 0.05 },
            ProblemParams::Autoconvolution { n: 16 },
            ProblemParams::TvDenoising { signal: vec![1.0, 1.0, 0.0, 0.0] },
            ProblemParams::Identity { signal: vec![1.0, 0.0] },
        ];
        for p in cases {
            let json = serde_json::to_string(&p).unwrap();
            let back: ProblemParams = serde_json::from_str(&json).unwrap();
            assert_eq!(p, back);
            let spec = back.build::<f64>(None).unwrap();
            assert!(spec.consistency_error().unwrap() <= 1e-12);
            assert_eq!(spec.name, p.name());
        }
    }

    #[test]
    fn noise_examples() {
        let y = GridFunction::from_fn(16, 1.0 / 16.0, |x: f64| x * x).unwrap();
        assert_eq!(add_noise(&y, 0.0, 5).unwrap(), y);
        let a = add_noise(&y, 0.01, 5).unwrap();
        assert!((a.sub(&y).unwrap().norm() - 0.01).abs() <= 1e-14 * 0.01);
        assert_eq!(a, add_noise(&y, 0.01, 5).unwrap());
        assert_ne!(a, add_noise(&y, 0.01, 6).unwrap());
        assert!(add_noise(&y, -1.0, 5).is_err());
        let empty = GridFunction::<f64>::new(vec![], 1.0);
        if let Ok(e) = empty {
            assert!(matches!(add_noise(&e, 0.1, 0), Err(Error::DegenerateNoise(_))));
        }
    }

    proptest! {
        #[test]
        fn noise_level_is_exact(delta in 1e-8f64..10.0, seed in any::<u64>(), n in 1usize..64) {
            let y = GridFunction::from_fn(n, 1.0 / n as f64, |x: f64| (3.0 * x).cos()).unwrap();
            let yd = add_noise(&y, delta, seed).unwrap();
            prop_assert!((yd.sub(&y).unwrap().norm() - delta).abs() <= 1e-14 * delta);
        }
    }
}
