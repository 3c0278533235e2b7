//! TOML experiment configs. Every table rejects unknown keys.

use std::path::Path;

use bregtik::iteration::AlphaSchedule;
use bregtik::problems::ProblemParams;
use bregtik::rates::{AlphaRule, SourceKind};
use bregtik::{Grid, Penalty, PenaltyF64};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Raw text plus parsed value, so reports can embed what was read.
pub struct Loaded<C> {
    pub text: String,
    pub config: C,
}

pub fn load<C: DeserializeOwned>(path: &Path) -> Result<Loaded<C>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
    Ok(Loaded { text, config })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyConfig {
    Quadratic {},
    L1 {},
    NegativeEntropy { floor: Option<f64> },
    QuadraticPlusTv { tv_weight: Option<f64> },
}

impl PenaltyConfig {
    pub fn build(&self) -> Result<PenaltyF64, CliError> {
        let p = match *self {
            PenaltyConfig::Quadratic {} => Penalty::Quadratic,
            PenaltyConfig::L1 {} => Penalty::L1,
            PenaltyConfig::NegativeEntropy { floor } => match floor {
                Some(f) if f > 0.0 => Penalty::NegativeEntropy { floor: f },
                Some(f) => return Err(CliError::Config(format!("penalty.floor {f} must be positive"))),
                None => Penalty::negative_entropy(),
            },
            PenaltyConfig::QuadraticPlusTv { tv_weight } => match tv_weight {
                Some(w) if w >= 0.0 => Penalty::QuadraticPlusTv { tv_weight: w },
                Some(w) => return Err(CliError::Config(format!("penalty.tv_weight {w} must be nonnegative"))),
                None => Penalty::quadratic_plus_tv(),
            },
        };
        Ok(p)
    }
}

fn default_adjoint_trials() -> usize {
    20
}
fn default_bregman_cases() -> usize {
    200
}
fn default_adjoint_tol() -> f64 {
    1e-10
}
fn default_taylor_band() -> [f64; 2] {
    [1.9, 2.1]
}
fn default_bregman_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    bregtik::solver::DEFAULT_MAX_ITER
}
fn default_tau() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}
fn default_bound_tol() -> f64 {
    1e-6
}
fn default_tol_factor() -> f64 {
    1e-12
}
fn default_fixed_point_iterations() -> usize {
    500
}
fn default_samples() -> usize {
    200
}
fn default_nl_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemParams,
    pub penalty: Option<PenaltyConfig>,
    #[serde(default = "default_adjoint_trials")]
    pub adjoint_trials: usize,
    #[serde(default = "default_bregman_cases")]
    pub bregman_cases: usize,
    #[serde(default = "default_adjoint_tol")]
    pub adjoint_tol: f64,
    #[serde(default = "default_taylor_band")]
    pub taylor_band: [f64; 2],
    #[serde(default = "default_bregman_tol")]
    pub bregman_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default)]
    pub seed: u64,
    pub alpha: f64,
    pub delta: f64,
    pub problem: ProblemParams,
    pub penalty: Option<PenaltyConfig>,
    /// KKT tolerance; the problem default when absent.
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateConfig {
    #[serde(default)]
    pub seed: u64,
    pub delta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub max_outer: usize,
    pub schedule: AlphaSchedule<f64>,
    pub alpha_lower: Option<f64>,
    pub alpha_upper: Option<f64>,
    pub inner_tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub inner_max_iter: usize,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
    pub problem: ProblemParams,
    pub penalty: Option<PenaltyConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaGrid {
    pub hi: f64,
    pub lo: f64,
    pub count: usize,
}

/// Shape of `omega` on the cell centres `x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum OmegaProfile {
    Constant {
        value: f64,
    },
    /// `scale ratio^i`.
    Geometric {
        ratio: f64,
        #[serde(default = "default_one")]
        scale: f64,
    },
    /// `scale sin(frequency pi x)`.
    Sine {
        frequency: f64,
        #[serde(default = "default_one")]
        scale: f64,
    },
    /// `scale (1 - x)^exponent`.
    OneMinusXPower {
        exponent: f64,
        #[serde(default = "default_one")]
        scale: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

impl OmegaProfile {
    pub fn build(&self, n: usize) -> Result<Grid, CliError> {
        let h = 1.0 / n as f64;
        let g = match self {
            OmegaProfile::Constant { value } => Grid::constant(n, h, *value),
            OmegaProfile::Geometric { ratio, scale } => Grid::new((0..n).map(|i| scale * ratio.powi(i as i32)).collect(), h)?,
            OmegaProfile::Sine { frequency, scale } => Grid::from_fn(n, h, |x| scale * (frequency * std::f64::consts::PI * x).sin())?,
            OmegaProfile::OneMinusXPower { exponent, scale } => Grid::from_fn(n, h, |x| scale * (1.0 - x).powf(*exponent))?,
            OmegaProfile::Values { values } => {
                if values.len() != n {
                    return Err(CliError::Config(format!("source.omega has {} values, grid has {n}", values.len())));
                }
                Grid::new(values.clone(), h)?
            }
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMethod {
    /// Form `xi` from `omega` and invert the subdifferential (linear operators).
    Invert,
    /// Take the problem's exact solution and solve the source equation for `omega`.
    FromTruth,
    /// Fixed point `ubar = xi` for the quadratic penalty and autoconvolution.
    FixedPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub method: SourceMethod,
    pub omega: Option<OmegaProfile>,
    pub ubar_norm: Option<f64>,
    #[serde(default = "default_fixed_point_iterations")]
    pub fixed_point_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub radius: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_nl_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    /// Noise seed, shared by every noise level.
    #[serde(default)]
    pub seed: u64,
    pub rule: AlphaRule,
    #[serde(default = "default_one")]
    pub constant: f64,
    pub slope_tolerance: f64,
    #[serde(default = "default_bound_tol")]
    pub bound_tol: f64,
    #[serde(default = "default_tol_factor")]
    pub tol_factor: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Constant starting value; zeros (ones for entropy) when absent.
    pub init_constant: Option<f64>,
    pub delta_grid: DeltaGrid,
    pub problem: ProblemParams,
    pub penalty: Option<PenaltyConfig>,
    pub source: SourceConfig,
    pub nonlinearity: Option<NonlinearityConfig>,
}

pub fn penalty_or_default(p: &Option<PenaltyConfig>) -> Result<Option<PenaltyF64>, CliError> {
    p.as_ref().map(|c| c.build()).transpose()
}
