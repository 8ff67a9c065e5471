//! Path simulation under the physical and the changed measure, and the
//! statistical oracles built on it.
//!
//! Every path draws from its own ChaCha8 stream, selected by the path index
//! under the run seed, so a run with `2N` paths reproduces the first `N`
//! paths of an `N`-path run bit for bit, whatever the thread count.
//! Reductions are pairwise sums in path order.

mod estimators;
mod feynman_kac;
mod paths;
mod rng;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::criterion::CriterionError;

pub use estimators::{
    estimate_value_direct, martingale_check, simulate_changed_measure, MartingaleCheck, ValueEstimate,
};
pub use feynman_kac::{feynman_kac_oracle, FeynmanKacProblem};
pub use paths::{simulate_physical, InitialState, JumpArrival, PathRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("invalid path configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("policy infeasible on a path at t = {t}, x = {x:?}: margin {margin}")]
    InfeasiblePolicyOnPath { t: f64, x: Vec<f64>, margin: f64 },
    #[error("exact Ornstein-Uhlenbeck steps need a constant factor loading")]
    ExactOuNeedsConstantLoading,
    #[error(transparent)]
    Criterion(#[from] CriterionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FactorScheme {
    #[default]
    Euler,
    ExactOu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub num_paths: usize,
    /// Requested step; the horizon is split into `⌈T/dt⌉` equal steps.
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: FactorScheme,
}

impl PathConfig {
    pub fn new(num_paths: usize, dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            num_paths,
            dt,
            horizon,
            seed,
            scheme: FactorScheme::Euler,
        }
    }

    pub fn with_scheme(self, scheme: FactorScheme) -> Self {
        Self { scheme, ..self }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.num_paths == 0 {
            return Err(McError::InvalidConfig("num_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(McError::InvalidConfig(format!(
                "horizon = {} must be positive",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    pub estimator: String,
    pub mean: f64,
    pub std_error: f64,
    pub num_paths: usize,
}

impl PathStats {
    /// Sample mean and standard error of the mean. Sums are pairwise over
    /// deviations from the first sample, so a constant sample has exactly
    /// its value as mean and zero error.
    pub fn from_samples(estimator: &str, samples: &[f64]) -> Self {
        let n = samples.len();
        let shift = samples.first().copied().unwrap_or(0.0);
        let dev: Vec<f64> = samples.iter().map(|x| x - shift).collect();
        let mean_dev = pairwise_sum(&dev) / n as f64;
        let sq: Vec<f64> = dev.iter().map(|d| (d - mean_dev) * (d - mean_dev)).collect();
        let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
        Self {
            estimator: estimator.to_string(),
            mean: shift + mean_dev,
            std_error: (var / n as f64).sqrt(),
            num_paths: n,
        }
    }

    /// Whether `|mean − target| ≤ k·std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }

    pub fn record(&self, seed: u64, config_hash: &str) -> EstimatorRecord {
        EstimatorRecord {
            estimator: self.estimator.clone(),
            mean: self.mean,
            std_error: self.std_error,
            num_paths: self.num_paths,
            seed,
            config_hash: config_hash.to_string(),
        }
    }
}

/// The JSON form of an estimator result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub estimator: String,
    pub mean: f64,
    pub std_error: f64,
    pub num_paths: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Hex SHA-256 of the compact JSON serialization of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}
