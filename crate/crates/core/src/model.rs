//! Market model data and validation of the standing assumptions.
//!
//! A [`MarketModel`] carries the affine factor dynamics, the money-market
//! rate, the risky asset drifts and volatilities, and a finite jump measure.
//! [`validate_model`] checks every standing assumption and produces a
//! [`ValidatedModel`] with the excess-return quantities `â = a − a0·1` and
//! `Â = A − 1·A0ᵀ` populated. Every solver in the crate takes a
//! `ValidatedModel`; nothing downstream re-checks the assumptions.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold on the smallest eigenvalue of `ΣΣᵀ`, scaled by
/// `trace(ΣΣᵀ)/m`.
pub const PD_RELATIVE_THRESHOLD: f64 = 1e-12;

/// Relative singular-value threshold used for the rank of `Â`.
pub const RANK_RELATIVE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(
        "Sigma Sigma^T is not positive definite: smallest eigenvalue {min_eigenvalue:e} \
         does not exceed threshold {threshold:e}"
    )]
    SigmaNotPositiveDefinite { min_eigenvalue: f64, threshold: f64 },
    #[error("asset {asset} has no {missing} jump atom")]
    JumpSignCoverageViolated { asset: usize, missing: &'static str },
    #[error("atom {atom} has mark {value} < -1 for asset {asset}")]
    MarkBelowMinusOne { atom: usize, asset: usize, value: f64 },
    #[error("atom {atom} has non-positive intensity {value}")]
    NonPositiveIntensity { atom: usize, value: f64 },
}

/// Every violation found by [`validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<ModelError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} model violation(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "; {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

/// A point mass of the image jump measure: relative price jump `mark`
/// arriving at rate `intensity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpAtom {
    pub mark: Vec<f64>,
    pub intensity: f64,
    /// Whether the atom's mean effect is compensated in the price dynamics.
    pub compensated: bool,
}

impl JumpAtom {
    pub fn new(mark: Vec<f64>, intensity: f64, compensated: bool) -> Self {
        Self {
            mark,
            intensity,
            compensated,
        }
    }

    #[inline]
    pub(crate) fn dot(&self, h: &[f64]) -> f64 {
        self.mark.iter().zip(h).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpMeasure {
    pub atoms: Vec<JumpAtom>,
}

impl JumpMeasure {
    pub fn new(atoms: Vec<JumpAtom>) -> Self {
        Self { atoms }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Coordinate-wise extremes `(γ_min, γ_max)` over the atoms.
    pub fn mark_bounds(&self, m: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for atom in &self.atoms {
            for (i, &v) in atom.mark.iter().enumerate().take(m) {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        (lo, hi)
    }
}

/// The factor diffusion loading `Λ`, possibly tabulated in time.
///
/// Tabulated loadings are interpolated linearly between knots and held
/// constant outside the table.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorLoading {
    Constant(DMatrix<f64>),
    Tabulated { times: Vec<f64>, values: Vec<DMatrix<f64>> },
}

impl FactorLoading {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            FactorLoading::Constant(l) => l.shape(),
            FactorLoading::Tabulated { values, .. } => values.first().map(|v| v.shape()).unwrap_or((0, 0)),
        }
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self, FactorLoading::Tabulated { .. })
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        match self {
            FactorLoading::Constant(l) => l.clone(),
            FactorLoading::Tabulated { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return values[0].clone();
                }
                if t >= times[last] {
                    return values[last].clone();
                }
                let k = times.partition_point(|&s| s <= t).saturating_sub(1).min(last - 1);
                let w = (t - times[k]) / (times[k + 1] - times[k]);
                &values[k] * (1.0 - w) + &values[k + 1] * w
            }
        }
    }
}

/// Coefficients of the factor, money-market and asset dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    /// `b`: factor drift intercept (n).
    pub factor_intercept: DVector<f64>,
    /// `B`: factor mean reversion (n×n).
    pub mean_reversion: DMatrix<f64>,
    /// `Λ`: factor diffusion loading (n×M).
    pub factor_loading: FactorLoading,
    /// `a0`: money-market rate intercept.
    pub rate_intercept: f64,
    /// `A0`: money-market rate loading (n).
    pub rate_loading: DVector<f64>,
    /// `a`: asset drift intercept (m).
    pub asset_intercept: DVector<f64>,
    /// `A`: asset drift loading (m×n).
    pub asset_loading: DMatrix<f64>,
    /// `Σ`: asset diffusion loading (m×M).
    pub asset_volatility: DMatrix<f64>,
    pub jumps: JumpMeasure,
    /// Permits an empty jump measure (unbounded feasible set).
    pub pure_diffusion: bool,
}

impl MarketModel {
    pub fn factor_count(&self) -> usize {
        self.factor_intercept.len()
    }

    pub fn asset_count(&self) -> usize {
        self.asset_intercept.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.asset_volatility.ncols()
    }
}

/// How the Brownian dimension relates to `n` and `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NoiseLayout {
    /// `M = n + m`: factor and asset noise drawn from one `(n+m)`-dimensional W.
    FactorAndAsset,
    /// `M = m`: the filtered model, driven by the m-dimensional innovations.
    Innovations,
}

/// A model that passed every assumption check. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedModel {
    raw: MarketModel,
    layout: NoiseLayout,
    excess_drift: DVector<f64>,
    excess_loading: DMatrix<f64>,
    asset_covariance: DMatrix<f64>,
    sigma_min_eigenvalue: f64,
    excess_loading_rank: usize,
    // cached for constant loadings
    loading_cross: Option<DMatrix<f64>>,
    factor_covariance: Option<DMatrix<f64>>,
}

/// Checks the standing assumptions and the dimensional consistency of `raw`, computes
/// the excess-return coefficients and the rank flag for `Â`.
pub fn validate_model(raw: MarketModel) -> Result<ValidatedModel, ValidationErrors> {
    validate_with_layout(raw, NoiseLayout::FactorAndAsset)
}

pub(crate) fn validate_with_layout(raw: MarketModel, layout: NoiseLayout) -> Result<ValidatedModel, ValidationErrors> {
    let mut errors = Vec::new();
    let n = raw.factor_count();
    let m = raw.asset_count();
    let noise = raw.noise_dim();

    let mut dim = |cond: bool, msg: String| {
        if !cond {
            errors.push(ModelError::DimensionMismatch(msg));
        }
    };
    dim(n >= 1, "factor count must be at least 1".into());
    dim(m >= 1, "asset count must be at least 1".into());
    dim(
        raw.mean_reversion.shape() == (n, n),
        format!("B is {:?}, expected ({n}, {n})", raw.mean_reversion.shape()),
    );
    dim(
        raw.rate_loading.len() == n,
        format!("A0 has length {}, expected {n}", raw.rate_loading.len()),
    );
    dim(
        raw.asset_loading.shape() == (m, n),
        format!("A is {:?}, expected ({m}, {n})", raw.asset_loading.shape()),
    );
    dim(
        raw.asset_volatility.nrows() == m,
        format!("Sigma has {} rows, expected {m}", raw.asset_volatility.nrows()),
    );
    let expected_noise = match layout {
        NoiseLayout::FactorAndAsset => n + m,
        NoiseLayout::Innovations => m,
    };
    dim(
        noise == expected_noise,
        format!("noise dimension is {noise}, expected {expected_noise}"),
    );
    dim(
        raw.factor_loading.shape() == (n, noise),
        format!("Lambda is {:?}, expected ({n}, {noise})", raw.factor_loading.shape()),
    );
    if let FactorLoading::Tabulated { times, values } = &raw.factor_loading {
        dim(
            !times.is_empty() && times.len() == values.len(),
            "tabulated Lambda needs one matrix per knot".into(),
        );
        dim(
            values.iter().all(|v| v.shape() == (n, noise)),
            "tabulated Lambda has inconsistent shapes".into(),
        );
        dim(
            times.windows(2).all(|w| w[1] > w[0]),
            "tabulated Lambda knots must increase strictly".into(),
        );
    }
    for (j, atom) in raw.jumps.atoms.iter().enumerate() {
        dim(
            atom.mark.len() == m,
            format!("atom {j} mark has length {}, expected {m}", atom.mark.len()),
        );
    }
    if !errors.is_empty() {
        return Err(ValidationErrors(errors));
    }

    let finite = |name: &str, it: &mut dyn Iterator<Item = f64>, errors: &mut Vec<ModelError>| {
        for v in it {
            if !v.is_finite() {
                errors.push(ModelError::NonFinite(name.to_string()));
                return;
            }
        }
    };
    finite("b", &mut raw.factor_intercept.iter().copied(), &mut errors);
    finite("B", &mut raw.mean_reversion.iter().copied(), &mut errors);
    match &raw.factor_loading {
        FactorLoading::Constant(l) => finite("Lambda", &mut l.iter().copied(), &mut errors),
        FactorLoading::Tabulated { times, values } => {
            finite("Lambda knots", &mut times.iter().copied(), &mut errors);
            for v in values {
                finite("Lambda", &mut v.iter().copied(), &mut errors);
            }
        }
    }
    finite("a0", &mut std::iter::once(raw.rate_intercept), &mut errors);
    finite("A0", &mut raw.rate_loading.iter().copied(), &mut errors);
    finite("a", &mut raw.asset_intercept.iter().copied(), &mut errors);
    finite("A", &mut raw.asset_loading.iter().copied(), &mut errors);
    finite("Sigma", &mut raw.asset_volatility.iter().copied(), &mut errors);
    for atom in &raw.jumps.atoms {
        finite(
            "atoms",
            &mut atom.mark.iter().copied().chain(std::iter::once(atom.intensity)),
            &mut errors,
        );
    }
    if !errors.is_empty() {
        return Err(ValidationErrors(errors));
    }

    let asset_covariance = &raw.asset_volatility * raw.asset_volatility.transpose();
    let eig = SymmetricEigen::new(asset_covariance.clone());
    let sigma_min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = PD_RELATIVE_THRESHOLD * asset_covariance.trace() / m as f64;
    if !(sigma_min_eigenvalue > threshold) {
        errors.push(ModelError::SigmaNotPositiveDefinite {
            min_eigenvalue: sigma_min_eigenvalue,
            threshold,
        });
    }

    for (j, atom) in raw.jumps.atoms.iter().enumerate() {
        if !(atom.intensity > 0.0) {
            errors.push(ModelError::NonPositiveIntensity {
                atom: j,
                value: atom.intensity,
            });
        }
        for (i, &v) in atom.mark.iter().enumerate() {
            if v < -1.0 {
                errors.push(ModelError::MarkBelowMinusOne {
                    atom: j,
                    asset: i,
                    value: v,
                });
            }
        }
    }
    if raw.jumps.is_empty() {
        if !raw.pure_diffusion {
            for asset in 0..m {
                errors.push(ModelError::JumpSignCoverageViolated {
                    asset,
                    missing: "negative or positive",
                });
            }
        }
    } else {
        let (lo, hi) = raw.jumps.mark_bounds(m);
        for asset in 0..m {
            if !(lo[asset] < 0.0) {
                errors.push(ModelError::JumpSignCoverageViolated {
                    asset,
                    missing: "negative",
                });
            }
            if !(hi[asset] > 0.0) {
                errors.push(ModelError::JumpSignCoverageViolated {
                    asset,
                    missing: "positive",
                });
            }
        }
    }
    if !errors.is_empty() {
        return Err(ValidationErrors(errors));
    }

    let ones = DVector::from_element(m, 1.0);
    let excess_drift = &raw.asset_intercept - &ones * raw.rate_intercept;
    let excess_loading = &raw.asset_loading - &ones * raw.rate_loading.transpose();
    let excess_loading_rank = numerical_rank(&excess_loading);

    let (loading_cross, factor_covariance) = match &raw.factor_loading {
        FactorLoading::Constant(l) => (Some(l * raw.asset_volatility.transpose()), Some(l * l.transpose())),
        FactorLoading::Tabulated { .. } => (None, None),
    };

    Ok(ValidatedModel {
        raw,
        layout,
        excess_drift,
        excess_loading,
        asset_covariance,
        sigma_min_eigenvalue,
        excess_loading_rank,
        loading_cross,
        factor_covariance,
    })
}

/// Rank by singular values above `RANK_RELATIVE_THRESHOLD × σ_max`.
pub fn numerical_rank(mat: &DMatrix<f64>) -> usize {
    if mat.is_empty() {
        return 0;
    }
    let sv = mat.clone().singular_values();
    let largest = sv.iter().copied().fold(0.0_f64, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RELATIVE_THRESHOLD * largest).count()
}

impl ValidatedModel {
    pub fn raw(&self) -> &MarketModel {
        &self.raw
    }

    pub fn into_raw(self) -> MarketModel {
        self.raw
    }

    /// Re-runs validation on the underlying data.
    pub fn revalidate(&self) -> Result<ValidatedModel, ValidationErrors> {
        validate_with_layout(self.raw.clone(), self.layout)
    }

    pub fn n(&self) -> usize {
        self.raw.factor_count()
    }

    pub fn m(&self) -> usize {
        self.raw.asset_count()
    }

    pub fn noise_dim(&self) -> usize {
        self.raw.noise_dim()
    }

    pub fn is_filtered(&self) -> bool {
        self.layout == NoiseLayout::Innovations
    }

    /// `â = a − a0·1`.
    pub fn excess_drift(&self) -> &DVector<f64> {
        &self.excess_drift
    }

    /// `Â = A − 1·A0ᵀ`.
    pub fn excess_loading(&self) -> &DMatrix<f64> {
        &self.excess_loading
    }

    /// `ΣΣᵀ`.
    pub fn asset_covariance(&self) -> &DMatrix<f64> {
        &self.asset_covariance
    }

    pub fn sigma_min_eigenvalue(&self) -> f64 {
        self.sigma_min_eigenvalue
    }

    pub fn excess_loading_rank(&self) -> usize {
        self.excess_loading_rank
    }

    /// Whether `Â` has full column rank n.
    pub fn rank_a_hat_is_n(&self) -> bool {
        self.excess_loading_rank == self.n()
    }

    pub fn jumps(&self) -> &JumpMeasure {
        &self.raw.jumps
    }

    pub fn has_time_varying_loading(&self) -> bool {
        self.raw.factor_loading.is_time_varying()
    }

    /// `Λ(t)`.
    pub fn factor_loading_at(&self, t: f64) -> DMatrix<f64> {
        self.raw.factor_loading.at(t)
    }

    /// `Λ(t)Σᵀ` (n×m).
    pub fn loading_cross_at(&self, t: f64) -> DMatrix<f64> {
        match &self.loading_cross {
            Some(c) => c.clone(),
            None => self.raw.factor_loading.at(t) * self.raw.asset_volatility.transpose(),
        }
    }

    /// `Λ(t)Λ(t)ᵀ` (n×n).
    pub fn factor_covariance_at(&self, t: f64) -> DMatrix<f64> {
        match &self.factor_covariance {
            Some(c) => c.clone(),
            None => {
                let l = self.raw.factor_loading.at(t);
                &l * l.transpose()
            }
        }
    }

    /// `min_j (1 + hᵀψ_j)`; `h` is feasible iff the result is positive.
    /// Returns `+∞` for an empty jump measure.
    pub fn feasible_margin(&self, h: &[f64]) -> Result<f64, ModelError> {
        if h.len() != self.m() {
            return Err(ModelError::DimensionMismatch(format!(
                "control has length {}, expected {}",
                h.len(),
                self.m()
            )));
        }
        Ok(self.margin(h))
    }

    #[inline]
    pub(crate) fn margin(&self, h: &[f64]) -> f64 {
        self.raw
            .jumps
            .atoms
            .iter()
            .map(|a| 1.0 + a.dot(h))
            .fold(f64::INFINITY, f64::min)
    }
}
