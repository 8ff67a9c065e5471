//! The JSON model document.
//!
//! Matrices are row-major arrays of arrays. A filtered model carries its
//! factor loading as a `Lambda_eff` table instead of `Lambda`.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "n": 1, "m": 1,
//!   "b": [0.1], "B": [[-0.5]], "Lambda": [[0.2, 0.05]],
//!   "a0": 0.02, "A0": [0.0],
//!   "a": [0.05], "A": [[0.4]], "Sigma": [[0.25, 0.0]],
//!   "atoms": [{"mark": [-0.15], "intensity": 1.0, "compensated": true}],
//!   "theta": 1.0, "v": 1.0, "T": 1.0
//! }
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::{Criterion, CriterionError};
use crate::model::{
    validate_with_layout, FactorLoading, JumpAtom, JumpMeasure, MarketModel, NoiseLayout, ValidatedModel,
    ValidationErrors,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed model JSON: {0}")]
    Json(String),
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Validation(#[from] ValidationErrors),
    #[error(transparent)]
    Criterion(#[from] CriterionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomDocument {
    pub mark: Vec<f64>,
    pub intensity: f64,
    #[serde(default = "yes")]
    pub compensated: bool,
}

fn yes() -> bool {
    true
}

fn current_version() -> u32 {
    MODEL_FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedLoading {
    pub times: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default = "current_version")]
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    pub b: Vec<f64>,
    #[serde(rename = "B")]
    pub mean_reversion: Vec<Vec<f64>>,
    #[serde(rename = "Lambda", default, skip_serializing_if = "Option::is_none")]
    pub factor_loading: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Lambda_eff", default, skip_serializing_if = "Option::is_none")]
    pub filtered_loading: Option<TabulatedLoading>,
    pub a0: f64,
    #[serde(rename = "A0")]
    pub rate_loading: Vec<f64>,
    pub a: Vec<f64>,
    #[serde(rename = "A")]
    pub asset_loading: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub asset_volatility: Vec<Vec<f64>>,
    #[serde(default)]
    pub atoms: Vec<AtomDocument>,
    #[serde(default)]
    pub pure_diffusion: bool,
    pub theta: f64,
    pub v: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// A validated model with its criterion and horizon.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: ValidatedModel,
    pub criterion: Criterion,
    pub horizon: f64,
}

fn field(name: &str, message: impl Into<String>) -> LoadError {
    LoadError::Field {
        field: name.to_string(),
        message: message.into(),
    }
}

fn vector(name: &str, v: &[f64], len: usize) -> Result<DVector<f64>, LoadError> {
    if v.len() != len {
        return Err(field(name, format!("expected {len} entries, found {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: Option<usize>) -> Result<DMatrix<f64>, LoadError> {
    if rows.len() != nrows {
        return Err(field(name, format!("expected {nrows} rows, found {}", rows.len())));
    }
    let width = ncols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if width == 0 {
        return Err(field(name, "rows must not be empty"));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(field(
            name,
            format!("row {i} has {} entries, expected {width}", r.len()),
        ));
    }
    Ok(DMatrix::from_fn(nrows, width, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let doc: Self = serde_json::from_str(text).map_err(|e| LoadError::Json(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(LoadError::UnsupportedVersion(doc.format_version));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serializes")
    }

    /// Builds the raw model, checking every array shape.
    pub fn market_model(&self) -> Result<MarketModel, LoadError> {
        let (n, m) = (self.n, self.m);
        let asset_volatility = matrix("Sigma", &self.asset_volatility, m, None)?;
        let noise = asset_volatility.ncols();
        let factor_loading = match (&self.factor_loading, &self.filtered_loading) {
            (Some(l), None) => FactorLoading::Constant(matrix("Lambda", l, n, Some(noise))?),
            (None, Some(tab)) => {
                if tab.times.is_empty() || tab.times.len() != tab.values.len() {
                    return Err(field(
                        "Lambda_eff",
                        "times and values must be non-empty and of equal length",
                    ));
                }
                let values = tab
                    .values
                    .iter()
                    .map(|v| matrix("Lambda_eff", v, n, Some(noise)))
                    .collect::<Result<_, _>>()?;
                FactorLoading::Tabulated {
                    times: tab.times.clone(),
                    values,
                }
            }
            (Some(_), Some(_)) => return Err(field("Lambda_eff", "give either Lambda or Lambda_eff, not both")),
            (None, None) => return Err(field("Lambda", "missing factor loading")),
        };
        let atoms = self
            .atoms
            .iter()
            .enumerate()
            .map(|(j, a)| {
                if a.mark.len() != m {
                    return Err(field(
                        &format!("atoms[{j}].mark"),
                        format!("expected {m} entries, found {}", a.mark.len()),
                    ));
                }
                Ok(JumpAtom::new(a.mark.clone(), a.intensity, a.compensated))
            })
            .collect::<Result<_, _>>()?;
        Ok(MarketModel {
            factor_intercept: vector("b", &self.b, n)?,
            mean_reversion: matrix("B", &self.mean_reversion, n, Some(n))?,
            factor_loading,
            rate_intercept: self.a0,
            rate_loading: vector("A0", &self.rate_loading, n)?,
            asset_intercept: vector("a", &self.a, m)?,
            asset_loading: matrix("A", &self.asset_loading, m, Some(n))?,
            asset_volatility,
            jumps: JumpMeasure::new(atoms),
            pure_diffusion: self.pure_diffusion,
        })
    }

    pub fn load(&self) -> Result<LoadedModel, LoadError> {
        let layout = if self.filtered_loading.is_some() {
            NoiseLayout::Innovations
        } else {
            NoiseLayout::FactorAndAsset
        };
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(field("T", format!("horizon {} must be positive", self.horizon)));
        }
        let model = validate_with_layout(self.market_model()?, layout)?;
        let criterion = Criterion::new(self.theta, self.v)?;
        Ok(LoadedModel {
            model,
            criterion,
            horizon: self.horizon,
        })
    }

    pub fn from_model(model: &ValidatedModel, criterion: &Criterion, horizon: f64) -> Self {
        let raw = model.raw();
        let (factor_loading, filtered_loading) = match &raw.factor_loading {
            FactorLoading::Constant(l) => (Some(rows_of(l)), None),
            FactorLoading::Tabulated { times, values } => (
                None,
                Some(TabulatedLoading {
                    times: times.clone(),
                    values: values.iter().map(rows_of).collect(),
                }),
            ),
        };
        Self {
            format_version: MODEL_FORMAT_VERSION,
            n: model.n(),
            m: model.m(),
            b: raw.factor_intercept.as_slice().to_vec(),
            mean_reversion: rows_of(&raw.mean_reversion),
            factor_loading,
            filtered_loading,
            a0: raw.rate_intercept,
            rate_loading: raw.rate_loading.as_slice().to_vec(),
            a: raw.asset_intercept.as_slice().to_vec(),
            asset_loading: rows_of(&raw.asset_loading),
            asset_volatility: rows_of(&raw.asset_volatility),
            atoms: raw
                .jumps
                .atoms
                .iter()
                .map(|a| AtomDocument {
                    mark: a.mark.clone(),
                    intensity: a.intensity,
                    compensated: a.compensated,
                })
                .collect(),
            pure_diffusion: raw.pure_diffusion,
            theta: criterion.theta(),
            v: criterion.initial_wealth(),
            horizon,
        }
    }
}
