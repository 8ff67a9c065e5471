use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use riskjump::io::{LoadError, LoadedModel, ModelDocument};
use serde::Serialize;

use crate::failure::Failure;

pub fn read_document(path: &Path) -> Result<ModelDocument, Failure> {
    ModelDocument::read(path).map_err(|e| match e {
        LoadError::Io { .. } => Failure::usage("--model", e.to_string()),
        e => Failure::Invalid(e.to_string()),
    })
}

pub fn load(document: &ModelDocument) -> Result<LoadedModel, Failure> {
    document.load().map_err(|e| Failure::Invalid(e.to_string()))
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::usage("--out", format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Checks that `values` has `len` entries.
pub fn expect_len(flag: &str, values: &[f64], len: usize) -> Result<(), Failure> {
    if values.len() == len {
        Ok(())
    } else {
        Err(Failure::usage(
            flag,
            format!("expected {len} comma-separated values, got {}", values.len()),
        ))
    }
}

pub fn parse_point(flag: &str, text: &str, len: usize) -> Result<Vec<f64>, Failure> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::usage(flag, format!("{text:?}: {e}")))?;
    expect_len(flag, &values, len)?;
    Ok(values)
}

/// `−B⁻¹b`, or the origin when `B` is singular.
pub fn stationary_mean(model: &riskjump::ValidatedModel) -> Vec<f64> {
    let raw = model.raw();
    raw.mean_reversion
        .clone()
        .lu()
        .solve(&raw.factor_intercept)
        .map(|x| (-x).as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; model.n()])
}

pub fn diagonal_or_full(flag: &str, values: &[f64], n: usize) -> Result<DMatrix<f64>, Failure> {
    if values.len() == n {
        Ok(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    } else if values.len() == n * n {
        Ok(DMatrix::from_row_slice(n, n, values))
    } else {
        Err(Failure::usage(
            flag,
            format!(
                "expected {n} diagonal or {} row-major entries, got {}",
                n * n,
                values.len()
            ),
        ))
    }
}
