use std::path::PathBuf;

use clap::Args;
use riskjump::io::LoadError;
use riskjump::{zero_beta as solve_zero_beta, ModelError};
use serde::Serialize;

use crate::common::{create_dir, load, read_document, write_json};
use crate::failure::Failure;
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also write `validation.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

#[derive(Debug, Serialize)]
struct Report {
    model: PathBuf,
    passed: bool,
    checks: Vec<Check>,
    /// Informational: whether the excess loading has full column rank.
    excess_loading_full_rank: Option<bool>,
}

fn category(e: &ModelError) -> &'static str {
    match e {
        ModelError::DimensionMismatch(_) | ModelError::NonFinite(_) => "dimensions",
        ModelError::SigmaNotPositiveDefinite { .. } => "asset covariance positive definite",
        ModelError::JumpSignCoverageViolated { .. } => "jumps cover both signs for every asset",
        ModelError::MarkBelowMinusOne { .. } | ModelError::NonPositiveIntensity { .. } => "jump marks and intensities",
    }
}

const CATEGORIES: [&str; 4] = [
    "dimensions",
    "asset covariance positive definite",
    "jumps cover both signs for every asset",
    "jump marks and intensities",
];

fn report(args: &ValidateArgs) -> Result<Report, Failure> {
    let document = read_document(&args.model.model)?;
    let (errors, rank, sigma) = match document.load() {
        Ok(loaded) => (
            Vec::new(),
            Some(loaded.model.rank_a_hat_is_n()),
            Some(loaded.model.sigma_min_eigenvalue()),
        ),
        Err(LoadError::Validation(v)) => (v.0, None, None),
        Err(e) => return Err(Failure::Invalid(e.to_string())),
    };
    let checks = CATEGORIES
        .iter()
        .map(|&name| {
            let found: Vec<String> = errors
                .iter()
                .filter(|e| category(e) == name)
                .map(|e| e.to_string())
                .collect();
            let detail = match (found.is_empty(), name, sigma) {
                (true, "asset covariance positive definite", Some(s)) => format!("smallest eigenvalue {s:e}"),
                (true, ..) => String::new(),
                (false, ..) => found.join("; "),
            };
            Check {
                name,
                passed: found.is_empty(),
                detail,
            }
        })
        .collect();
    Ok(Report {
        model: args.model.model.clone(),
        passed: errors.is_empty(),
        checks,
        excess_loading_full_rank: rank,
    })
}

pub fn run(args: &ValidateArgs) -> Result<(), Failure> {
    let report = report(args)?;
    for c in &report.checks {
        let verdict = if c.passed { "pass" } else { "FAIL" };
        if c.detail.is_empty() {
            println!("{verdict:4}  {}", c.name);
        } else {
            println!("{verdict:4}  {} ({})", c.name, c.detail);
        }
    }
    match report.excess_loading_full_rank {
        Some(true) => println!("info  excess loading has full column rank"),
        Some(false) => println!("info  excess loading is rank deficient: zero-beta policies need A0 = 0"),
        None => {}
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_json(&dir.join("validation.json"), &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Invalid("model failed validation".into()))
    }
}

#[derive(Serialize)]
struct ZeroBetaReport {
    h_check: Vec<f64>,
    g_check: f64,
}

pub fn zero_beta(args: &ModelArgs) -> Result<(), Failure> {
    let loaded = load(&read_document(&args.model)?)?;
    let zb = solve_zero_beta(&loaded.model, &loaded.criterion).map_err(|e| Failure::Invalid(e.to_string()))?;
    let report = ZeroBetaReport {
        h_check: zb.h_check.as_slice().to_vec(),
        g_check: zb.g_check,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?
    );
    Ok(())
}
