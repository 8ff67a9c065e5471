use std::path::PathBuf;

use clap::Args;
use riskjump::hjb::{convexity_report, load_solution, ConvexityConfig, ValueField};
use riskjump::io::{LoadedModel, ModelDocument};
use riskjump::montecarlo::{
    config_hash, estimate_value_direct, martingale_check, simulate_changed_measure, PathConfig,
};
use serde::Serialize;

use crate::common::{create_dir, load, parse_point, read_document, write_json};
use crate::failure::Failure;
use crate::simulate::mc_failure;
use crate::FORMAT_VERSION;

pub const VERIFY_JSON: &str = "verify.json";

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Directory written by `solve`.
    #[arg(long)]
    pub solution: PathBuf,
    /// Model JSON document [default: the model embedded in the solution].
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory for `verify.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Probe point for the Monte Carlo comparisons; repeatable [default: the grid center].
    #[arg(long)]
    pub probe: Vec<String>,
    /// Grid error allowance for the PDE/Monte Carlo comparison, relative to the terminal value.
    #[arg(long, default_value_t = 2e-3)]
    pub budget: f64,
    /// Fraction of the box examined by the convexity check.
    #[arg(long, default_value_t = 0.5)]
    pub inner_fraction: f64,
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Serialize)]
struct VerifyConfig {
    format_version: u32,
    solution: PathBuf,
    model: ModelDocument,
    path: PathConfig,
    probes: Vec<Vec<f64>>,
    budget: f64,
    convexity: ConvexityConfig,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    config: VerifyConfig,
    config_hash: String,
    passed: bool,
    checks: Vec<Check>,
}

/// Positivity, bounds, terminal data, the `Φ = −(1/θ)ln Φ̃` identity and
/// feasibility of the stored policy.
fn integrity(field: &ValueField, loaded: &LoadedModel) -> Check {
    let grid = field.grid();
    let nodes = grid.node_count();
    let scale = loaded.criterion.terminal_value();
    let mut problems = Vec::new();
    if (field.theta - loaded.criterion.theta()).abs() > 0.0 || field.initial_wealth != loaded.criterion.initial_wealth()
    {
        problems.push("criterion differs from the model".to_string());
    }
    let mut x = vec![0.0; grid.dim()];
    'outer: for k in 0..=grid.time_steps() {
        let t = grid.time(k);
        let bound = field.upper_bound(t);
        for node in 0..nodes {
            let v = field.phi_tilde.at(k, node);
            let phi = field.phi.at(k, node);
            grid.node_coordinates(node, &mut x);
            let mut flag = |what: String| problems.push(format!("t = {t}, x = {x:?}: {what}"));
            if !(v > 0.0) {
                flag(format!("phi_tilde = {v} is not positive"));
            } else if v > bound + 1e-9 * scale {
                flag(format!("phi_tilde = {v} exceeds the zero-beta bound {bound}"));
            } else if (phi + v.ln() / field.theta).abs() > 1e-12 * (1.0 + phi.abs()) {
                flag(format!("phi = {phi} is not -ln(phi_tilde)/theta"));
            }
            if k == grid.time_steps() && (v - scale).abs() > 1e-12 * scale {
                flag(format!("terminal value {v}, expected {scale}"));
            }
            if loaded
                .model
                .feasible_margin(field.policy.at(k, node))
                .map_or(true, |m| m <= 0.0)
            {
                flag("stored allocation is infeasible".into());
            }
            if problems.len() >= 5 {
                break 'outer;
            }
        }
    }
    let passed = problems.is_empty();
    let detail = if passed {
        format!("{} nodes over {} time levels", nodes, grid.time_steps() + 1)
    } else {
        problems.join("; ")
    };
    Check::new("solution_integrity", passed, detail)
}

fn monotonicity(field: &ValueField, scale: f64) -> Check {
    let worst = field
        .diagnostics
        .monotonicity_violations
        .iter()
        .copied()
        .fold(0.0, f64::max);
    Check::new(
        "monotone_iteration",
        worst <= 1e-9 * scale,
        format!("largest increase between iterates {worst:e}"),
    )
}

pub fn run(args: &VerifyArgs) -> Result<(), Failure> {
    let loaded_solution = load_solution(&args.solution);
    let document = match &args.model {
        Some(path) => read_document(path)?,
        None => {
            let summary_path = args.solution.join(riskjump::hjb::SOLUTION_SUMMARY);
            let text = std::fs::read_to_string(&summary_path)
                .map_err(|e| Failure::usage("--solution", format!("{}: {e}", summary_path.display())))?;
            let summary: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Verification(format!("{}: {e}", summary_path.display())))?;
            serde_json::from_value(summary["model"].clone())
                .map_err(|e| Failure::usage("--model", format!("no usable model embedded in the solution: {e}")))?
        }
    };
    let loaded = load(&document)?;
    let n = loaded.model.n();
    let probes = args
        .probe
        .iter()
        .map(|p| parse_point("--probe", p, n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut checks = Vec::new();
    let field = match loaded_solution {
        Ok((field, _)) => Some(field),
        Err(e) => {
            checks.push(Check::new("solution_integrity", false, e.to_string()));
            None
        }
    };
    let probes = match (&field, probes.is_empty()) {
        (Some(f), true) => vec![f.grid().center().to_vec()],
        _ => probes,
    };
    let horizon = field.as_ref().map_or(loaded.horizon, |f| f.grid().horizon());
    let path = PathConfig::new(args.paths, args.dt, horizon, args.seed);
    let convexity = ConvexityConfig {
        inner_fraction: args.inner_fraction,
        seed: args.seed,
        ..ConvexityConfig::default()
    };

    if let Some(field) = &field {
        let scale = loaded.criterion.terminal_value();
        checks.push(integrity(field, &loaded));
        if field.grid().dim() != n || field.policy.control_dim() != loaded.model.m() {
            checks.push(Check::new(
                "dimensions",
                false,
                "solution and model dimensions differ".into(),
            ));
        } else {
            checks.push(monotonicity(field, scale));
            let report = convexity_report(field, &convexity);
            checks.push(Check::new(
                "convexity",
                report.passed,
                format!(
                    "min second difference {:e} (threshold {:e}), min midpoint slack {:e}",
                    report.min_second_difference, report.threshold, report.min_midpoint_slack
                ),
            ));
            let (model, criterion, policy) = (&loaded.model, &loaded.criterion, &field.policy);
            for (i, x) in probes.iter().enumerate() {
                let changed = simulate_changed_measure(model, criterion, policy, x, &path).map_err(mc_failure)?;
                let pde = field.phi_tilde.interpolate(0.0, x);
                let gap = (changed.mean - pde).abs();
                let allowed = 3.0 * changed.std_error + args.budget * scale;
                checks.push(Check::new(
                    format!("pde_vs_monte_carlo[{i}]"),
                    gap <= allowed,
                    format!(
                        "x = {x:?}: grid {pde:.8}, Monte Carlo {:.8} ± {:.2e}, gap {gap:.2e}, allowed {allowed:.2e}",
                        changed.mean, changed.std_error
                    ),
                ));
            }
            let x = &probes[0];
            let direct = estimate_value_direct(model, criterion, policy, x, &path).map_err(mc_failure)?;
            let changed = simulate_changed_measure(model, criterion, policy, x, &path).map_err(mc_failure)?;
            let se = direct.raw.std_error.hypot(changed.std_error);
            let gap = (direct.raw.mean - changed.mean).abs();
            checks.push(Check::new(
                "measure_equivalence",
                gap <= 3.0 * se,
                format!(
                    "physical {:.8}, changed {:.8}, gap {gap:.2e}, 3 SE {:.2e}",
                    direct.raw.mean,
                    changed.mean,
                    3.0 * se
                ),
            ));
            let density = martingale_check(model, criterion, policy, x, &path).map_err(mc_failure)?;
            checks.push(Check::new(
                "martingale",
                density.passed,
                format!("mean {:.8} ± {:.2e}", density.stats.mean, density.stats.std_error),
            ));
        }
    }

    let config = VerifyConfig {
        format_version: FORMAT_VERSION,
        solution: args.solution.clone(),
        model: document,
        path,
        probes,
        budget: args.budget,
        convexity,
    };
    let hash = config_hash(&serde_json::to_value(&config).map_err(|e| Failure::Runtime(e.to_string()))?);
    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        println!("{}  {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    create_dir(&args.out)?;
    write_json(
        &args.out.join(VERIFY_JSON),
        &VerifyReport {
            config,
            config_hash: hash,
            passed,
            checks,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification("verification failed".into()))
    }
}
