use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use riskjump::hjb::load_solution;
use riskjump::io::ModelDocument;
use riskjump::montecarlo::{
    config_hash, estimate_value_direct, martingale_check, simulate_changed_measure, simulate_physical, EstimatorRecord,
    FactorScheme, InitialState, McError, PathConfig,
};
use riskjump::{zero_beta, ConstantPolicy, FeedbackPolicy};
use serde::{Deserialize, Serialize};

use crate::common::{create_dir, load, parse_point, read_document, stationary_mean, write_json};
use crate::failure::Failure;
use crate::FORMAT_VERSION;

pub const ESTIMATES_JSON: &str = "estimates.json";
pub const PATHS_CSV: &str = "paths.csv";

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scheme {
    Euler,
    ExactOu,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Model JSON document; not needed with `--replay`.
    #[arg(long, required_unless_present = "replay")]
    pub model: Option<PathBuf>,
    /// Directory for `estimates.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, value_enum, default_value = "euler")]
    pub scheme: Scheme,
    /// Initial factor value [default: the stationary mean].
    #[arg(long)]
    pub x0: Option<String>,
    /// Constant allocation, one value per asset.
    #[arg(long, conflicts_with = "solution")]
    pub constant: Option<String>,
    /// Use the policy of a solved field written by `solve`.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Also dump every path to `paths.csv`.
    #[arg(long)]
    pub paths_csv: bool,
    /// Rerun the configuration embedded in an `estimates.json`.
    #[arg(long, conflicts_with_all = ["model", "x0", "constant", "solution"])]
    pub replay: Option<PathBuf>,
}

/// Where the allocation comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    ZeroBeta,
    Constant { h: Vec<f64> },
    Solution { dir: PathBuf },
}

/// Everything a run depends on; embedded in its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub format_version: u32,
    pub model: ModelDocument,
    pub x0: Vec<f64>,
    pub path: PathConfig,
    pub policy: PolicySpec,
    pub paths_csv: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub config: SimulationConfig,
    pub config_hash: String,
    pub records: Vec<EstimatorRecord>,
}

pub fn mc_failure(e: McError) -> Failure {
    match e {
        McError::InvalidConfig(_) => Failure::usage("path options", e.to_string()),
        McError::DimensionMismatch(_) => Failure::usage("--x0", e.to_string()),
        e => Failure::Runtime(e.to_string()),
    }
}

pub fn build_policy(spec: &PolicySpec, loaded: &riskjump::io::LoadedModel) -> Result<Box<dyn FeedbackPolicy>, Failure> {
    let m = loaded.model.m();
    Ok(match spec {
        PolicySpec::ZeroBeta => {
            let zb = zero_beta(&loaded.model, &loaded.criterion).map_err(|e| Failure::Invalid(e.to_string()))?;
            Box::new(ConstantPolicy::new(zb.h_check.as_slice().to_vec()))
        }
        PolicySpec::Constant { h } => {
            crate::common::expect_len("--constant", h, m)?;
            Box::new(ConstantPolicy::new(h.clone()))
        }
        PolicySpec::Solution { dir } => {
            let (field, _) = load_solution(dir).map_err(|e| Failure::usage("--solution", e.to_string()))?;
            if field.policy.control_dim() != m || field.grid().dim() != loaded.model.n() {
                return Err(Failure::usage(
                    "--solution",
                    "solution dimensions do not match the model",
                ));
            }
            Box::new(field.policy)
        }
    })
}

fn config_from_args(args: &SimulateArgs) -> Result<SimulationConfig, Failure> {
    if let Some(path) = &args.replay {
        let text =
            fs::read_to_string(path).map_err(|e| Failure::usage("--replay", format!("{}: {e}", path.display())))?;
        let previous: SimulationOutput =
            serde_json::from_str(&text).map_err(|e| Failure::usage("--replay", format!("{}: {e}", path.display())))?;
        return Ok(previous.config);
    }
    let model_path = args.model.as_ref().expect("clap requires --model without --replay");
    let document = read_document(model_path)?;
    let loaded = load(&document)?;
    let x0 = match &args.x0 {
        Some(text) => parse_point("--x0", text, loaded.model.n())?,
        None => stationary_mean(&loaded.model),
    };
    let policy = match (&args.constant, &args.solution) {
        (Some(text), _) => PolicySpec::Constant {
            h: parse_point("--constant", text, loaded.model.m())?,
        },
        (None, Some(dir)) => PolicySpec::Solution { dir: dir.clone() },
        (None, None) => PolicySpec::ZeroBeta,
    };
    let scheme = match args.scheme {
        Scheme::Euler => FactorScheme::Euler,
        Scheme::ExactOu => FactorScheme::ExactOu,
    };
    Ok(SimulationConfig {
        format_version: FORMAT_VERSION,
        model: document,
        x0,
        path: PathConfig::new(args.paths, args.dt, loaded.horizon, args.seed).with_scheme(scheme),
        policy,
        paths_csv: args.paths_csv,
    })
}

fn dump_paths(
    loaded: &riskjump::io::LoadedModel,
    policy: &dyn FeedbackPolicy,
    config: &SimulationConfig,
    path: &Path,
) -> Result<(), Failure> {
    let records = simulate_physical(
        &loaded.model,
        &loaded.criterion,
        policy,
        &InitialState::Fixed(config.x0.clone()),
        &config.path,
    )
    .map_err(mc_failure)?;
    let n = loaded.model.n();
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.push("log_wealth".into());
    writeln!(out, "{}", header.join(","))?;
    for (p, r) in records.iter().enumerate() {
        for (k, t) in r.times.iter().enumerate() {
            let x: Vec<String> = r.factor_at(k).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{p},{t},{},{}", x.join(","), r.log_wealth[k])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn simulate(config: &SimulationConfig) -> Result<SimulationOutput, Failure> {
    if config.format_version != FORMAT_VERSION {
        return Err(Failure::usage(
            "format_version",
            format!("unsupported version {}", config.format_version),
        ));
    }
    let loaded = load(&config.model)?;
    let policy = build_policy(&config.policy, &loaded)?;
    let hash = config_hash(&serde_json::to_value(config).map_err(|e| Failure::Runtime(e.to_string()))?);
    let (model, criterion, x0, cfg) = (&loaded.model, &loaded.criterion, &config.x0[..], &config.path);
    let direct = estimate_value_direct(model, criterion, policy.as_ref(), x0, cfg).map_err(mc_failure)?;
    let changed = simulate_changed_measure(model, criterion, policy.as_ref(), x0, cfg).map_err(mc_failure)?;
    let density = martingale_check(model, criterion, policy.as_ref(), x0, cfg).map_err(mc_failure)?;
    let records = [direct.value, direct.raw, changed, density.stats]
        .iter()
        .map(|s| s.record(cfg.seed, &hash))
        .collect();
    Ok(SimulationOutput {
        config: config.clone(),
        config_hash: hash,
        records,
    })
}

pub fn run(args: &SimulateArgs) -> Result<(), Failure> {
    let config = config_from_args(args)?;
    let output = simulate(&config)?;
    create_dir(&args.out)?;
    write_json(&args.out.join(ESTIMATES_JSON), &output)?;
    if config.paths_csv {
        let loaded = load(&config.model)?;
        let policy = build_policy(&config.policy, &loaded)?;
        dump_paths(&loaded, policy.as_ref(), &config, &args.out.join(PATHS_CSV))?;
    }
    for r in &output.records {
        println!("{:24} {:.10} ± {:.3e}", r.estimator, r.mean, r.std_error);
    }
    Ok(())
}
