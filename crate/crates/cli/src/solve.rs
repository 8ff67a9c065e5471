use std::path::PathBuf;

use clap::{Args, ValueEnum};
use riskjump::hjb::{policy_iteration, write_solution, DriftDifferencing, Grid, HjbError, SolverConfig};

use crate::common::{create_dir, load, parse_point, read_document, stationary_mean};
use crate::failure::Failure;
use crate::ModelArgs;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Drift {
    Upwind,
    Central,
    Hybrid,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory for `solution.csv` and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Box center, one value per factor [default: the stationary mean].
    #[arg(long)]
    pub center: Option<String>,
    /// Box half width, one value or one per factor.
    #[arg(long, default_value = "1.5")]
    pub half_width: String,
    #[arg(long, default_value_t = 65)]
    pub nodes: usize,
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    /// Implicit weight of the time scheme, in [0.5, 1].
    #[arg(long, default_value_t = 1.0)]
    pub time_weight: f64,
    #[arg(long, value_enum, default_value = "hybrid")]
    pub drift: Drift,
    /// Stopping threshold relative to the terminal value.
    #[arg(long, default_value_t = 1e-8)]
    pub policy_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
}

impl SolveArgs {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            policy_tol: self.policy_tol,
            max_policy_iters: self.max_iters,
            time_weight: self.time_weight,
            drift: match self.drift {
                Drift::Upwind => DriftDifferencing::Upwind,
                Drift::Central => DriftDifferencing::Central,
                Drift::Hybrid => DriftDifferencing::Hybrid,
            },
            ..SolverConfig::default()
        }
    }
}

fn hjb_failure(e: HjbError) -> Failure {
    match e {
        HjbError::NoPolicyConvergence { .. } => Failure::NoConvergence(e.to_string()),
        HjbError::InvalidConfig(_) => Failure::usage("solver options", e.to_string()),
        HjbError::InvalidGrid(_) | HjbError::UnsupportedDimension(_) | HjbError::DimensionMismatch(_) => {
            Failure::usage("grid options", e.to_string())
        }
        HjbError::ZeroBeta(_) => Failure::Invalid(e.to_string()),
        e => Failure::Runtime(e.to_string()),
    }
}

pub fn run(args: &SolveArgs) -> Result<(), Failure> {
    let document = read_document(&args.model.model)?;
    let loaded = load(&document)?;
    let n = loaded.model.n();
    let center = match &args.center {
        Some(text) => parse_point("--center", text, n)?,
        None => stationary_mean(&loaded.model),
    };
    let half_width = match args.half_width.split(',').count() {
        1 => vec![parse_point("--half-width", &args.half_width, 1)?[0]; n],
        _ => parse_point("--half-width", &args.half_width, n)?,
    };
    let grid = Grid::new(center, half_width, args.nodes, 0.0, loaded.horizon, args.steps).map_err(hjb_failure)?;
    let config = args.solver_config();
    config.validate().map_err(hjb_failure)?;

    let field = policy_iteration(&loaded.model, &loaded.criterion, &grid, &config).map_err(hjb_failure)?;
    create_dir(&args.out)?;
    let model_json = serde_json::to_value(&document).map_err(|e| Failure::Runtime(e.to_string()))?;
    let summary = write_solution(&field, &config, model_json, &args.out)?;
    let d = &field.diagnostics;
    println!(
        "converged after {} linear solves: last delta {:e}, Hamiltonian residual {:e}, {} rows written to {}",
        d.iterations,
        d.deltas.last().copied().unwrap_or(0.0),
        d.hamiltonian_residual,
        summary.rows,
        args.out.display()
    );
    Ok(())
}
