use std::path::PathBuf;

use clap::Args;
use nalgebra::{DMatrix, DVector};
use riskjump::io::ModelDocument;
use riskjump::kalman::{
    decompose_observations, innovations, reduced_model, riccati_solve, run_filter, write_filter_csv, FilterParams,
    KalmanError,
};
use riskjump::montecarlo::{config_hash, simulate_physical, InitialState, PathConfig};
use serde::Serialize;

use crate::common::{create_dir, diagonal_or_full, load, parse_point, read_document, stationary_mean, write_json};
use crate::failure::Failure;
use crate::simulate::{build_policy, mc_failure, PolicySpec};
use crate::{ModelArgs, FORMAT_VERSION};

pub const FILTER_CSV: &str = "filter.csv";
pub const FILTER_REPORT: &str = "filter_report.json";
pub const REDUCED_MODEL: &str = "reduced_model.json";

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory for the filter trajectory, the reduced model and the report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0.005)]
    pub dt: f64,
    /// Prior mean of the factor [default: the stationary mean].
    #[arg(long)]
    pub prior_mean: Option<String>,
    /// Prior covariance: n diagonal or n² row-major entries.
    #[arg(long, default_value = "0.05")]
    pub prior_cov: String,
    /// Constant allocation used while simulating [default: zero-beta].
    #[arg(long)]
    pub constant: Option<String>,
    /// Relative Frobenius tolerance of the error-covariance check.
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,
}

#[derive(Debug, Serialize)]
struct CovarianceCheck {
    t: f64,
    relative_error: f64,
    riccati: Vec<Vec<f64>>,
    empirical: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct InnovationCheck {
    component: usize,
    mean_z: f64,
    variance_z: f64,
    lag_one_z: f64,
}

#[derive(Debug, Serialize)]
struct FilterConfig {
    format_version: u32,
    model: ModelDocument,
    prior_mean: Vec<f64>,
    prior_covariance: Vec<Vec<f64>>,
    path: PathConfig,
    policy: PolicySpec,
    tolerance: f64,
}

#[derive(Debug, Serialize)]
struct FilterReport {
    config: FilterConfig,
    config_hash: String,
    passed: bool,
    step_halving_gap: f64,
    covariance: Vec<CovarianceCheck>,
    innovations: Vec<InnovationCheck>,
}

fn kalman_failure(e: KalmanError) -> Failure {
    match e {
        KalmanError::InvalidPrior(_) => Failure::usage("--prior-cov", e.to_string()),
        KalmanError::DimensionMismatch(_) => Failure::usage("--prior-mean", e.to_string()),
        KalmanError::A0NotZero | KalmanError::UnboundedLogJump { .. } | KalmanError::ReducedModel(_) => {
            Failure::Invalid(e.to_string())
        }
        e => Failure::Runtime(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// z-scores of the mean, of `E[u²] = 1` and of the lag-one correlation of
/// standardized increments.
fn innovation_scores(component: usize, u: &[f64], lags: &[(f64, f64)]) -> InnovationCheck {
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sq_mean = u.iter().map(|x| x * x).sum::<f64>() / n;
    let sq_var = u.iter().map(|x| (x * x - sq_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let lag = lags.iter().map(|(a, b)| a * b).sum::<f64>() / lags.len() as f64;
    InnovationCheck {
        component,
        mean_z: mean / (var / n).sqrt(),
        variance_z: (sq_mean - 1.0) / (sq_var / n).sqrt(),
        lag_one_z: lag * (lags.len() as f64).sqrt(),
    }
}

pub fn run(args: &FilterArgs) -> Result<(), Failure> {
    let document = read_document(&args.model.model)?;
    let loaded = load(&document)?;
    let (model, criterion) = (&loaded.model, &loaded.criterion);
    let (n, m) = (model.n(), model.m());
    let prior_mean = match &args.prior_mean {
        Some(text) => parse_point("--prior-mean", text, n)?,
        None => stationary_mean(model),
    };
    let cov_values = args
        .prior_cov
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::usage("--prior-cov", e.to_string()))?;
    let cov_values = if cov_values.len() == 1 {
        vec![cov_values[0]; n]
    } else {
        cov_values
    };
    let prior_cov = diagonal_or_full("--prior-cov", &cov_values, n)?;
    let params = FilterParams::new(DVector::from_vec(prior_mean.clone()), prior_cov.clone()).map_err(kalman_failure)?;
    let policy_spec = match &args.constant {
        Some(text) => PolicySpec::Constant {
            h: parse_point("--constant", text, m)?,
        },
        None => PolicySpec::ZeroBeta,
    };
    let policy = build_policy(&policy_spec, &loaded)?;
    let path = PathConfig::new(args.paths, args.dt, loaded.horizon, args.seed);
    path.validate().map_err(mc_failure)?;

    let steps = path.steps();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * path.step_size()).collect();
    let riccati = riccati_solve(model, &prior_cov, &times).map_err(kalman_failure)?;
    let fine: Vec<f64> = (0..=2 * steps).map(|k| k as f64 * path.step_size() / 2.0).collect();
    let halved = riccati_solve(model, &prior_cov, &fine).map_err(kalman_failure)?;
    let step_halving_gap = (0..=steps)
        .map(|k| (&riccati.covariance[k] - &halved.covariance[2 * k]).amax())
        .fold(0.0, f64::max);

    let initial = InitialState::Gaussian {
        mean: prior_mean.clone(),
        covariance: prior_cov.clone(),
    };
    let records = simulate_physical(model, criterion, policy.as_ref(), &initial, &path).map_err(mc_failure)?;
    let probes: Vec<usize> = [0.25, 0.5, 1.0]
        .iter()
        .map(|f| ((f * steps as f64).round() as usize).min(steps))
        .collect();
    let mut sums = vec![DMatrix::<f64>::zeros(n, n); probes.len()];
    let mut standardized = vec![Vec::new(); m];
    let mut lags = vec![Vec::new(); m];
    create_dir(&args.out)?;
    let sqrt_dt = path.step_size().sqrt();
    for (i, record) in records.iter().enumerate() {
        let decomposition = decompose_observations(model, record).map_err(kalman_failure)?;
        let state = run_filter(model, &params, &riccati, &decomposition).map_err(kalman_failure)?;
        if i == 0 {
            write_filter_csv(&state, &args.out.join(FILTER_CSV)).map_err(kalman_failure)?;
        }
        for (slot, &k) in probes.iter().enumerate() {
            let e = DVector::from_column_slice(record.factor_at(k)) - &state.x_hat[k];
            sums[slot] += &e * e.transpose();
        }
        let du = innovations(model, &state, &decomposition).map_err(kalman_failure)?;
        for j in 0..m {
            let u: Vec<f64> = du.iter().map(|d| d[j] / sqrt_dt).collect();
            lags[j].extend(u.windows(2).map(|w| (w[0], w[1])));
            standardized[j].extend(u);
        }
    }
    let covariance: Vec<CovarianceCheck> = probes
        .iter()
        .zip(&sums)
        .map(|(&k, sum)| {
            let empirical = sum / records.len() as f64;
            let p = &riccati.covariance[k];
            CovarianceCheck {
                t: times[k],
                relative_error: (&empirical - p).norm() / p.norm(),
                riccati: rows(p),
                empirical: rows(&empirical),
            }
        })
        .collect();
    let innovation_checks: Vec<InnovationCheck> = (0..m)
        .map(|j| innovation_scores(j, &standardized[j], &lags[j]))
        .collect();

    let reduced = reduced_model(model, &riccati).map_err(kalman_failure)?;
    write_json(
        &args.out.join(REDUCED_MODEL),
        &ModelDocument::from_model(&reduced, criterion, loaded.horizon),
    )?;

    let passed = covariance.iter().all(|c| c.relative_error <= args.tolerance)
        && innovation_checks
            .iter()
            .all(|c| c.mean_z.abs() <= 3.0 && c.variance_z.abs() <= 3.0 && c.lag_one_z.abs() <= 3.0);
    for c in &covariance {
        println!(
            "t = {:.3}: error covariance off by {:.2}% (Frobenius)",
            c.t,
            100.0 * c.relative_error
        );
    }
    for c in &innovation_checks {
        println!(
            "innovation {}: mean z {:.2}, variance z {:.2}, lag-one z {:.2}",
            c.component, c.mean_z, c.variance_z, c.lag_one_z
        );
    }
    println!("Riccati step-halving gap {step_halving_gap:e}");
    let config = FilterConfig {
        format_version: FORMAT_VERSION,
        model: document,
        prior_mean,
        prior_covariance: rows(&prior_cov),
        path,
        policy: policy_spec,
        tolerance: args.tolerance,
    };
    let hash = config_hash(&serde_json::to_value(&config).map_err(|e| Failure::Runtime(e.to_string()))?);
    write_json(
        &args.out.join(FILTER_REPORT),
        &FilterReport {
            config,
            config_hash: hash,
            passed,
            step_halving_gap,
            covariance,
            innovations: innovation_checks,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification("filter consistency checks failed".into()))
    }
}
