//! Filtering of the factor from the asset prices when the factor is not
//! observed: continuous/jump split of the log prices, the covariance
//! equation, the filter recursion and the reduced full-observation model.
//!
//! Only models with a factor-free money-market rate are handled.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_with_layout, FactorLoading, NoiseLayout, ValidatedModel, ValidationErrors};
use crate::montecarlo::PathRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KalmanError {
    #[error("the filter requires a money-market rate that does not load on the factor")]
    A0NotZero,
    #[error("atom {atom} has mark -1 for asset {asset}; the log price is unbounded")]
    UnboundedLogJump { atom: usize, asset: usize },
    #[error(
        "covariance left the PSD cone at t = {t} (eigenvalue {min_eigenvalue:e}); retry with step {suggested_step}"
    )]
    StepTooLarge {
        t: f64,
        min_eigenvalue: f64,
        suggested_step: f64,
    },
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("reduced model rejected: {0}")]
    ReducedModel(#[from] ValidationErrors),
    #[error("i/o: {0}")]
    Io(String),
}

/// Gaussian prior of `X(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub prior_mean: DVector<f64>,
    pub prior_covariance: DMatrix<f64>,
}

impl FilterParams {
    pub fn new(prior_mean: DVector<f64>, prior_covariance: DMatrix<f64>) -> Result<Self, KalmanError> {
        let n = prior_mean.len();
        if prior_covariance.shape() != (n, n) {
            return Err(KalmanError::InvalidPrior(format!(
                "covariance is {:?}, mean has {n} components",
                prior_covariance.shape()
            )));
        }
        let scale = prior_covariance.norm().max(1.0);
        if (&prior_covariance - prior_covariance.transpose()).norm() > 1e-12 * scale {
            return Err(KalmanError::InvalidPrior("covariance is not symmetric".into()));
        }
        let min = min_eigenvalue(&prior_covariance);
        if min < -psd_tolerance(&prior_covariance) {
            return Err(KalmanError::InvalidPrior(format!("covariance has eigenvalue {min:e}")));
        }
        Ok(Self {
            prior_mean,
            prior_covariance,
        })
    }
}

/// Covariance of the filter error on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiTrajectory {
    pub times: Vec<f64>,
    pub covariance: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub times: Vec<f64>,
    pub x_hat: Vec<DVector<f64>>,
    pub covariance: Vec<DMatrix<f64>>,
}

/// Log prices split as `Y = Y¹ + Y²`: `Y¹` continuous, driven by the factor
/// and the Brownian motion; `Y²` deterministic drift plus jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub times: Vec<f64>,
    pub continuous: Vec<DVector<f64>>,
    pub jump: Vec<DVector<f64>>,
    pub c: DVector<f64>,
}

fn psd_tolerance(p: &DMatrix<f64>) -> f64 {
    1e-10 * p.trace().abs() / p.nrows().max(1) as f64
}

fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(p.clone()).eigenvalues.min()
}

fn require_factor_free_rate(model: &ValidatedModel) -> Result<(), KalmanError> {
    if model.raw().rate_loading.iter().any(|v| *v != 0.0) {
        Err(KalmanError::A0NotZero)
    } else {
        Ok(())
    }
}

fn log_marks(model: &ValidatedModel) -> Result<Vec<Vec<f64>>, KalmanError> {
    model
        .jumps()
        .atoms
        .iter()
        .enumerate()
        .map(|(atom, a)| {
            a.mark
                .iter()
                .enumerate()
                .map(|(asset, psi)| {
                    if *psi > -1.0 {
                        Ok(psi.ln_1p())
                    } else {
                        Err(KalmanError::UnboundedLogJump { atom, asset })
                    }
                })
                .collect()
        })
        .collect()
}

/// Principal square root of a symmetric PSD matrix.
pub fn principal_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((s + s.transpose()) * 0.5);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn inverse_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((s + s.transpose()) * 0.5);
    let root = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

fn covariance_inverse(model: &ValidatedModel) -> DMatrix<f64> {
    model
        .asset_covariance()
        .clone()
        .cholesky()
        .expect("validated covariance is positive definite")
        .inverse()
}

/// `c_i = â_i − ½(ΣΣᵀ)_ii + Σ_{compensated j} λ_j[ln(1+ψ_ji) − ψ_ji]`.
pub fn compute_c(model: &ValidatedModel) -> Result<DVector<f64>, KalmanError> {
    require_factor_free_rate(model)?;
    let logs = log_marks(model)?;
    let cov = model.asset_covariance();
    Ok(DVector::from_fn(model.m(), |i, _| {
        let jumps: f64 = model
            .jumps()
            .atoms
            .iter()
            .zip(&logs)
            .filter(|(a, _)| a.compensated)
            .map(|(a, l)| a.intensity * (l[i] - a.mark[i]))
            .sum();
        model.excess_drift()[i] - 0.5 * cov[(i, i)] + jumps
    }))
}

/// Splits the discounted log prices of a simulated path. `Y²` carries
/// `Y(0) + c·t` and the jump logs, compensated at rate `λ_j` for compensated
/// atoms; `Y¹ = Y − Y²`.
pub fn decompose_observations(model: &ValidatedModel, path: &PathRecord) -> Result<Decomposition, KalmanError> {
    let c = compute_c(model)?;
    let logs = log_marks(model)?;
    let m = model.m();
    if path.times.is_empty() || path.log_prices.len() != path.times.len() * m {
        return Err(KalmanError::DimensionMismatch(format!(
            "path has {} log-price values for {} times and {m} assets",
            path.log_prices.len(),
            path.times.len()
        )));
    }
    let atoms = &model.jumps().atoms;
    let y0 = DVector::from_column_slice(path.log_prices_at(0));
    let mut counts = vec![0u32; atoms.len()];
    let mut arrivals = path.arrivals.iter().peekable();
    let mut continuous = Vec::with_capacity(path.times.len());
    let mut jump = Vec::with_capacity(path.times.len());
    for (k, &t) in path.times.iter().enumerate() {
        while let Some(a) = arrivals.next_if(|a| a.step < k) {
            counts[a.atom] += 1;
        }
        let mut y2 = &y0 + &c * t;
        for (j, atom) in atoms.iter().enumerate() {
            let n = counts[j] as f64 - if atom.compensated { atom.intensity * t } else { 0.0 };
            for i in 0..m {
                y2[i] += n * logs[j][i];
            }
        }
        let y = DVector::from_column_slice(path.log_prices_at(k));
        continuous.push(y - &y2);
        jump.push(y2);
    }
    Ok(Decomposition {
        times: path.times.clone(),
        continuous,
        jump,
        c,
    })
}

struct RiccatiCoefficients {
    a_hat: DMatrix<f64>,
    gain_core: DMatrix<f64>,
    inv: DMatrix<f64>,
    projector: DMatrix<f64>,
}

impl RiccatiCoefficients {
    fn new(model: &ValidatedModel) -> Self {
        let inv = covariance_inverse(model);
        let sigma = &model.raw().asset_volatility;
        let noise = model.noise_dim();
        let a_hat = model.excess_loading().clone();
        Self {
            gain_core: a_hat.transpose() * &inv * &a_hat,
            projector: DMatrix::identity(noise, noise) - sigma.transpose() * &inv * sigma,
            inv,
            a_hat,
        }
    }

    fn derivative(&self, model: &ValidatedModel, t: f64, p: &DMatrix<f64>) -> DMatrix<f64> {
        let lambda = model.factor_loading_at(t);
        let cross = model.loading_cross_at(t);
        let drift = &model.raw().mean_reversion - cross * &self.inv * &self.a_hat;
        let noise = &lambda * &self.projector * lambda.transpose();
        noise - p * &self.gain_core * p + &drift * p + p * drift.transpose()
    }
}

/// Integrates the error-covariance equation with classical RK4 on `times`,
/// symmetrizing after every step.
pub fn riccati_solve(
    model: &ValidatedModel,
    prior_covariance: &DMatrix<f64>,
    times: &[f64],
) -> Result<RiccatiTrajectory, KalmanError> {
    let n = model.n();
    if prior_covariance.shape() != (n, n) {
        return Err(KalmanError::DimensionMismatch(format!(
            "prior covariance is {:?}, model has {n} factors",
            prior_covariance.shape()
        )));
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KalmanError::GridMismatch(
            "times must be non-empty and increasing".into(),
        ));
    }
    let coef = RiccatiCoefficients::new(model);
    let mut p = prior_covariance.clone();
    let mut covariance = Vec::with_capacity(times.len());
    covariance.push(p.clone());
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let k1 = coef.derivative(model, t, &p);
        let k2 = coef.derivative(model, t + 0.5 * h, &(&p + &k1 * (0.5 * h)));
        let k3 = coef.derivative(model, t + 0.5 * h, &(&p + &k2 * (0.5 * h)));
        let k4 = coef.derivative(model, t + h, &(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        p = (&p + p.transpose()) * 0.5;
        let eig = SymmetricEigen::new(p.clone());
        let min = eig.eigenvalues.min();
        if min < -psd_tolerance(&p) {
            return Err(KalmanError::StepTooLarge {
                t: w[1],
                min_eigenvalue: min,
                suggested_step: 0.5 * h,
            });
        }
        if min < 0.0 {
            let clamped = eig.eigenvalues.map(|l| l.max(0.0));
            p = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            p = (&p + p.transpose()) * 0.5;
        }
        covariance.push(p.clone());
    }
    Ok(RiccatiTrajectory {
        times: times.to_vec(),
        covariance,
    })
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Explicit filter recursion
/// `X̂ ← X̂ + (b + BX̂)dt + (ΛΣᵀ + PÂᵀ)(ΣΣᵀ)⁻¹(ΔY¹ − ÂX̂dt)`, `X̂(0) = m₀`.
pub fn run_filter(
    model: &ValidatedModel,
    params: &FilterParams,
    riccati: &RiccatiTrajectory,
    observations: &Decomposition,
) -> Result<FilterState, KalmanError> {
    require_factor_free_rate(model)?;
    if params.prior_mean.len() != model.n() {
        return Err(KalmanError::DimensionMismatch(format!(
            "prior mean has {} components, model has {} factors",
            params.prior_mean.len(),
            model.n()
        )));
    }
    if !same_grid(&riccati.times, &observations.times) {
        return Err(KalmanError::GridMismatch(format!(
            "covariance on {} times, observations on {} times",
            riccati.times.len(),
            observations.times.len()
        )));
    }
    let raw = model.raw();
    let inv = covariance_inverse(model);
    let a_hat = model.excess_loading();
    let mut x = params.prior_mean.clone();
    let mut x_hat = Vec::with_capacity(riccati.times.len());
    x_hat.push(x.clone());
    for k in 0..riccati.times.len() - 1 {
        let t = riccati.times[k];
        let dt = riccati.times[k + 1] - t;
        let p = &riccati.covariance[k];
        let gain = (model.loading_cross_at(t) + p * a_hat.transpose()) * &inv;
        let dy = &observations.continuous[k + 1] - &observations.continuous[k];
        let surprise = dy - a_hat * &x * dt;
        x = &x + (&raw.factor_intercept + &raw.mean_reversion * &x) * dt + gain * surprise;
        x_hat.push(x.clone());
    }
    Ok(FilterState {
        times: riccati.times.clone(),
        x_hat,
        covariance: riccati.covariance.clone(),
    })
}

/// Innovation increments `ΔU_k = (ΣΣᵀ)^{−1/2}(ΔY¹ − ÂX̂_k dt)`.
pub fn innovations(
    model: &ValidatedModel,
    state: &FilterState,
    observations: &Decomposition,
) -> Result<Vec<DVector<f64>>, KalmanError> {
    if !same_grid(&state.times, &observations.times) {
        return Err(KalmanError::GridMismatch("filter and observation grids differ".into()));
    }
    let root = inverse_sqrt(model.asset_covariance());
    let a_hat = model.excess_loading();
    Ok((0..state.times.len() - 1)
        .map(|k| {
            let dt = state.times[k + 1] - state.times[k];
            let dy = &observations.continuous[k + 1] - &observations.continuous[k];
            &root * (dy - a_hat * &state.x_hat[k] * dt)
        })
        .collect())
}

/// The full-observation model driven by the filter: factor loading
/// `(ΛΣᵀ + P(t)Âᵀ)(ΣΣᵀ)^{−1/2}` tabulated on the covariance grid, asset
/// volatility `(ΣΣᵀ)^{1/2}`, the m-dimensional innovations as noise, and
/// unchanged drifts and jumps.
pub fn reduced_model(model: &ValidatedModel, riccati: &RiccatiTrajectory) -> Result<ValidatedModel, KalmanError> {
    require_factor_free_rate(model)?;
    let cov = model.asset_covariance();
    let inv_root = inverse_sqrt(cov);
    let a_hat_t = model.excess_loading().transpose();
    let values = riccati
        .times
        .iter()
        .zip(&riccati.covariance)
        .map(|(&t, p)| (model.loading_cross_at(t) + p * &a_hat_t) * &inv_root)
        .collect();
    let mut raw = model.raw().clone();
    raw.factor_loading = FactorLoading::Tabulated {
        times: riccati.times.clone(),
        values,
    };
    raw.asset_volatility = principal_sqrt(cov);
    Ok(validate_with_layout(raw, NoiseLayout::Innovations)?)
}

/// Writes `t, x_hat*, P<i><j>*` rows.
pub fn write_filter_csv(state: &FilterState, path: &Path) -> Result<(), KalmanError> {
    let io = |e: csv::Error| KalmanError::Io(e.to_string());
    let n = state.x_hat.first().map_or(0, |x| x.len());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_hat{i}")));
    for i in 0..n {
        header.extend((0..n).map(|j| format!("P{i}{j}")));
    }
    w.write_record(&header).map_err(io)?;
    for k in 0..state.times.len() {
        let mut row = vec![state.times[k].to_string()];
        row.extend(state.x_hat[k].iter().map(|v| v.to_string()));
        let p = &state.covariance[k];
        for i in 0..n {
            row.extend((0..n).map(|j| p[(i, j)].to_string()));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| KalmanError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{validate_model, JumpMeasure};
    use crate::montecarlo::{simulate_physical, InitialState, PathConfig};
    use crate::policy::ConstantPolicy;
    use crate::Criterion;

    fn f1() -> ValidatedModel {
        validate_model(fixtures::f1_market()).unwrap()
    }

    fn grid(steps: usize, horizon: f64) -> Vec<f64> {
        (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect()
    }

    #[test]
    fn c_without_and_with_jumps() {
        let model = validate_model(fixtures::f1_jump_free()).unwrap();
        assert!((compute_c(&model).unwrap()[0] + 0.00125).abs() < 1e-15);
        let expected = -0.00125 + (0.85f64.ln() + 0.15) + 1.5 * (1.1f64.ln() - 0.1);
        assert!((compute_c(&f1()).unwrap()[0] - expected).abs() < 1e-15);
        let b = validate_model(fixtures::f1b_market()).unwrap();
        assert_eq!(compute_c(&b), Err(KalmanError::A0NotZero));
    }

    #[test]
    fn decomposition_is_exact_and_continuous_part_has_no_jumps() {
        let model = f1();
        let c = Criterion::new(1.0, 1.0).unwrap();
        let paths = simulate_physical(
            &model,
            &c,
            &ConstantPolicy::zero(1),
            &InitialState::Fixed(vec![0.1]),
            &PathConfig::new(40, 0.01, 1.0, 3),
        )
        .unwrap();
        for p in &paths {
            let d = decompose_observations(&model, p).unwrap();
            for k in 0..p.times.len() {
                let y = p.log_prices_at(k)[0];
                assert!(((&d.continuous[k] + &d.jump[k])[0] - y).abs() <= 4.0 * f64::EPSILON * (1.0 + y.abs()));
            }
            // Y¹ increments are ÂX dt + ΣΔW, bounded by a few standard deviations
            for k in 0..p.times.len() - 1 {
                let step = d.continuous[k + 1][0] - d.continuous[k][0];
                assert!(step.abs() < 0.25 * 0.1 * 7.0 + 0.4 * 5.0 * 0.01);
            }
            if p.arrivals.is_empty() {
                for (k, &t) in p.times.iter().enumerate() {
                    let compensation: f64 = 1.0 * 0.85f64.ln() + 1.5 * 1.1f64.ln();
                    assert!((d.jump[k][0] - (d.c[0] - compensation) * t).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn riccati_constant_derivative() {
        let mut raw = fixtures::f1_jump_free();
        raw.mean_reversion = DMatrix::zeros(1, 1);
        raw.asset_loading = DMatrix::zeros(1, 1);
        raw.factor_loading = FactorLoading::Constant(DMatrix::from_row_slice(1, 2, &[0.0, 0.2]));
        raw.jumps = JumpMeasure::default();
        let model = validate_model(raw).unwrap();
        let traj = riccati_solve(&model, &DMatrix::from_element(1, 1, 0.05), &grid(10, 1.0)).unwrap();
        for (t, p) in traj.times.iter().zip(&traj.covariance) {
            assert!((p[(0, 0)] - (0.05 + 0.04 * t)).abs() < 1e-15);
        }
    }

    #[test]
    fn riccati_matches_half_step_rerun() {
        let model = f1();
        let p0 = DMatrix::from_element(1, 1, 0.05);
        let coarse = riccati_solve(&model, &p0, &grid(100, 1.0)).unwrap();
        let fine = riccati_solve(&model, &p0, &grid(200, 1.0)).unwrap();
        for k in 0..=100 {
            assert!((coarse.covariance[k][(0, 0)] - fine.covariance[2 * k][(0, 0)]).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_filter_follows_the_mean() {
        let mut raw = fixtures::f1_market();
        raw.factor_loading = FactorLoading::Constant(DMatrix::zeros(1, 2));
        let model = validate_model(raw).unwrap();
        let times = grid(50, 1.0);
        let traj = riccati_solve(&model, &DMatrix::zeros(1, 1), &times).unwrap();
        assert!(traj.covariance.iter().all(|p| p[(0, 0)] == 0.0));
        let params = FilterParams::new(DVector::from_element(1, 0.3), DMatrix::zeros(1, 1)).unwrap();
        let path = simulate_physical(
            &model,
            &Criterion::new(1.0, 1.0).unwrap(),
            &ConstantPolicy::zero(1),
            &InitialState::Fixed(vec![0.3]),
            &PathConfig::new(1, 0.02, 1.0, 5),
        )
        .unwrap()
        .remove(0);
        let d = decompose_observations(&model, &path).unwrap();
        let state = run_filter(&model, &params, &traj, &d).unwrap();
        for k in 0..times.len() {
            assert!((state.x_hat[k][0] - path.factor_at(k)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let model = f1();
        let traj = riccati_solve(&model, &DMatrix::zeros(1, 1), &grid(10, 1.0)).unwrap();
        let d = Decomposition {
            times: grid(5, 1.0),
            continuous: vec![DVector::zeros(1); 6],
            jump: vec![DVector::zeros(1); 6],
            c: DVector::zeros(1),
        };
        let params = FilterParams::new(DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap();
        assert!(matches!(
            run_filter(&model, &params, &traj, &d),
            Err(KalmanError::GridMismatch(_))
        ));
    }

    #[test]
    fn reduced_model_shapes() {
        let model = f1();
        let traj = riccati_solve(&model, &DMatrix::from_element(1, 1, 0.05), &grid(20, 1.0)).unwrap();
        let reduced = reduced_model(&model, &traj).unwrap();
        assert!(reduced.is_filtered());
        assert_eq!(reduced.noise_dim(), 1);
        let vol = &reduced.raw().asset_volatility;
        assert!((vol * vol - model.asset_covariance()).norm() < 1e-12);
        let expected = (0.05 + 0.05 * 0.4) / 0.25;
        assert!((reduced.factor_loading_at(0.0)[(0, 0)] - expected).abs() < 1e-12);

        let mut raw = fixtures::f1_market();
        raw.factor_loading = FactorLoading::Constant(DMatrix::from_row_slice(1, 2, &[0.0, 0.2]));
        let model = validate_model(raw).unwrap();
        let zero = RiccatiTrajectory {
            times: grid(4, 1.0),
            covariance: vec![DMatrix::zeros(1, 1); 5],
        };
        let reduced = reduced_model(&model, &zero).unwrap();
        assert!((0..5).all(|k| reduced.factor_loading_at(k as f64 * 0.25)[(0, 0)] == 0.0));
    }

    #[test]
    fn prior_must_be_psd() {
        assert!(FilterParams::new(DVector::zeros(1), DMatrix::from_element(1, 1, -0.1)).is_err());
        assert!(FilterParams::new(DVector::zeros(2), DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn csv_export() {
        let model = f1();
        let traj = riccati_solve(&model, &DMatrix::from_element(1, 1, 0.05), &grid(4, 1.0)).unwrap();
        let state = FilterState {
            times: traj.times.clone(),
            x_hat: vec![DVector::zeros(1); 5],
            covariance: traj.covariance,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("filter.csv");
        write_filter_csv(&state, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("t,x_hat0,P00\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
