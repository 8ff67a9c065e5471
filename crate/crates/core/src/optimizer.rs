//! Maximization of the strictly concave inner functional
//!
//! ```text
//! L(x, p, h) = −½(θ+1)hᵀΣΣᵀh − θhᵀΣΛᵀp + hᵀ(â+Âx)
//!              − (1/θ) Σ_j λ_j [(1+hᵀψ_j)^{−θ} − 1 + θ hᵀψ_j·1_comp]
//! ```
//!
//! over the open polytope `J = {h : 1 + hᵀψ_j > 0 ∀j}`, and construction of
//! zero-beta policies.
//!
//! The maximizer is found by damped Newton started at `h = 0` (always
//! feasible, `L = 0`). Each step is cut back so that every atom keeps at
//! least 1% of its current margin, then halved until the Armijo condition
//! holds. The power term is a built-in barrier, so no extra barrier is
//! added.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::{g_unchecked, jump_cost_integrand, Criterion, CriterionError};
use crate::model::{JumpAtom, ValidatedModel, RANK_RELATIVE_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error("Newton did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NoConvergence { grad_norm: f64, iterations: usize },
    #[error("excess loading has rank {rank} < n = {n} while A0 is nonzero")]
    RankDeficient { rank: usize, n: usize },
    #[error("zero-beta solution is infeasible: margin {margin}")]
    ZeroBetaInfeasible { margin: f64 },
    #[error("zero-beta running cost depends on the state: {0:e} at the probe point")]
    StateDependent(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    /// Relative gradient tolerance, scaled by `max(1, |â+Âx−θΣΛᵀp|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fraction of each atom margin a step may consume.
    pub boundary_fraction: f64,
    pub armijo: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100,
            boundary_fraction: 0.99,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub h_star: DVector<f64>,
    /// `L` at `h_star`; never negative.
    pub objective: f64,
    pub grad_norm: f64,
    pub margin: f64,
    pub iterations: usize,
}

/// A zero-beta policy `ȟ` and its state-independent running cost `ǧ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroBetaPolicy {
    pub h_check: DVector<f64>,
    pub g_check: f64,
}

/// The inner problem at a fixed `(t, x, p)`, reduced to its quadratic and
/// linear coefficients: `L(h) = −½hᵀQh + qᵀh − (1/θ)Σ_j λ_j[...]`.
#[derive(Debug, Clone)]
pub struct InnerProblem<'a> {
    atoms: &'a [JumpAtom],
    theta: f64,
    quad: DMatrix<f64>,
    linear: DVector<f64>,
}

impl<'a> InnerProblem<'a> {
    pub fn new(
        model: &'a ValidatedModel,
        criterion: &Criterion,
        t: f64,
        x: &[f64],
        p: &[f64],
    ) -> Result<Self, CriterionError> {
        if x.len() != model.n() || p.len() != model.n() {
            return Err(CriterionError::DimensionMismatch(format!(
                "state/costate lengths {}/{} , expected {}",
                x.len(),
                p.len(),
                model.n()
            )));
        }
        let theta = criterion.theta();
        let x = DVector::from_column_slice(x);
        let p = DVector::from_column_slice(p);
        let cross = model.loading_cross_at(t);
        let linear = model.excess_drift() + model.excess_loading() * x - cross.tr_mul(&p) * theta;
        Ok(Self::with_linear(model, criterion, linear))
    }

    /// Builds the problem from an explicit linear coefficient `q`.
    pub fn with_linear(model: &'a ValidatedModel, criterion: &Criterion, linear: DVector<f64>) -> Self {
        let theta = criterion.theta();
        Self {
            atoms: &model.jumps().atoms,
            theta,
            quad: model.asset_covariance() * (theta + 1.0),
            linear,
        }
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn margin(&self, h: &[f64]) -> f64 {
        self.atoms.iter().map(|a| 1.0 + a.dot(h)).fold(f64::INFINITY, f64::min)
    }

    fn check(&self, h: &DVector<f64>) -> Result<(), CriterionError> {
        if h.len() != self.linear.len() {
            return Err(CriterionError::DimensionMismatch(format!(
                "control has length {}, expected {}",
                h.len(),
                self.linear.len()
            )));
        }
        let margin = self.margin(h.as_slice());
        if margin > 0.0 {
            Ok(())
        } else {
            Err(CriterionError::InfeasibleControl { margin })
        }
    }

    pub fn objective(&self, h: &DVector<f64>) -> Result<f64, CriterionError> {
        self.check(h)?;
        Ok(self.objective_unchecked(h))
    }

    fn objective_unchecked(&self, h: &DVector<f64>) -> f64 {
        let hs = h.as_slice();
        let jumps: f64 = self
            .atoms
            .iter()
            .map(|a| a.intensity * jump_cost_integrand(self.theta, a.dot(hs), a.compensated))
            .sum();
        -0.5 * h.dot(&(&self.quad * h)) + self.linear.dot(h) - jumps
    }

    pub fn grad_hess(&self, h: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), CriterionError> {
        self.check(h)?;
        Ok(self.grad_hess_unchecked(h))
    }

    fn grad_hess_unchecked(&self, h: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = h.len();
        let mut grad = &self.linear - &self.quad * h;
        let mut hess = -self.quad.clone();
        for a in self.atoms {
            let psi = DVector::from_column_slice(&a.mark);
            let log1p = a.dot(h.as_slice()).ln_1p();
            let first = (-(self.theta + 1.0) * log1p).exp();
            let second = (-(self.theta + 2.0) * log1p).exp();
            let coef = a.intensity * (first - if a.compensated { 1.0 } else { 0.0 });
            grad.axpy(coef, &psi, 1.0);
            let w = a.intensity * (self.theta + 1.0) * second;
            for i in 0..m {
                for j in 0..m {
                    hess[(i, j)] -= w * psi[i] * psi[j];
                }
            }
        }
        (grad, hess)
    }

    /// Damped Newton from `h = 0`.
    pub fn maximize(&self, config: &NewtonConfig) -> Result<InnerSolution, OptimizerError> {
        let m = self.linear.len();
        self.maximize_affine(&DVector::zeros(m), &DMatrix::identity(m, m), config)
    }

    /// Maximizes over `{origin + basis·z}`. `origin` must be feasible.
    pub(crate) fn maximize_affine(
        &self,
        origin: &DVector<f64>,
        basis: &DMatrix<f64>,
        config: &NewtonConfig,
    ) -> Result<InnerSolution, OptimizerError> {
        self.check(origin)?;
        let tol = config.tolerance * self.linear.norm().max(1.0);
        let mut h = origin.clone();
        let mut value = self.objective_unchecked(&h);
        let mut iterations = 0;
        loop {
            let (grad, hess) = self.grad_hess_unchecked(&h);
            let g_red = basis.tr_mul(&grad);
            let grad_norm = g_red.norm();
            if grad_norm <= tol {
                return Ok(InnerSolution {
                    margin: self.margin(h.as_slice()),
                    h_star: h,
                    objective: value,
                    grad_norm,
                    iterations,
                });
            }
            if iterations >= config.max_iterations {
                return Err(OptimizerError::NoConvergence { grad_norm, iterations });
            }
            iterations += 1;

            let neg_hess = -(basis.transpose() * &hess * basis);
            let dir_red = match neg_hess.clone().cholesky() {
                Some(ch) => ch.solve(&g_red),
                None => g_red.clone(),
            };
            let dir = basis * &dir_red;
            let slope = g_red.dot(&dir_red);

            let mut alpha: f64 = 1.0;
            for a in self.atoms {
                let s = a.dot(dir.as_slice());
                if s < 0.0 {
                    let margin = 1.0 + a.dot(h.as_slice());
                    alpha = alpha.min(config.boundary_fraction * margin / -s);
                }
            }
            // Inside the quadratic-convergence region the objective change is
            // below rounding, so the full step is taken unchecked.
            let tiny = slope <= 1e-14 * (1.0 + value.abs());
            let mut accepted = false;
            while alpha > 1e-20 {
                let trial = &h + &dir * alpha;
                let trial_value = self.objective_unchecked(&trial);
                if (tiny && alpha == 1.0) || trial_value >= value + config.armijo * alpha * slope {
                    h = trial;
                    value = trial_value;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(OptimizerError::NoConvergence { grad_norm, iterations });
            }
        }
    }
}

/// `L(x, p, h)` at time `t`.
pub fn inner_objective(
    model: &ValidatedModel,
    criterion: &Criterion,
    t: f64,
    x: &[f64],
    p: &[f64],
    h: &[f64],
) -> Result<f64, CriterionError> {
    InnerProblem::new(model, criterion, t, x, p)?.objective(&DVector::from_column_slice(h))
}

/// Analytic gradient and Hessian of `L` in `h`.
pub fn inner_grad_hess(
    model: &ValidatedModel,
    criterion: &Criterion,
    t: f64,
    x: &[f64],
    p: &[f64],
    h: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), CriterionError> {
    InnerProblem::new(model, criterion, t, x, p)?.grad_hess(&DVector::from_column_slice(h))
}

/// The unique maximizer `h*(t, x, p)` of `L` over `J`.
pub fn maximize_inner(
    model: &ValidatedModel,
    criterion: &Criterion,
    t: f64,
    x: &[f64],
    p: &[f64],
    config: &NewtonConfig,
) -> Result<InnerSolution, OptimizerError> {
    InnerProblem::new(model, criterion, t, x, p)?.maximize(config)
}

/// A zero-beta policy: a feasible `ȟ` with `Âᵀȟ = −A0`, so that `g(x, ȟ)`
/// does not depend on `x`.
///
/// The base point is the minimum-norm solution (`0` when `A0 = 0`). When the
/// solution set is a nontrivial affine subspace, the returned policy is the
/// point of that subspace with the smallest running cost `ǧ`, which is unique
/// by strict convexity of `g`.
pub fn zero_beta(model: &ValidatedModel, criterion: &Criterion) -> Result<ZeroBetaPolicy, OptimizerError> {
    let n = model.n();
    let m = model.m();
    let a_hat = model.excess_loading();
    let rate_loading = &model.raw().rate_loading;

    let origin = if rate_loading.iter().all(|&v| v == 0.0) {
        DVector::zeros(m)
    } else {
        let rank = model.excess_loading_rank();
        if rank < n {
            return Err(OptimizerError::RankDeficient { rank, n });
        }
        // Âᵀh = −A0 with Â of full column rank: h = Â(ÂᵀÂ)⁻¹(−A0).
        let gram = a_hat.tr_mul(a_hat);
        let rhs = -rate_loading;
        let coef = gram
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(OptimizerError::RankDeficient { rank, n })?;
        a_hat * coef
    };
    let margin = model.margin(origin.as_slice());
    if !(margin > 0.0) {
        return Err(OptimizerError::ZeroBetaInfeasible { margin });
    }

    let basis = left_null_space(a_hat);
    let h_check = if basis.ncols() == 0 {
        origin
    } else {
        // minimizing g over the subspace = maximizing L(0, 0, ·)
        let problem = InnerProblem::with_linear(model, criterion, model.excess_drift().clone());
        problem
            .maximize_affine(&origin, &basis, &NewtonConfig::default())?
            .h_star
    };

    let theta = criterion.theta();
    let zero = vec![0.0; n];
    let g_check = g_unchecked(model, theta, &zero, h_check.as_slice());
    let probe: Vec<f64> = (0..n).map(|k| 0.731 - 1.37 * k as f64).collect();
    let g_probe = g_unchecked(model, theta, &probe, h_check.as_slice());
    let gap = (g_probe - g_check).abs();
    if gap > 1e-12 * (1.0 + g_check.abs()) {
        return Err(OptimizerError::StateDependent(gap));
    }
    Ok(ZeroBetaPolicy { h_check, g_check })
}

/// Orthonormal basis (m×k) of `{h : Âᵀh = 0}`.
fn left_null_space(a_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a_hat.nrows();
    let gram = a_hat * a_hat.transpose();
    let eig = SymmetricEigen::new(gram);
    let largest = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = (RANK_RELATIVE_THRESHOLD * largest.sqrt()).powi(2);
    let cols: Vec<DVector<f64>> = (0..m)
        .filter(|&i| largest == 0.0 || eig.eigenvalues[i] <= cutoff)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}
