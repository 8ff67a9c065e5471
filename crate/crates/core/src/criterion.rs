//! The running cost `g`, the jump density factor `G` and the factor drift
//! under the changed measure.
//!
//! Powers `(1+u)^{−θ}` are evaluated as `exp(−θ·ln1p(u))` so that the
//! compensated bracket `(1/θ)[(1+u)^{−θ} − 1] + u`, which is `O(u²)`, keeps
//! its accuracy for small `u`.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::{JumpAtom, ValidatedModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriterionError {
    #[error("invalid criterion parameter: {0}")]
    InvalidParameter(String),
    #[error("control is infeasible: jump margin {margin} is not positive")]
    InfeasibleControl { margin: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Risk sensitivity `θ > 0` and initial wealth `v > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criterion {
    theta: f64,
    v: f64,
}

impl Criterion {
    pub fn new(theta: f64, v: f64) -> Result<Self, CriterionError> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(CriterionError::InvalidParameter(format!(
                "theta must be positive, got {theta}"
            )));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(CriterionError::InvalidParameter(format!(
                "initial wealth must be positive, got {v}"
            )));
        }
        Ok(Self { theta, v })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn initial_wealth(&self) -> f64 {
        self.v
    }

    /// `v^{−θ}`, the terminal value of the transformed criterion.
    pub fn terminal_value(&self) -> f64 {
        (-self.theta * self.v.ln()).exp()
    }
}

/// `ln(1 − G) = −θ·ln(1+u)`.
#[inline]
pub(crate) fn log_one_minus_big_g(theta: f64, u: f64) -> f64 {
    -theta * u.ln_1p()
}

/// `G = 1 − (1+u)^{−θ}`.
#[inline]
pub(crate) fn big_g_of(theta: f64, u: f64) -> f64 {
    -(log_one_minus_big_g(theta, u)).exp_m1()
}

/// `(1/θ)[(1+u)^{−θ} − 1] + u·1_comp`, the per-atom integrand of `g`.
#[inline]
pub(crate) fn jump_cost_integrand(theta: f64, u: f64, compensated: bool) -> f64 {
    let bracket = (log_one_minus_big_g(theta, u)).exp_m1() / theta;
    if compensated {
        bracket + u
    } else {
        bracket
    }
}

fn check_feasible(model: &ValidatedModel, h: &[f64]) -> Result<(), CriterionError> {
    let margin = model.margin(h);
    if margin > 0.0 {
        Ok(())
    } else {
        Err(CriterionError::InfeasibleControl { margin })
    }
}

/// `Σ_j λ_j {(1/θ)[(1+hᵀψ_j)^{−θ} − 1] + hᵀψ_j·1_comp}`. `h` must be feasible.
pub(crate) fn jump_cost(atoms: &[JumpAtom], theta: f64, h: &[f64]) -> f64 {
    atoms
        .iter()
        .map(|a| a.intensity * jump_cost_integrand(theta, a.dot(h), a.compensated))
        .sum()
}

/// `Σ_{compensated} λ_j [ln(1+hᵀψ_j) − hᵀψ_j]`, the compensator of the
/// log-wealth jump part.
pub(crate) fn wealth_compensator(atoms: &[JumpAtom], h: &[f64]) -> f64 {
    atoms
        .iter()
        .filter(|a| a.compensated)
        .map(|a| {
            let u = a.dot(h);
            a.intensity * (u.ln_1p() - u)
        })
        .sum()
}

/// `Σ_{compensated} λ_j ln(1+hᵀψ_j)`, the compensator removed from the jump
/// integral for compensated atoms.
pub(crate) fn wealth_jump_compensator(atoms: &[JumpAtom], h: &[f64]) -> f64 {
    atoms
        .iter()
        .filter(|a| a.compensated)
        .map(|a| a.intensity * a.dot(h).ln_1p())
        .sum()
}

/// `Σ_j λ_j [ln(1 − G_j) + G_j]`, the drift of the density exponent.
pub(crate) fn density_compensator(atoms: &[JumpAtom], theta: f64, h: &[f64]) -> f64 {
    atoms
        .iter()
        .map(|a| {
            let u = a.dot(h);
            a.intensity * (log_one_minus_big_g(theta, u) + big_g_of(theta, u))
        })
        .sum()
}

/// `Σ_j λ_j ln(1 − G_j)`, the compensator of the density jump integral.
pub(crate) fn density_jump_compensator(atoms: &[JumpAtom], theta: f64, h: &[f64]) -> f64 {
    atoms
        .iter()
        .map(|a| a.intensity * log_one_minus_big_g(theta, a.dot(h)))
        .sum()
}

/// The running cost
/// `g(x,h) = ½(θ+1)hᵀΣΣᵀh − a0 − A0ᵀx − hᵀ(â+Âx) + Σ_j λ_j{(1/θ)[(1+hᵀψ_j)^{−θ} − 1] + hᵀψ_j·1_comp}`.
pub fn g_value(model: &ValidatedModel, criterion: &Criterion, x: &[f64], h: &[f64]) -> Result<f64, CriterionError> {
    check_dims(model, Some(x), h)?;
    check_feasible(model, h)?;
    Ok(g_unchecked(model, criterion.theta(), x, h))
}

#[inline]
pub(crate) fn g_unchecked(model: &ValidatedModel, theta: f64, x: &[f64], h: &[f64]) -> f64 {
    let cov = model.asset_covariance();
    let a_hat = model.excess_drift();
    let big_a_hat = model.excess_loading();
    let raw = model.raw();
    let m = h.len();
    let mut quad = 0.0;
    let mut lin = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            row += cov[(i, j)] * h[j];
        }
        quad += h[i] * row;
        let mut drift = a_hat[i];
        for (k, xk) in x.iter().enumerate() {
            drift += big_a_hat[(i, k)] * xk;
        }
        lin += h[i] * drift;
    }
    let rate: f64 = raw.rate_intercept + raw.rate_loading.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    0.5 * (theta + 1.0) * quad - rate - lin + jump_cost(&raw.jumps.atoms, theta, h)
}

/// `G(h, ψ) = 1 − (1 + hᵀψ)^{−θ}`.
pub fn big_g(criterion: &Criterion, h: &[f64], mark: &[f64]) -> Result<f64, CriterionError> {
    if h.len() != mark.len() {
        return Err(CriterionError::DimensionMismatch(format!(
            "control length {} vs mark length {}",
            h.len(),
            mark.len()
        )));
    }
    let u: f64 = h.iter().zip(mark).map(|(a, b)| a * b).sum();
    if !(1.0 + u > 0.0) {
        return Err(CriterionError::InfeasibleControl { margin: 1.0 + u });
    }
    Ok(big_g_of(criterion.theta(), u))
}

/// Factor drift under the changed measure, `b + Bx − θΛ(t)Σᵀh`.
pub fn effective_drift(
    model: &ValidatedModel,
    criterion: &Criterion,
    t: f64,
    x: &[f64],
    h: &[f64],
) -> Result<DVector<f64>, CriterionError> {
    check_dims(model, Some(x), h)?;
    let mut out = vec![0.0; model.n()];
    let cross = model.loading_cross_at(t);
    drift_with_cross(model, criterion.theta(), cross.as_slice(), x, h, &mut out);
    Ok(DVector::from_vec(out))
}

/// Drift evaluation with a precomputed column-major `ΛΣᵀ` (n×m).
#[inline]
pub(crate) fn drift_with_cross(
    model: &ValidatedModel,
    theta: f64,
    cross: &[f64],
    x: &[f64],
    h: &[f64],
    out: &mut [f64],
) {
    let raw = model.raw();
    let n = x.len();
    for i in 0..n {
        let mut v = raw.factor_intercept[i];
        for k in 0..n {
            v += raw.mean_reversion[(i, k)] * x[k];
        }
        for (j, hj) in h.iter().enumerate() {
            v -= theta * cross[i + j * n] * hj;
        }
        out[i] = v;
    }
}

fn check_dims(model: &ValidatedModel, x: Option<&[f64]>, h: &[f64]) -> Result<(), CriterionError> {
    if h.len() != model.m() {
        return Err(CriterionError::DimensionMismatch(format!(
            "control has length {}, expected {}",
            h.len(),
            model.m()
        )));
    }
    if let Some(x) = x {
        if x.len() != model.n() {
            return Err(CriterionError::DimensionMismatch(format!(
                "state has length {}, expected {}",
                x.len(),
                model.n()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::validate_model;
    use proptest::prelude::*;

    fn f1() -> ValidatedModel {
        validate_model(fixtures::f1_market()).unwrap()
    }

    #[test]
    fn g_at_zero_control_is_minus_rate() {
        let model = f1();
        let c = fixtures::f1_criterion();
        for x in [-2.0, 0.0, 0.7] {
            assert_eq!(g_value(&model, &c, &[x], &[0.0]).unwrap(), -0.02);
        }
    }

    #[test]
    fn g_at_half_matches_direct_sum() {
        let model = f1();
        let c = fixtures::f1_criterion();
        // quadratic 0.015625, rate −0.02, linear −0.015,
        // atoms 1.0·(1/0.925 − 1 − 0.075) + 1.5·(1/1.05 − 1 + 0.05)
        let jumps = (1.0 / 0.925 - 1.0 - 0.075) + 1.5 * (1.0 / 1.05 - 1.0 + 0.05);
        let expected = 0.015625 - 0.02 - 0.015 + jumps;
        let got = g_value(&model, &c, &[0.0], &[0.5]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got + 0.0097225).abs() < 5e-8);
    }

    #[test]
    fn g_without_atoms() {
        let model = validate_model(fixtures::f1_jump_free()).unwrap();
        let c = fixtures::f1_criterion();
        let got = g_value(&model, &c, &[0.0], &[0.5]).unwrap();
        assert!((got + 0.019375).abs() < 1e-15);
    }

    #[test]
    fn g_rejects_infeasible_control() {
        let model = f1();
        let c = fixtures::f1_criterion();
        assert!(matches!(
            g_value(&model, &c, &[0.0], &[-10.5]),
            Err(CriterionError::InfeasibleControl { .. })
        ));
    }

    #[test]
    fn big_g_examples() {
        let c1 = Criterion::new(1.0, 1.0).unwrap();
        let c2 = Criterion::new(2.0, 1.0).unwrap();
        assert_eq!(big_g(&c1, &[0.0], &[0.3]).unwrap(), 0.0);
        assert!((big_g(&c1, &[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((big_g(&c2, &[1.0], &[0.1]).unwrap() - (1.0 - 1.0 / 1.21)).abs() < 1e-15);
        assert!((big_g(&c2, &[1.0], &[0.1]).unwrap() - 0.173554).abs() < 1e-6);
        assert!(big_g(&c1, &[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn drift_examples() {
        let model = f1();
        let c = fixtures::f1_criterion();
        let d = |x: f64, h: f64| effective_drift(&model, &c, 0.0, &[x], &[h]).unwrap()[0];
        assert!((d(1.0, 0.0) + 0.4).abs() < 1e-15);
        assert!((d(1.0, 0.2) + 0.41).abs() < 1e-15);
        assert!((d(0.0, 0.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn criterion_rejects_nonpositive_parameters() {
        assert!(Criterion::new(0.0, 1.0).is_err());
        assert!(Criterion::new(1.0, -1.0).is_err());
        assert_eq!(Criterion::new(2.0, 0.5).unwrap().terminal_value(), 4.0);
    }

    #[test]
    fn g_grows_toward_the_boundary() {
        let model = f1();
        let c = fixtures::f1_criterion();
        // binding atom ψ = −0.15 at h = 1/0.15
        let edge = 1.0 / 0.15;
        let mut last = f64::NEG_INFINITY;
        for k in 1..12 {
            let h = edge * (1.0 - 10f64.powi(-k));
            let v = g_value(&model, &c, &[0.0], &[h]).unwrap();
            assert!(v > last);
            last = v;
        }
        assert!(last > 1e9);
    }

    proptest! {
        #[test]
        fn g_is_strictly_convex(h in -9.5f64..6.5, d in 0.01f64..0.1, x in -2.0f64..2.0) {
            let model = f1();
            let c = fixtures::f1_criterion();
            prop_assume!(model.margin(&[h - d]) > 0.0 && model.margin(&[h + d]) > 0.0);
            let g = |h: f64| g_value(&model, &c, &[x], &[h]).unwrap();
            prop_assert!(g(h + d) - 2.0 * g(h) + g(h - d) > 0.0);
        }

        #[test]
        fn big_g_is_below_one(h in -9.99f64..6.66, theta in 0.1f64..5.0) {
            let c = Criterion::new(theta, 1.0).unwrap();
            for mark in [-0.15, 0.10] {
                let v = big_g(&c, &[h], &[mark]).unwrap();
                prop_assert!(v < 1.0);
            }
        }
    }
}
