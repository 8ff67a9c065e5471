//! Reference market models used in the test suites, the CLI examples and the
//! README. All numbers are invented inputs.

use nalgebra::{DMatrix, DVector};

use crate::criterion::Criterion;
use crate::model::{FactorLoading, JumpAtom, JumpMeasure, MarketModel};

/// One factor, one asset, two compensated jump atoms.
pub fn f1_market() -> MarketModel {
    MarketModel {
        factor_intercept: DVector::from_vec(vec![0.1]),
        mean_reversion: DMatrix::from_element(1, 1, -0.5),
        factor_loading: FactorLoading::Constant(DMatrix::from_row_slice(1, 2, &[0.2, 0.05])),
        rate_intercept: 0.02,
        rate_loading: DVector::from_vec(vec![0.0]),
        asset_intercept: DVector::from_vec(vec![0.05]),
        asset_loading: DMatrix::from_element(1, 1, 0.4),
        asset_volatility: DMatrix::from_row_slice(1, 2, &[0.25, 0.0]),
        jumps: JumpMeasure::new(vec![
            JumpAtom::new(vec![-0.15], 1.0, true),
            JumpAtom::new(vec![0.10], 1.5, true),
        ]),
        pure_diffusion: false,
    }
}

/// As [`f1_market`] with a factor-dependent money-market rate, `A0 = 0.1`.
pub fn f1b_market() -> MarketModel {
    let mut raw = f1_market();
    raw.rate_loading = DVector::from_vec(vec![0.1]);
    raw
}

/// As [`f1_market`] with the jump atoms removed.
pub fn f1_jump_free() -> MarketModel {
    let mut raw = f1_market();
    raw.jumps = JumpMeasure::default();
    raw.pure_diffusion = true;
    raw
}

/// As [`f1_market`] with `A = 0` and `A0 = 0`, so the running cost does not
/// depend on the factor.
pub fn f1_state_independent() -> MarketModel {
    let mut raw = f1_market();
    raw.asset_loading = DMatrix::zeros(1, 1);
    raw
}

/// Two factors, two assets, four compensated atoms. The Brownian motion is
/// four-dimensional and shared between factors and assets.
pub fn two_factor_market() -> MarketModel {
    MarketModel {
        factor_intercept: DVector::from_vec(vec![0.1, 0.0]),
        mean_reversion: DMatrix::from_row_slice(2, 2, &[-0.5, 0.1, 0.0, -0.8]),
        factor_loading: FactorLoading::Constant(DMatrix::from_row_slice(
            2,
            4,
            &[0.2, 0.0, 0.05, 0.0, 0.0, 0.15, 0.0, 0.03],
        )),
        rate_intercept: 0.02,
        rate_loading: DVector::from_vec(vec![0.0, 0.0]),
        asset_intercept: DVector::from_vec(vec![0.05, 0.04]),
        asset_loading: DMatrix::from_row_slice(2, 2, &[0.4, 0.1, -0.1, 0.3]),
        asset_volatility: DMatrix::from_row_slice(2, 4, &[0.05, 0.0, 0.25, 0.0, 0.0, 0.03, 0.05, 0.2]),
        jumps: JumpMeasure::new(vec![
            JumpAtom::new(vec![-0.15, -0.05], 1.0, true),
            JumpAtom::new(vec![0.10, 0.0], 1.5, true),
            JumpAtom::new(vec![0.0, 0.08], 0.8, true),
            JumpAtom::new(vec![0.05, -0.10], 0.5, true),
        ]),
        pure_diffusion: false,
    }
}

/// `θ = 1`, `v = 1`.
pub fn f1_criterion() -> Criterion {
    Criterion::new(1.0, 1.0).expect("valid criterion")
}

pub const F1_HORIZON: f64 = 1.0;
