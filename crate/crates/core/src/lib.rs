//! Finite-horizon risk-sensitive asset management with jump-diffusion
//! prices and affine Gaussian factors.

pub mod criterion;
pub mod fixtures;
pub mod hjb;
pub mod io;
pub mod kalman;
pub mod model;
pub mod montecarlo;
pub mod optimizer;
pub mod policy;

pub use criterion::{big_g, effective_drift, g_value, Criterion, CriterionError};
pub use model::{
    numerical_rank, validate_model, FactorLoading, JumpAtom, JumpMeasure, MarketModel, ModelError, ValidatedModel,
    ValidationErrors,
};
pub use optimizer::{
    inner_grad_hess, inner_objective, maximize_inner, zero_beta, InnerProblem, InnerSolution, NewtonConfig,
    OptimizerError, ZeroBetaPolicy,
};
pub use policy::{ConstantPolicy, FeedbackPolicy, FnPolicy};
