//! Finite-difference solution of the transformed HJB equation
//!
//! ```text
//! ∂Φ̃/∂t + ½tr(ΛΛᵀD²Φ̃) + min_h [f(t,x,h)ᵀDΦ̃ + θg(x,h)Φ̃] = 0,   Φ̃(T,x) = v^{−θ}
//! ```
//!
//! on a box, with the lateral boundary pinned to the zero-beta value
//! `ψ(t) = v^{−θ}e^{θǧ(T−t)}`, by policy improvement: linear parabolic solves
//! for a frozen policy alternate with pointwise maximization of the inner
//! functional.
//!
//! Internally the unknown is `U = Φ̃/ψ(t)`, which solves
//! `∂U/∂t + ½tr(ΛΛᵀD²U) + fᵀDU + θ(g − ǧ)U = 0` with `U = 1` on the lateral
//! boundary and at `T`. Under the zero-beta policy `U ≡ 1` is then an exact
//! discrete solution.

mod convexity;
mod export;
mod grid;
mod iteration;
mod scheme;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::Criterion;
use crate::optimizer::{NewtonConfig, OptimizerError, ZeroBetaPolicy};
use crate::policy::FeedbackPolicy;

pub use convexity::{convexity_report, ConvexityConfig, ConvexityReport};
pub use export::{load_solution, write_solution, SolutionSummary, FORMAT_VERSION, SOLUTION_CSV, SOLUTION_SUMMARY};
pub use grid::{Grid, MIN_NODES_PER_AXIS, MIN_TIME_STEPS};
pub use iteration::{improve_policy, policy_iteration};
pub use scheme::solve_linear_pde;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HjbError {
    #[error("grid solver supports n = 1 or 2, got n = {0}")]
    UnsupportedDimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zero-beta policy unavailable: {0}")]
    ZeroBeta(OptimizerError),
    #[error("policy infeasible at t = {t}, x = {x:?}: margin {margin}")]
    InfeasiblePolicy { t: f64, x: Vec<f64>, margin: f64 },
    #[error("linear solve failed at t = {t}: residual {residual:e}")]
    LinearSolveFailure { t: f64, residual: f64 },
    #[error("non-positive value {value:e} at t = {t}, x = {x:?}; try a smaller time step")]
    NonPositiveValue { t: f64, x: Vec<f64>, value: f64 },
    #[error("inner optimization failed at t = {t}, x = {x:?}: {source}")]
    Optimizer {
        t: f64,
        x: Vec<f64>,
        source: OptimizerError,
    },
    #[error("policy iteration did not converge after {} iterations (last delta {:e})", .diagnostics.iterations, .diagnostics.deltas.last().copied().unwrap_or(f64::NAN))]
    NoPolicyConvergence { diagnostics: Box<IterationDiagnostics> },
}

/// How the first-order drift term is differenced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftDifferencing {
    /// One-sided on the sign of each drift component. Monotone for any mesh, first order.
    Upwind,
    /// Centered. Second order; monotone only when diffusion dominates.
    Central,
    /// Centered wherever that keeps the scheme monotone, upwind elsewhere.
    #[default]
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stopping threshold on `sup|Φ̃^{k+1} − Φ̃^k|`, relative to `v^{−θ}`.
    pub policy_tol: f64,
    pub max_policy_iters: usize,
    /// Implicit weight of the time scheme, in `[½, 1]`.
    pub time_weight: f64,
    pub drift: DriftDifferencing,
    pub newton: NewtonConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            policy_tol: 1e-8,
            max_policy_iters: 50,
            time_weight: 1.0,
            drift: DriftDifferencing::Hybrid,
            newton: NewtonConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), HjbError> {
        if !(0.5..=1.0).contains(&self.time_weight) {
            return Err(HjbError::InvalidConfig(format!(
                "time_weight = {} outside [0.5, 1]",
                self.time_weight
            )));
        }
        if !(self.policy_tol > 0.0) {
            return Err(HjbError::InvalidConfig("policy_tol must be positive".into()));
        }
        if self.max_policy_iters == 0 {
            return Err(HjbError::InvalidConfig("max_policy_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `v^{−θ}e^{θǧ(T−t)}`, the lateral boundary datum.
pub fn boundary_value(criterion: &Criterion, zero_beta: &ZeroBetaPolicy, horizon: f64, t: f64) -> f64 {
    let theta = criterion.theta();
    (theta * zero_beta.g_check * (horizon - t) - theta * criterion.initial_wealth().ln()).exp()
}

/// Values at every space-time node, time-major: `values[k·nodes + node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn at(&self, k: usize, node: usize) -> f64 {
        self.values[k * self.grid.node_count() + node]
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let nodes = self.grid.node_count();
        &self.values[k * nodes..(k + 1) * nodes]
    }

    /// Multilinear interpolation in `(t, x)`, clamped to the grid.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> f64 {
        let (k, wt) = self.grid.locate_time(t);
        let a = interpolate_space(&self.grid, self.slice(k), 1, 0, x);
        let b = interpolate_space(&self.grid, self.slice(k + 1), 1, 0, x);
        (1.0 - wt) * a + wt * b
    }
}

/// Multilinear interpolation of component `j` of a field with `stride`
/// values per node.
fn interpolate_space(grid: &Grid, slice: &[f64], stride: usize, j: usize, x: &[f64]) -> f64 {
    match grid.dim() {
        1 => {
            let (i, w) = grid.locate(0, x[0]);
            (1.0 - w) * slice[i * stride + j] + w * slice[(i + 1) * stride + j]
        }
        _ => {
            let (i0, w0) = grid.locate(0, x[0]);
            let (i1, w1) = grid.locate(1, x[1]);
            let v = |a: usize, b: usize| slice[grid.flat_index([a, b]) * stride + j];
            (1.0 - w1) * ((1.0 - w0) * v(i0, i1) + w0 * v(i0 + 1, i1))
                + w1 * ((1.0 - w0) * v(i0, i1 + 1) + w0 * v(i0 + 1, i1 + 1))
        }
    }
}

/// An allocation `h ∈ R^m` at every space-time node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: Grid,
    m: usize,
    values: Vec<f64>,
}

impl PolicyField {
    pub fn constant(grid: &Grid, h: &[f64]) -> Self {
        let count = (grid.time_steps() + 1) * grid.node_count();
        Self {
            grid: grid.clone(),
            m: h.len(),
            values: h.iter().copied().cycle().take(count * h.len()).collect(),
        }
    }

    /// Samples a feedback rule at every node.
    pub fn sample(grid: &Grid, policy: &dyn FeedbackPolicy) -> Self {
        let m = policy.control_dim();
        let nodes = grid.node_count();
        let mut values = vec![0.0; (grid.time_steps() + 1) * nodes * m];
        let mut x = vec![0.0; grid.dim()];
        for k in 0..=grid.time_steps() {
            let t = grid.time(k);
            for node in 0..nodes {
                grid.node_coordinates(node, &mut x);
                let start = (k * nodes + node) * m;
                policy.evaluate(t, &x, &mut values[start..start + m]);
            }
        }
        Self {
            grid: grid.clone(),
            m,
            values,
        }
    }

    pub(crate) fn from_values(grid: &Grid, m: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), (grid.time_steps() + 1) * grid.node_count() * m);
        Self {
            grid: grid.clone(),
            m,
            values,
        }
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn at(&self, k: usize, node: usize) -> &[f64] {
        let start = (k * self.grid.node_count() + node) * self.m;
        &self.values[start..start + self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl FeedbackPolicy for PolicyField {
    fn control_dim(&self) -> usize {
        self.m
    }

    /// Multilinear interpolation in `(t, x)`, clamped to the grid box.
    /// Feasibility is preserved because `J` is convex.
    fn evaluate(&self, t: f64, x: &[f64], h: &mut [f64]) {
        let nodes = self.grid.node_count();
        let (k, wt) = self.grid.locate_time(t);
        let lo = &self.values[k * nodes * self.m..(k + 1) * nodes * self.m];
        let hi = &self.values[(k + 1) * nodes * self.m..(k + 2) * nodes * self.m];
        for (j, hj) in h.iter_mut().enumerate() {
            let a = interpolate_space(&self.grid, lo, self.m, j, x);
            let b = interpolate_space(&self.grid, hi, self.m, j, x);
            *hj = (1.0 - wt) * a + wt * b;
        }
    }
}

/// Per-run record of the policy iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    /// Number of linear solves performed.
    pub iterations: usize,
    /// `sup|Φ̃^{k+1} − Φ̃^k|` for each improvement.
    pub deltas: Vec<f64>,
    /// `max(Φ̃^{k+1} − Φ̃^k, 0)` for each improvement; zero for a monotone run.
    pub monotonicity_violations: Vec<f64>,
    /// `max(Φ̃ − ψ)` over all iterates, where `ψ` is the zero-beta bound.
    pub max_bound_excess: f64,
    /// Smallest `Φ̃` over all iterates.
    pub min_phi_tilde: f64,
    /// Largest residual of the discretized HJB equation at interior nodes,
    /// relative to `v^{−θ}`.
    pub hamiltonian_residual: f64,
}

/// Solution of the HJB equation on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub theta: f64,
    pub initial_wealth: f64,
    pub zero_beta: ZeroBetaPolicy,
    pub phi_tilde: GridFunction,
    /// `−(1/θ)ln Φ̃` node for node.
    pub phi: GridFunction,
    /// Maximizer of the inner functional at each node.
    pub policy: PolicyField,
    pub diagnostics: IterationDiagnostics,
}

impl ValueField {
    pub(crate) fn assemble(
        criterion: &Criterion,
        zero_beta: ZeroBetaPolicy,
        phi_tilde: GridFunction,
        policy: PolicyField,
        diagnostics: IterationDiagnostics,
    ) -> Self {
        let theta = criterion.theta();
        let phi = GridFunction {
            grid: phi_tilde.grid.clone(),
            values: phi_tilde.values.iter().map(|v| -v.ln() / theta).collect(),
        };
        Self {
            theta,
            initial_wealth: criterion.initial_wealth(),
            zero_beta,
            phi_tilde,
            phi,
            policy,
            diagnostics,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.phi_tilde.grid
    }

    pub fn criterion(&self) -> Criterion {
        Criterion::new(self.theta, self.initial_wealth).expect("stored criterion is valid")
    }

    /// The zero-beta upper bound `ψ(t) = v^{−θ}e^{θǧ(T−t)}`.
    pub fn upper_bound(&self, t: f64) -> f64 {
        boundary_value(&self.criterion(), &self.zero_beta, self.grid().horizon(), t)
    }
}
