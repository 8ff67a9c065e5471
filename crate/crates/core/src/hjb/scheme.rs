use crate::criterion::{drift_with_cross, g_unchecked, Criterion};
use crate::model::ValidatedModel;
use crate::optimizer::{zero_beta, ZeroBetaPolicy};

use super::{boundary_value, DriftDifferencing, Grid, GridFunction, HjbError, PolicyField, SolverConfig};

const GAUSS_SEIDEL_TOL: f64 = 1e-14;
const GAUSS_SEIDEL_MAX_SWEEPS: usize = 50_000;

/// Shared, read-only data for one solver run.
pub(crate) struct Context<'a> {
    pub model: &'a ValidatedModel,
    pub criterion: Criterion,
    pub theta: f64,
    pub zero_beta: ZeroBetaPolicy,
    pub grid: &'a Grid,
    pub config: &'a SolverConfig,
    /// `ΛΛᵀ(t_k)`, column-major, one per time node.
    covariance: Vec<Vec<f64>>,
    /// `ΛΣᵀ(t_k)`, column-major n×m, one per time node.
    cross: Vec<Vec<f64>>,
}

impl<'a> Context<'a> {
    pub fn new(
        model: &'a ValidatedModel,
        criterion: &Criterion,
        grid: &'a Grid,
        config: &'a SolverConfig,
    ) -> Result<Self, HjbError> {
        config.validate()?;
        if model.n() != grid.dim() {
            return Err(HjbError::DimensionMismatch(format!(
                "model has {} factors, grid has {} axes",
                model.n(),
                grid.dim()
            )));
        }
        if model.n() > 2 {
            return Err(HjbError::UnsupportedDimension(model.n()));
        }
        let zero_beta = zero_beta(model, criterion).map_err(HjbError::ZeroBeta)?;
        let times = (0..=grid.time_steps()).map(|k| grid.time(k));
        let (covariance, cross) = times
            .map(|t| {
                (
                    model.factor_covariance_at(t).as_slice().to_vec(),
                    model.loading_cross_at(t).as_slice().to_vec(),
                )
            })
            .unzip();
        Ok(Self {
            model,
            criterion: *criterion,
            theta: criterion.theta(),
            zero_beta,
            grid,
            config,
            covariance,
            cross,
        })
    }

    pub fn psi(&self, k: usize) -> f64 {
        boundary_value(&self.criterion, &self.zero_beta, self.grid.horizon(), self.grid.time(k))
    }

    pub fn covariance(&self, k: usize) -> &[f64] {
        &self.covariance[k]
    }

    pub fn cross(&self, k: usize) -> &[f64] {
        &self.cross[k]
    }

    pub fn check_policy(&self, policy: &PolicyField) -> Result<(), HjbError> {
        if policy.grid != *self.grid {
            return Err(HjbError::DimensionMismatch(
                "policy field lives on a different grid".into(),
            ));
        }
        if policy.control_dim() != self.model.m() {
            return Err(HjbError::DimensionMismatch(format!(
                "policy has {} components, model has {} assets",
                policy.control_dim(),
                self.model.m()
            )));
        }
        Ok(())
    }
}

/// One row of the spatial operator
/// `½tr(ΛΛᵀD²U) + fᵀDU + θ(g − ǧ)U` at an interior node.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Row {
    diag: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    /// Coefficient of the four-point mixed-derivative stencil.
    cross: f64,
    /// Some axis uses one-sided drift differences.
    pub upwinded: bool,
}

/// The operator row at an interior node for the control `h`, which must be feasible.
pub(crate) fn row_at(ctx: &Context, k: usize, x: &[f64], h: &[f64]) -> Row {
    let grid = ctx.grid;
    let n = grid.dim();
    let cov = ctx.covariance(k);
    let dx = [grid.spacing(0), if n > 1 { grid.spacing(1) } else { 1.0 }];
    let mut f = [0.0; 2];
    drift_with_cross(ctx.model, ctx.theta, ctx.cross(k), x, h, &mut f[..n]);
    let c = ctx.theta * (g_unchecked(ctx.model, ctx.theta, x, h) - ctx.zero_beta.g_check);
    let mut r = Row {
        diag: c,
        ..Row::default()
    };
    for axis in 0..n {
        let a = 0.5 * cov[axis + axis * n];
        let d2 = a / (dx[axis] * dx[axis]);
        let half = f[axis] / (2.0 * dx[axis]);
        let central = match ctx.config.drift {
            DriftDifferencing::Central => true,
            DriftDifferencing::Upwind => false,
            DriftDifferencing::Hybrid => d2 >= half.abs(),
        };
        r.lo[axis] = d2;
        r.hi[axis] = d2;
        r.diag -= 2.0 * d2;
        if central {
            r.lo[axis] -= half;
            r.hi[axis] += half;
        } else {
            r.upwinded = true;
            if f[axis] > 0.0 {
                r.hi[axis] += 2.0 * half;
                r.diag -= 2.0 * half;
            } else {
                r.lo[axis] -= 2.0 * half;
                r.diag += 2.0 * half;
            }
        }
    }
    if n == 2 {
        r.cross = cov[1] / (4.0 * dx[0] * dx[1]);
    }
    r
}

fn assemble_rows(ctx: &Context, k: usize, policy: &PolicyField, rows: &mut [Row]) -> Result<(), HjbError> {
    let grid = ctx.grid;
    let n = grid.dim();
    let mut x = [0.0; 2];
    for (node, row) in rows.iter_mut().enumerate() {
        if grid.is_boundary(node) {
            continue;
        }
        let x = &mut x[..n];
        grid.node_coordinates(node, x);
        let h = policy.at(k, node);
        let margin = ctx.model.margin(h);
        if !(margin > 0.0) {
            return Err(HjbError::InfeasiblePolicy {
                t: grid.time(k),
                x: x.to_vec(),
                margin,
            });
        }
        *row = row_at(ctx, k, x, h);
    }
    Ok(())
}

/// `(A u)` at an interior node.
#[inline]
pub(crate) fn apply_row(grid: &Grid, node: usize, r: &Row, u: &[f64]) -> f64 {
    let n = grid.dim();
    let stride = [1, grid.nodes_per_axis()];
    let mut v = r.diag * u[node];
    for axis in 0..n {
        v += r.lo[axis] * u[node - stride[axis]] + r.hi[axis] * u[node + stride[axis]];
    }
    if n == 2 {
        let s = stride[1];
        v += r.cross * (u[node + 1 + s] - u[node + 1 - s] - u[node - 1 + s] + u[node - 1 - s]);
    }
    v
}

/// Backward march for the transformed unknown `U = Φ̃/ψ`. Returns all time
/// levels, time-major.
pub(crate) fn solve_transformed(ctx: &Context, policy: &PolicyField) -> Result<Vec<f64>, HjbError> {
    ctx.check_policy(policy)?;
    let grid = ctx.grid;
    let nodes = grid.node_count();
    let steps = grid.time_steps();
    let dt = grid.dt();
    let w = ctx.config.time_weight;

    let mut u = vec![1.0; (steps + 1) * nodes];
    let mut rows = vec![Row::default(); nodes];
    let mut rows_next = vec![Row::default(); nodes];
    let mut rhs = vec![0.0; nodes];
    let mut scratch = Scratch::new(grid.nodes_per_axis());

    if w < 1.0 {
        assemble_rows(ctx, steps, policy, &mut rows_next)?;
    }
    for k in (0..steps).rev() {
        assemble_rows(ctx, k, policy, &mut rows)?;
        let (head, tail) = u.split_at_mut((k + 1) * nodes);
        let next = &tail[..nodes];
        let current = &mut head[k * nodes..];
        for node in 0..nodes {
            rhs[node] = if grid.is_boundary(node) {
                1.0
            } else if w < 1.0 {
                next[node] + (1.0 - w) * dt * apply_row(grid, node, &rows_next[node], next)
            } else {
                next[node]
            };
        }
        current.copy_from_slice(next);
        let t = grid.time(k);
        match grid.dim() {
            1 => thomas_step(grid, &rows, &rhs, w * dt, current, &mut scratch, t)?,
            _ => gauss_seidel_step(grid, &rows, &rhs, w * dt, current, t)?,
        }
        if let Some(node) = current.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            let mut x = vec![0.0; grid.dim()];
            grid.node_coordinates(node, &mut x);
            return Err(HjbError::NonPositiveValue {
                t,
                x,
                value: current[node] * ctx.psi(k),
            });
        }
        if w < 1.0 {
            std::mem::swap(&mut rows, &mut rows_next);
        }
    }
    Ok(u)
}

struct Scratch {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
}

impl Scratch {
    fn new(len: usize) -> Self {
        Self {
            sub: vec![0.0; len],
            diag: vec![0.0; len],
            sup: vec![0.0; len],
            rhs: vec![0.0; len],
        }
    }
}

/// `(I − τA)u = rhs` on interior nodes of a 1-D grid, `u = 1` at both ends.
fn thomas_step(
    grid: &Grid,
    rows: &[Row],
    rhs: &[f64],
    tau: f64,
    u: &mut [f64],
    s: &mut Scratch,
    t: f64,
) -> Result<(), HjbError> {
    let last = grid.nodes_per_axis() - 1;
    for i in 1..last {
        let r = &rows[i];
        s.sub[i] = -tau * r.lo[0];
        s.diag[i] = 1.0 - tau * r.diag;
        s.sup[i] = -tau * r.hi[0];
        s.rhs[i] = rhs[i];
    }
    s.rhs[1] -= s.sub[1] * u[0];
    s.rhs[last - 1] -= s.sup[last - 1] * u[last];

    for i in 2..last {
        let pivot = s.diag[i - 1];
        if pivot.abs() < f64::MIN_POSITIVE {
            return Err(HjbError::LinearSolveFailure {
                t,
                residual: f64::INFINITY,
            });
        }
        let m = s.sub[i] / pivot;
        s.diag[i] -= m * s.sup[i - 1];
        s.rhs[i] -= m * s.rhs[i - 1];
    }
    if s.diag[last - 1].abs() < f64::MIN_POSITIVE {
        return Err(HjbError::LinearSolveFailure {
            t,
            residual: f64::INFINITY,
        });
    }
    u[last - 1] = s.rhs[last - 1] / s.diag[last - 1];
    for i in (1..last - 1).rev() {
        u[i] = (s.rhs[i] - s.sup[i] * u[i + 1]) / s.diag[i];
    }
    Ok(())
}

/// `(I − τA)u = rhs` on a 2-D grid by Gauss–Seidel sweeps, warm-started from `u`.
fn gauss_seidel_step(grid: &Grid, rows: &[Row], rhs: &[f64], tau: f64, u: &mut [f64], t: f64) -> Result<(), HjbError> {
    let n = grid.nodes_per_axis();
    let mut change = f64::INFINITY;
    for _ in 0..GAUSS_SEIDEL_MAX_SWEEPS {
        change = 0.0;
        let mut scale: f64 = 0.0;
        for i1 in 1..n - 1 {
            for i0 in 1..n - 1 {
                let node = i0 + n * i1;
                let r = &rows[node];
                let diag = 1.0 - tau * r.diag;
                let off = apply_row(grid, node, r, u) - r.diag * u[node];
                let new = (rhs[node] + tau * off) / diag;
                change = change.max((new - u[node]).abs());
                scale = scale.max(new.abs());
                u[node] = new;
            }
        }
        if !change.is_finite() {
            break;
        }
        if change <= GAUSS_SEIDEL_TOL * scale.max(1.0) {
            return Ok(());
        }
    }
    Err(HjbError::LinearSolveFailure { t, residual: change })
}

/// Solves the linear parabolic equation
/// `∂Φ̃/∂t + ½tr(ΛΛᵀD²Φ̃) + f(t,x,h)ᵀDΦ̃ + θg(x,h)Φ̃ = 0`
/// for a frozen policy field, backward from `Φ̃(T) = v^{−θ}`, with the
/// lateral boundary pinned to [`boundary_value`](super::boundary_value).
pub fn solve_linear_pde(
    model: &ValidatedModel,
    criterion: &Criterion,
    policy: &PolicyField,
    config: &SolverConfig,
) -> Result<GridFunction, HjbError> {
    let grid = policy.grid.clone();
    let ctx = Context::new(model, criterion, &grid, config)?;
    let u = solve_transformed(&ctx, policy)?;
    Ok(to_phi_tilde(&ctx, u))
}

pub(crate) fn to_phi_tilde(ctx: &Context, mut u: Vec<f64>) -> GridFunction {
    let nodes = ctx.grid.node_count();
    for (k, level) in u.chunks_mut(nodes).enumerate() {
        let psi = ctx.psi(k);
        level.iter_mut().for_each(|v| *v *= psi);
    }
    GridFunction {
        grid: ctx.grid.clone(),
        values: u,
    }
}

/// Discrete residual of the HJB equation with central differences, using
/// the pointwise optimum of the inner functional, relative to `v^{−θ}`.
pub(crate) fn hamiltonian_residual(ctx: &Context, u: &[f64], objective: &[f64]) -> f64 {
    let grid = ctx.grid;
    let n = grid.dim();
    let nodes = grid.node_count();
    let dt = grid.dt();
    let raw = ctx.model.raw();
    let stride = [1, grid.nodes_per_axis()];
    let dx = [grid.spacing(0), if n > 1 { grid.spacing(1) } else { 1.0 }];
    let mut worst: f64 = 0.0;
    let mut x = [0.0; 2];
    for k in 0..grid.time_steps() {
        let cov = ctx.covariance(k);
        let psi = ctx.psi(k);
        let psi_next = ctx.psi(k + 1);
        let level = &u[k * nodes..(k + 1) * nodes];
        let next = &u[(k + 1) * nodes..(k + 2) * nodes];
        for node in 0..nodes {
            if grid.is_boundary(node) {
                continue;
            }
            let x = &mut x[..n];
            grid.node_coordinates(node, x);
            let value = psi * level[node];
            let mut r = (psi_next * next[node] - value) / dt;
            for a in 0..n {
                let up = psi * level[node + stride[a]];
                let down = psi * level[node - stride[a]];
                let mut drift = raw.factor_intercept[a];
                for (b, xb) in x.iter().enumerate() {
                    drift += raw.mean_reversion[(a, b)] * xb;
                }
                r += 0.5 * cov[a + a * n] * (up - 2.0 * value + down) / (dx[a] * dx[a]);
                r += drift * (up - down) / (2.0 * dx[a]);
            }
            if n == 2 {
                let s = stride[1];
                let mixed = level[node + 1 + s] - level[node + 1 - s] - level[node - 1 + s] + level[node - 1 - s];
                r += cov[1] * psi * mixed / (4.0 * dx[0] * dx[1]);
            }
            let rate: f64 = raw.rate_intercept + raw.rate_loading.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
            r -= ctx.theta * value * (rate + objective[k * nodes + node]);
            worst = worst.max(r.abs());
        }
    }
    worst / ctx.criterion.terminal_value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::validate_model;
    use crate::policy::FnPolicy;

    fn f1() -> ValidatedModel {
        validate_model(fixtures::f1_market()).unwrap()
    }

    #[test]
    fn zero_beta_policy_gives_the_exponential() {
        let c = fixtures::f1_criterion();
        for raw in [fixtures::f1_market(), fixtures::f1b_market()] {
            let model = validate_model(raw).unwrap();
            let zb = zero_beta(&model, &c).unwrap();
            let grid = Grid::cube(vec![0.2], 1.5, 33, 1.0, 64).unwrap();
            let policy = PolicyField::constant(&grid, zb.h_check.as_slice());
            let phi = solve_linear_pde(&model, &c, &policy, &SolverConfig::default()).unwrap();
            for k in 0..=64 {
                let exact = (zb.g_check * (1.0 - grid.time(k))).exp();
                for node in 0..33 {
                    assert!((phi.at(k, node) / exact - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_beta_policy_on_a_plane() {
        let mut raw = fixtures::f1_market();
        raw.factor_intercept = nalgebra::DVector::from_vec(vec![0.1, 0.0]);
        raw.mean_reversion = nalgebra::DMatrix::from_row_slice(2, 2, &[-0.5, 0.1, 0.0, -1.0]);
        raw.factor_loading = crate::model::FactorLoading::Constant(nalgebra::DMatrix::from_row_slice(
            2,
            3,
            &[0.2, 0.05, 0.0, 0.03, 0.0, 0.15],
        ));
        raw.rate_loading = nalgebra::DVector::zeros(2);
        raw.asset_loading = nalgebra::DMatrix::from_row_slice(1, 2, &[0.4, 0.1]);
        raw.asset_volatility = nalgebra::DMatrix::from_row_slice(1, 3, &[0.25, 0.0, 0.0]);
        let model = validate_model(raw).unwrap();
        let c = fixtures::f1_criterion();
        let grid = Grid::cube(vec![0.2, 0.0], 1.0, 17, 1.0, 16).unwrap();
        let policy = PolicyField::constant(&grid, &[0.0]);
        let phi = solve_linear_pde(&model, &c, &policy, &SolverConfig::default()).unwrap();
        let exact = (-0.02f64).exp();
        assert!(phi.slice(0).iter().all(|v| (v / exact - 1.0).abs() < 1e-12));
    }

    #[test]
    fn schemes_agree_for_a_smooth_policy() {
        let model = f1();
        let c = fixtures::f1_criterion();
        let rule = FnPolicy::new(1, |_t: f64, x: &[f64], h: &mut [f64]| h[0] = 0.3 + 0.2 * x[0].tanh());
        let grid = Grid::cube(vec![0.2], 1.5, 97, 1.0, 96).unwrap();
        let policy = PolicyField::sample(&grid, &rule);
        let mut values = Vec::new();
        for drift in [
            DriftDifferencing::Upwind,
            DriftDifferencing::Central,
            DriftDifferencing::Hybrid,
        ] {
            for time_weight in [1.0, 0.5] {
                let cfg = SolverConfig {
                    drift,
                    time_weight,
                    ..SolverConfig::default()
                };
                let phi = solve_linear_pde(&model, &c, &policy, &cfg).unwrap();
                values.push(phi.interpolate(0.0, &[0.2]));
            }
        }
        for v in &values {
            assert!((v / values[2] - 1.0).abs() < 2e-3, "{values:?}");
        }
        // central and hybrid coincide when diffusion dominates
        assert!((values[2] - values[4]).abs() < 1e-14);
    }

    #[test]
    fn infeasible_policy_is_reported() {
        let model = f1();
        let c = fixtures::f1_criterion();
        let grid = Grid::cube(vec![0.0], 1.0, 17, 1.0, 16).unwrap();
        let policy = PolicyField::constant(&grid, &[7.0]);
        assert!(matches!(
            solve_linear_pde(&model, &c, &policy, &SolverConfig::default()),
            Err(HjbError::InfeasiblePolicy { .. })
        ));
    }

    #[test]
    fn grid_and_model_dimensions_must_agree() {
        let model = f1();
        let c = fixtures::f1_criterion();
        let grid = Grid::cube(vec![0.0, 0.0], 1.0, 17, 1.0, 16).unwrap();
        let policy = PolicyField::constant(&grid, &[0.0]);
        assert!(matches!(
            solve_linear_pde(&model, &c, &policy, &SolverConfig::default()),
            Err(HjbError::DimensionMismatch(_))
        ));
    }
}
