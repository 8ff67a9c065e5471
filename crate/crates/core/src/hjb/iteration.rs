use rayon::prelude::*;

use crate::criterion::Criterion;
use crate::model::ValidatedModel;
use crate::optimizer::InnerProblem;

use super::scheme::{apply_row, hamiltonian_residual, row_at, solve_transformed, to_phi_tilde, Context};
use super::{GridFunction, HjbError, IterationDiagnostics, PolicyField, SolverConfig, ValueField};

/// Pointwise improvement of the policy for `u`, which may be `Φ̃` or any
/// positive multiple of it per time level. Also returns the value of the
/// inner functional at the chosen control, with `p` from central
/// differences.
///
/// With central drift differences the maximizer of `L(x, p, ·)` for
/// `p = −D_cu/(θu)` minimizes the discrete operator row exactly. Where the
/// row is one-sided, the maximizers for forward and backward difference
/// quotients and the previous control are compared on the actual row, so
/// the row never increases.
fn improve(ctx: &Context, u: &[f64], previous: Option<&PolicyField>) -> Result<(PolicyField, Vec<f64>), HjbError> {
    let grid = ctx.grid;
    let n = grid.dim();
    let m = ctx.model.m();
    let nodes = grid.node_count();
    let steps = grid.time_steps();
    let stride = [1, grid.nodes_per_axis()];
    let dx = [grid.spacing(0), if n > 1 { grid.spacing(1) } else { 1.0 }];
    let h_check = ctx.zero_beta.h_check.as_slice();

    let mut values = vec![0.0; (steps + 1) * nodes * m];
    let mut objective = vec![0.0; (steps + 1) * nodes];
    values
        .par_chunks_mut(m)
        .zip(objective.par_iter_mut())
        .enumerate()
        .try_for_each(|(index, (h, obj))| {
            let (k, node) = (index / nodes, index % nodes);
            if grid.is_boundary(node) {
                h.copy_from_slice(h_check);
                return Ok(());
            }
            let t = grid.time(k);
            let mut x = [0.0; 2];
            grid.node_coordinates(node, &mut x[..n]);
            let x = &x[..n];
            let level = &u[k * nodes..(k + 1) * nodes];
            let scale = -1.0 / (ctx.theta * level[node]);
            let quotient = |a: usize, side: i8| -> f64 {
                let (up, mid, down) = (level[node + stride[a]], level[node], level[node - stride[a]]);
                match side {
                    1 => (up - mid) / dx[a],
                    -1 => (mid - down) / dx[a],
                    _ => (up - down) / (2.0 * dx[a]),
                }
            };
            let fail = |source| HjbError::Optimizer {
                t,
                x: x.to_vec(),
                source,
            };
            let solve = |sides: [i8; 2]| {
                let mut p = [0.0; 2];
                for a in 0..n {
                    p[a] = scale * quotient(a, sides[a]);
                }
                let problem =
                    InnerProblem::new(ctx.model, &ctx.criterion, t, x, &p[..n]).map_err(|e| fail(e.into()))?;
                let sol = problem.maximize(&ctx.config.newton).map_err(fail)?;
                Ok::<_, HjbError>((problem, sol))
            };

            let (central, sol) = solve([0, 0])?;
            let row_value = |h: &[f64]| apply_row(grid, node, &row_at(ctx, k, x, h), level);
            let mut best = sol.h_star.as_slice().to_vec();
            let old = previous.map(|p| p.at(k, node)).filter(|h| ctx.model.margin(h) > 0.0);
            if row_at(ctx, k, x, &best).upwinded || old.is_some_and(|h| row_at(ctx, k, x, h).upwinded) {
                let mut best_value = row_value(&best);
                let mut consider = |h: &[f64]| {
                    let v = row_value(h);
                    if v < best_value {
                        best_value = v;
                        best.copy_from_slice(h);
                    }
                };
                for combo in 0..(1usize << n) {
                    let mut sides = [0i8; 2];
                    for (a, side) in sides.iter_mut().enumerate().take(n) {
                        *side = if combo >> a & 1 == 1 { 1 } else { -1 };
                    }
                    if let Ok((_, s)) = solve(sides) {
                        consider(s.h_star.as_slice());
                    }
                }
                if let Some(h) = old {
                    consider(h);
                }
            }
            *obj = central
                .objective(&nalgebra::DVector::from_column_slice(&best))
                .map_err(|e| fail(e.into()))?;
            h.copy_from_slice(&best);
            Ok(())
        })?;
    Ok((PolicyField::from_values(grid, m, values), objective))
}

/// Computes the improved policy for a given `Φ̃`: at interior nodes the
/// maximizer of `L(x, DΦ, ·)` with `DΦ` from central differences of
/// `Φ = −(1/θ)ln Φ̃`; the zero-beta policy on lateral nodes.
pub fn improve_policy(
    model: &ValidatedModel,
    criterion: &Criterion,
    phi_tilde: &GridFunction,
    config: &SolverConfig,
) -> Result<PolicyField, HjbError> {
    let grid = &phi_tilde.grid;
    let ctx = Context::new(model, criterion, grid, config)?;
    if let Some(pos) = phi_tilde.values.iter().position(|v| !(*v > 0.0)) {
        let nodes = grid.node_count();
        let mut x = vec![0.0; grid.dim()];
        grid.node_coordinates(pos % nodes, &mut x);
        return Err(HjbError::NonPositiveValue {
            t: grid.time(pos / nodes),
            x,
            value: phi_tilde.values[pos],
        });
    }
    Ok(improve(&ctx, &phi_tilde.values, None)?.0)
}

/// Policy improvement from the zero-beta policy until
/// `sup|Φ̃^{k+1} − Φ̃^k| ≤ policy_tol·v^{−θ}`.
pub fn policy_iteration(
    model: &ValidatedModel,
    criterion: &Criterion,
    grid: &super::Grid,
    config: &SolverConfig,
) -> Result<ValueField, HjbError> {
    let ctx = Context::new(model, criterion, grid, config)?;
    let nodes = grid.node_count();
    let tol = config.policy_tol * criterion.terminal_value();
    let psi: Vec<f64> = (0..=grid.time_steps()).map(|k| ctx.psi(k)).collect();

    let mut diag = IterationDiagnostics {
        min_phi_tilde: f64::INFINITY,
        max_bound_excess: f64::NEG_INFINITY,
        ..IterationDiagnostics::default()
    };
    let record_bounds = |diag: &mut IterationDiagnostics, u: &[f64]| {
        for (k, level) in u.chunks(nodes).enumerate() {
            for v in level {
                diag.min_phi_tilde = diag.min_phi_tilde.min(psi[k] * v);
                diag.max_bound_excess = diag.max_bound_excess.max(psi[k] * (v - 1.0));
            }
        }
    };

    let mut current = PolicyField::constant(grid, ctx.zero_beta.h_check.as_slice());
    let mut u = solve_transformed(&ctx, &current)?;
    diag.iterations = 1;
    record_bounds(&mut diag, &u);
    loop {
        let (policy, objective) = improve(&ctx, &u, Some(&current))?;
        if diag.deltas.last().is_some_and(|d| *d <= tol) {
            diag.hamiltonian_residual = hamiltonian_residual(&ctx, &u, &objective);
            let phi_tilde = to_phi_tilde(&ctx, u);
            return Ok(ValueField::assemble(
                criterion,
                ctx.zero_beta.clone(),
                phi_tilde,
                policy,
                diag,
            ));
        }
        if diag.iterations >= config.max_policy_iters {
            diag.hamiltonian_residual = hamiltonian_residual(&ctx, &u, &objective);
            return Err(HjbError::NoPolicyConvergence {
                diagnostics: Box::new(diag),
            });
        }
        let next = solve_transformed(&ctx, &policy)?;
        let mut delta: f64 = 0.0;
        let mut increase: f64 = 0.0;
        for (k, (a, b)) in next.chunks(nodes).zip(u.chunks(nodes)).enumerate() {
            for (new, old) in a.iter().zip(b) {
                let d = psi[k] * (new - old);
                delta = delta.max(d.abs());
                increase = increase.max(d);
            }
        }
        diag.iterations += 1;
        diag.deltas.push(delta);
        diag.monotonicity_violations.push(increase);
        record_bounds(&mut diag, &next);
        u = next;
        current = policy;
    }
}
