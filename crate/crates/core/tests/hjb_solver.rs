mod common;

use riskjump::hjb::{
    convexity_report, improve_policy, policy_iteration, solve_linear_pde, ConvexityConfig, Grid, GridFunction,
    PolicyField, SolverConfig,
};
use riskjump::{fixtures, validate_model, zero_beta, Criterion, FnPolicy};

use common::f1_inner_argmax;

fn flat(grid: &Grid, value: f64) -> GridFunction {
    GridFunction {
        grid: grid.clone(),
        values: vec![value; (grid.time_steps() + 1) * grid.node_count()],
    }
}

fn smooth_policy() -> FnPolicy<impl Fn(f64, &[f64], &mut [f64]) + Sync> {
    FnPolicy::new(1, |t: f64, x: &[f64], h: &mut [f64]| {
        h[0] = 0.3 + 0.4 * x[0].tanh() - 0.1 * t
    })
}

#[test]
fn linear_solve_converges_under_refinement() {
    let model = validate_model(fixtures::f1_market()).unwrap();
    let c = fixtures::f1_criterion();
    let cfg = SolverConfig::default();
    let probes = [-0.3, 0.0, 0.25, 0.5];
    // coarser grids do not resolve the layer next to the pinned boundary
    let mut grid = Grid::cube(vec![0.2], 1.5, 65, 1.0, 64).unwrap();
    let mut values = Vec::new();
    for _ in 0..4 {
        let field = solve_linear_pde(&model, &c, &PolicyField::sample(&grid, &smooth_policy()), &cfg).unwrap();
        values.push(probes.map(|x| field.interpolate(0.0, &[x])));
        grid = grid.refine();
    }
    let change = |a: &[f64; 4], b: &[f64; 4]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d: Vec<f64> = values.windows(2).map(|w| change(&w[0], &w[1])).collect();
    for w in d.windows(2) {
        assert!(w[1] < w[0], "{d:?}");
        assert!(w[0] < 4.0 * w[1], "{d:?}");
    }
}

#[test]
fn improvement_on_a_flat_value_uses_the_zero_costate() {
    let c = fixtures::f1_criterion();
    let grid = Grid::cube(vec![0.0], 1.0, 21, 1.0, 16).unwrap();
    let cfg = SolverConfig::default();

    let model = validate_model(fixtures::f1_jump_free()).unwrap();
    let policy = improve_policy(&model, &c, &flat(&grid, 0.7), &cfg).unwrap();
    let mut x = [0.0];
    for k in 0..grid.time_steps() {
        for node in 1..grid.node_count() - 1 {
            grid.node_coordinates(node, &mut x);
            // (â + Âx)/((θ+1)ΣΣᵀ)
            let expect = (0.03 + 0.4 * x[0]) / 0.125;
            assert!((policy.at(k, node)[0] - expect).abs() < 1e-12);
        }
    }

    let model = validate_model(fixtures::f1_market()).unwrap();
    let policy = improve_policy(&model, &c, &flat(&grid, 0.7), &cfg).unwrap();
    for node in [1, 5, 10, 15, 19] {
        grid.node_coordinates(node, &mut x);
        let h = policy.at(0, node)[0];
        assert!((h - f1_inner_argmax(x[0], 0.0)).abs() < 1e-8);
    }
    for k in 0..=grid.time_steps() {
        for node in 0..grid.node_count() {
            assert!(model.feasible_margin(policy.at(k, node)).unwrap() > 0.0);
        }
    }
}

#[test]
fn improvement_rejects_a_non_positive_value() {
    let model = validate_model(fixtures::f1_market()).unwrap();
    let grid = Grid::cube(vec![0.0], 1.0, 17, 1.0, 16).unwrap();
    let mut phi = flat(&grid, 1.0);
    phi.values[3 * grid.node_count() + 4] = 0.0;
    let err = improve_policy(&model, &fixtures::f1_criterion(), &phi, &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, riskjump::hjb::HjbError::NonPositiveValue { .. }), "{err}");
}

#[test]
fn solved_field_respects_its_invariants() {
    for raw in [fixtures::f1_market(), fixtures::f1b_market()] {
        let model = validate_model(raw).unwrap();
        for c in [fixtures::f1_criterion(), Criterion::new(2.5, 1.7).unwrap()] {
            let grid = Grid::cube(vec![0.2], 1.5, 33, 1.0, 32).unwrap();
            let field = policy_iteration(&model, &c, &grid, &SolverConfig::default()).unwrap();
            let scale = c.terminal_value();
            for k in 0..=grid.time_steps() {
                let bound = field.upper_bound(grid.time(k));
                for node in 0..grid.node_count() {
                    let v = field.phi_tilde.at(k, node);
                    assert!(v > 0.0);
                    assert!(v <= bound + 1e-9 * scale);
                    assert_eq!(field.phi.at(k, node), -v.ln() / c.theta());
                }
            }
            let d = &field.diagnostics;
            assert!(d.monotonicity_violations.iter().all(|v| *v <= 1e-9 * scale), "{d:?}");
            assert!(d.deltas.last().unwrap() <= &(1e-8 * scale));
            assert!(d.min_phi_tilde > 0.0);
            assert!(d.max_bound_excess <= 1e-9 * scale);
            let terminal = grid.time_steps();
            for node in 0..grid.node_count() {
                assert!((field.phi_tilde.at(terminal, node) - scale).abs() <= 1e-15 * scale);
            }
            assert!(convexity_report(&field, &ConvexityConfig::default()).passed);
        }
    }
}

#[test]
fn first_iterate_is_dominated_by_the_zero_policy_solve() {
    let model = validate_model(fixtures::f1_market()).unwrap();
    let c = fixtures::f1_criterion();
    let cfg = SolverConfig::default();
    let grid = Grid::cube(vec![0.2], 1.5, 33, 1.0, 32).unwrap();
    let first = solve_linear_pde(&model, &c, &PolicyField::constant(&grid, &[0.0]), &cfg).unwrap();
    let policy = improve_policy(&model, &c, &first, &cfg).unwrap();
    let second = solve_linear_pde(&model, &c, &policy, &cfg).unwrap();
    for (a, b) in first.values.iter().zip(&second.values) {
        assert!(b <= &(a + 1e-12));
    }
}

#[test]
fn hamiltonian_residual_shrinks_under_refinement() {
    let model = validate_model(fixtures::f1_market()).unwrap();
    let c = fixtures::f1_criterion();
    let mut grid = Grid::cube(vec![0.2], 1.5, 65, 1.0, 64).unwrap();
    let mut residuals = Vec::new();
    for _ in 0..3 {
        let field = policy_iteration(&model, &c, &grid, &SolverConfig::default()).unwrap();
        residuals.push(field.diagnostics.hamiltonian_residual);
        grid = grid.refine();
    }
    // first order in the mesh width
    assert!(
        residuals.windows(2).all(|w| (1.6..2.5).contains(&(w[0] / w[1]))),
        "{residuals:?}"
    );
}

#[test]
fn two_factor_solve_is_monotone_and_bounded() {
    let model = validate_model(fixtures::two_factor_market()).unwrap();
    let c = fixtures::f1_criterion();
    let grid = Grid::cube(vec![0.2, 0.0], 1.0, 17, 1.0, 16).unwrap();
    let field = policy_iteration(&model, &c, &grid, &SolverConfig::default()).unwrap();
    let zb = zero_beta(&model, &c).unwrap();
    assert_eq!(field.zero_beta, zb);
    let d = &field.diagnostics;
    assert!(d.monotonicity_violations.iter().all(|v| *v <= 1e-9), "{d:?}");
    assert!(d.max_bound_excess <= 1e-9);
    assert!(d.min_phi_tilde > 0.0);
    for k in 0..=grid.time_steps() {
        for node in 0..grid.node_count() {
            assert!(model.feasible_margin(field.policy.at(k, node)).unwrap() > 0.0);
        }
    }
}

#[test]
fn grids_above_two_dimensions_are_refused() {
    assert!(matches!(
        Grid::cube(vec![0.0; 3], 1.0, 17, 1.0, 16),
        Err(riskjump::hjb::HjbError::UnsupportedDimension(3))
    ));
}

#[test]
fn solution_files_round_trip() {
    let model = validate_model(fixtures::f1_market()).unwrap();
    let c = fixtures::f1_criterion();
    let grid = Grid::cube(vec![0.2], 1.5, 17, 1.0, 16).unwrap();
    let field = policy_iteration(&model, &c, &grid, &SolverConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    riskjump::hjb::write_solution(
        &field,
        &SolverConfig::default(),
        serde_json::json!({"fixture": "f1"}),
        dir.path(),
    )
    .unwrap();
    let (loaded, summary) = riskjump::hjb::load_solution(dir.path()).unwrap();
    assert_eq!(summary.diagnostics, field.diagnostics);
    for (a, b) in loaded.phi_tilde.values.iter().zip(&field.phi_tilde.values) {
        assert!((a - b).abs() <= 1e-15 * b.abs());
    }
}
