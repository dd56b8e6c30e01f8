//! The central equivalence property: the production solver (partitioned
//! Picard + representation extension + Fredholm induction) and the global
//! tree solver approximate the same discrete fixed point, so under exact
//! prefix estimation they must agree to a small multiple of the stopping
//! tolerance on every catalog case.

use bsvie::ensemble::PathEnsemble;
use bsvie::estimator::CondExpEstimator;
use bsvie::grid::TimeGrid;
use bsvie::oracles::{exact_tree_solve, oracle_catalog, surface_discrepancy};
use bsvie::problem::SolveMode;
use bsvie::solver::{solve_adapted, solve_msolution, SolveOutcome, SolverOptions};

const TOL: f64 = 1e-10;

fn desk_options() -> SolverOptions {
    // c_cal = 0.5 keeps the planner's subintervals feasible at N = 8 while
    // still splitting the Lipschitz cases into several pieces, which is the
    // point of the exercise.
    SolverOptions { tol: TOL, max_iter: 60, c_cal: 0.5, ..SolverOptions::default() }
}

fn solve_case(case: &bsvie::oracles::OracleCase, ens: &PathEnsemble) -> SolveOutcome {
    let est = CondExpEstimator::exact_prefix();
    let opts = desk_options();
    let run = match case.spec.mode {
        SolveMode::MSolution => solve_msolution(&case.spec, ens, &est, &opts),
        SolveMode::Adapted => solve_adapted(&case.spec, ens, &est, &opts),
    };
    run.unwrap_or_else(|e| panic!("case {}: {e}", case.name))
}

#[test]
fn every_catalog_case_matches_the_tree_solver() {
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    for case in oracle_catalog() {
        let solved = solve_case(&case, &ens);
        assert!(solved.converged, "case {} did not converge", case.name);
        let reference = exact_tree_solve(&case.spec, &ens, TOL, 200)
            .unwrap_or_else(|e| panic!("tree solve {}: {e}", case.name));
        let report = surface_discrepancy(&solved.surface, &reference).unwrap();
        let bound = case.tolerance.tree_max_abs;
        assert!(
            report.y.max_abs <= bound,
            "case {}: Y discrepancy {} > {bound}",
            case.name,
            report.y.max_abs
        );
        assert!(
            report.z_upper.max_abs <= bound,
            "case {}: upper Z discrepancy {} > {bound}",
            case.name,
            report.z_upper.max_abs
        );
        if let Some(lower) = report.z_lower {
            assert!(
                lower.max_abs <= bound,
                "case {}: lower Z discrepancy {} > {bound}",
                case.name,
                lower.max_abs
            );
        }
    }
}

#[test]
fn multi_subinterval_plans_are_exercised() {
    // The planner must split the Lipschitz cases at these settings;
    // otherwise the equivalence test above would not cover the Fredholm
    // induction at all.
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    for name in ["linear-bsde", "zeta-coupled", "adapted-only"] {
        let case = bsvie::oracles::find_case(name).unwrap();
        let solved = solve_case(&case, &ens);
        let plan = solved.surface.diagnostics.partition.unwrap();
        assert!(
            plan.boundaries().len() > 2,
            "{name}: expected several subintervals, got {:?}",
            plan.boundaries()
        );
    }
}

#[test]
fn converged_subintervals_contract_monotonically() {
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    for case in oracle_catalog() {
        let solved = solve_case(&case, &ens);
        for rec in &solved.surface.diagnostics.subintervals {
            assert!(rec.converged);
            for rho in &rec.contraction_factors {
                assert!(*rho < 1.0, "case {}: rho {rho} >= 1", case.name);
            }
            for w in rec.distances.windows(2) {
                assert!(w[1] <= w[0], "case {}: distances not monotone {:?}", case.name, rec.distances);
            }
        }
    }
}

#[test]
fn modes_agree_on_zeta_free_generators() {
    // For a generator without the below-diagonal argument the M-solution and
    // the adapted solution share Y and the above-diagonal Z block.
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    let est = CondExpEstimator::exact_prefix();
    let opts = desk_options();
    let m_case = bsvie::oracles::find_case("linear-bsde").unwrap();
    let mut a_spec = m_case.spec.clone();
    a_spec.mode = SolveMode::Adapted;
    let m_run = solve_msolution(&m_case.spec, &ens, &est, &opts).unwrap();
    let a_run = solve_adapted(&a_spec, &ens, &est, &opts).unwrap();
    let report = surface_discrepancy(&m_run.surface, &a_run.surface).unwrap();
    assert!(report.y.max_abs <= 10.0 * TOL, "Y differs: {}", report.y.max_abs);
    assert!(report.z_upper.max_abs <= 10.0 * TOL);
    assert!(report.z_lower.is_none());
}

#[test]
fn uniqueness_proxy_initial_iterate_does_not_matter() {
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    let est = CondExpEstimator::exact_prefix();
    let case = bsvie::oracles::find_case("zeta-coupled").unwrap();
    let zero = desk_options();
    let mut propagated = desk_options();
    propagated.init = bsvie::solver::PicardInit::TerminalPropagated;
    let a = solve_msolution(&case.spec, &ens, &est, &zero).unwrap();
    let b = solve_msolution(&case.spec, &ens, &est, &propagated).unwrap();
    let report = surface_discrepancy(&a.surface, &b.surface).unwrap();
    assert!(report.y.max_abs <= 10.0 * TOL);
    assert!(report.z_upper.max_abs <= 10.0 * TOL);
    assert!(report.z_lower.unwrap().max_abs <= 10.0 * TOL);
}

#[test]
fn residual_invariants_hold_on_exact_runs() {
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    for case in oracle_catalog() {
        let solved = solve_case(&case, &ens);
        let eq = solved.surface.diagnostics.equation_residual.unwrap();
        assert!(eq.max_abs <= 10.0 * TOL, "case {}: equation residual {}", case.name, eq.max_abs);
        if case.spec.mode == SolveMode::MSolution {
            let mid = solved.surface.diagnostics.m_identity_residual.unwrap();
            assert!(
                mid.max_abs <= 1e-10,
                "case {}: representation residual {}",
                case.name,
                mid.max_abs
            );
        }
    }
}

#[test]
fn forced_two_piece_solve_matches_single_piece() {
    // Same fixed point whether the interval is split or not.
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    let est = CondExpEstimator::exact_prefix();
    let case = bsvie::oracles::find_case("linear-bsde").unwrap();
    let mut single = desk_options();
    single.partition_override = Some(vec![8, 0]);
    let mut split = desk_options();
    split.partition_override = Some(vec![8, 4, 0]);
    let a = solve_msolution(&case.spec, &ens, &est, &single).unwrap();
    let b = solve_msolution(&case.spec, &ens, &est, &split).unwrap();
    let report = surface_discrepancy(&a.surface, &b.surface).unwrap();
    assert!(report.y.max_abs <= 10.0 * TOL, "{}", report.y.max_abs);
    assert!(report.z_upper.max_abs <= 10.0 * TOL);
    assert!(report.z_lower.unwrap().max_abs <= 10.0 * TOL);
}

#[test]
fn hand_checked_surface_at_two_steps() {
    // g = 0, psi = W(T), N = 2: Y(t_1) per path is +-sqrt(h), Z = 1
    // everywhere, and Y(t_0) = 0.
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    let est = CondExpEstimator::exact_prefix();
    let case = bsvie::oracles::find_case("mart").unwrap();
    let run = solve_msolution(&case.spec, &ens, &est, &desk_options()).unwrap();
    let s = 0.5f64.sqrt();
    for p in 0..4 {
        assert!(run.surface.y.value(0, p, 0).abs() < 1e-12);
        let y1 = run.surface.y.value(1, p, 0);
        assert!((y1.abs() - s).abs() < 1e-12, "Y(t_1) = {y1}");
        assert!((run.surface.y.value(2, p, 0) - ens.value(2, p, 0)).abs() < 1e-12);
    }
    for i in 0..=2 {
        for j in 0..2 {
            for v in run.surface.z.block(i, j).unwrap() {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn adapted_time_scaled_terminal_is_exact() {
    // g = 0, psi = t W(T), adapted mode: Y(t_i) = t_i W(t_i) and
    // Z(t_i, t_j) = t_i for j >= i, exactly on the tree.
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    let est = CondExpEstimator::exact_prefix();
    let mut spec = bsvie::oracles::find_case("adapted-only").unwrap().spec;
    spec.generator = vec![bsvie::dsl::parse_expr("0", bsvie::dsl::ExprContext::Generator, (1, 1)).unwrap()];
    spec.lipschitz = [
        Some(bsvie::problem::LipschitzBound::Constant(0.0)),
        Some(bsvie::problem::LipschitzBound::Constant(0.0)),
        Some(bsvie::problem::LipschitzBound::Constant(0.0)),
    ];
    let run = solve_adapted(&spec, &ens, &est, &desk_options()).unwrap();
    for i in 0..=8 {
        let t = grid.node(i);
        for p in 0..ens.paths() {
            let expect = t * ens.value(i, p, 0);
            assert!((run.surface.y.value(i, p, 0) - expect).abs() < 1e-12);
        }
        for j in i..8 {
            for v in run.surface.z.block(i, j).unwrap() {
                assert!((v - t).abs() < 1e-12);
            }
        }
        // The below-diagonal block must not exist in adapted mode.
        if i > 0 {
            assert!(run.surface.z.block(i, 0).is_err() || i == 0);
        }
    }
}

#[test]
fn deliberately_overlong_subinterval_halves_and_recovers() {
    // A stiff linear generator with an oversized contraction budget: the
    // planner hands the Picard loop the whole interval, the measured ratios
    // exceed one, the driver halves until the pieces contract, and the
    // final surface still satisfies the discrete equation.
    let grid = TimeGrid::new(1.0, 8).unwrap();
    let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
    let est = CondExpEstimator::exact_prefix();
    let spec = bsvie::problem::ProblemSpec {
        horizon: 1.0,
        dim_y: 1,
        dim_w: 1,
        p: 1.5,
        mode: SolveMode::MSolution,
        terminal: vec![bsvie::dsl::parse_expr("x_0", bsvie::dsl::ExprContext::Terminal, (1, 1)).unwrap()],
        generator: vec![bsvie::dsl::parse_expr("4 * y_0", bsvie::dsl::ExprContext::Generator, (1, 1)).unwrap()],
        lipschitz: [
            Some(bsvie::problem::LipschitzBound::Constant(4.0)),
            Some(bsvie::problem::LipschitzBound::Constant(0.0)),
            Some(bsvie::problem::LipschitzBound::Constant(0.0)),
        ],
        lipschitz_eps: None,
    };
    let opts = SolverOptions {
        tol: TOL,
        max_iter: 80,
        kappa_target: 4.0,
        c_cal: 0.25,
        ..SolverOptions::default()
    };
    let run = solve_msolution(&spec, &ens, &est, &opts).unwrap();
    assert!(run.converged, "halving did not recover");
    let diag = &run.surface.diagnostics;
    assert_eq!(diag.partition.as_ref().unwrap().boundaries(), &[8, 0]);
    assert!(
        diag.subintervals.iter().any(|r| r.halved),
        "no halving was triggered: {:?}",
        diag.subintervals.iter().map(|r| (r.lo, r.hi, r.converged)).collect::<Vec<_>>()
    );
    assert!(diag.subintervals.iter().any(|r| r.from_halving && r.converged));
    let eq = diag.equation_residual.unwrap();
    assert!(eq.max_abs <= 10.0 * TOL, "equation residual {}", eq.max_abs);
    let mid = diag.m_identity_residual.unwrap();
    assert!(mid.max_abs <= 1e-10);
}
