//! Property tests for the structural invariants: grammar round-trips, norm
//! axioms, partition coverage, estimator adaptedness, and config
//! serialisation.

use bsvie::dsl::{parse_expr, BinOp, Expr, ExprContext, Func1, Func2, Var};
use bsvie::ensemble::PathEnsemble;
use bsvie::estimator::CondExpEstimator;
use bsvie::grid::{PartitionPlan, TimeGrid};
use bsvie::norms::mp_norm_distance;
use bsvie::problem::{LipschitzBound, ProblemSpec, SolveMode};
use bsvie::surface::{AdaptedProcess, TwoParamField};
use proptest::prelude::*;

fn arb_var() -> impl Strategy<Value = Var> {
    prop_oneof![
        Just(Var::T),
        Just(Var::S),
        Just(Var::Y(0)),
        Just(Var::Z(0, 0)),
        Just(Var::Zeta(0, 0)),
        Just(Var::W(0)),
    ]
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.001f64..1e6).prop_map(Expr::Lit),
        arb_var().prop_map(Expr::Var),
    ];
    leaf.prop_recursive(5, 48, 3, |inner| {
        prop_oneof![
            (
                prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div)
                ],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (inner.clone(), 0u32..5).prop_map(|(e, n)| Expr::Pow(Box::new(e), n)),
            (
                prop_oneof![
                    Just(Func1::Exp),
                    Just(Func1::Sin),
                    Just(Func1::Cos),
                    Just(Func1::Abs),
                    Just(Func1::SqrtAbs)
                ],
                inner.clone()
            )
                .prop_map(|(f, e)| Expr::Call1(f, Box::new(e))),
            (
                prop_oneof![Just(Func2::Max), Just(Func2::Min)],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(f, a, b)| Expr::Call2(f, Box::new(a), Box::new(b))),
        ]
    })
}

proptest! {
    #[test]
    fn print_parse_round_trip(e in arb_expr()) {
        let printed = e.to_string();
        let reparsed = parse_expr(&printed, ExprContext::Generator, (1, 1))
            .unwrap_or_else(|err| panic!("printed form failed to parse: '{printed}' ({err})"));
        prop_assert_eq!(&e, &reparsed);
        // And printing is a fixed point after one round.
        prop_assert_eq!(printed, reparsed.to_string());
    }

    #[test]
    fn partition_covers_without_gaps(steps in 1usize..64, frac in 0.0f64..1.0) {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let eta = grid.step() + frac * (1.0 - grid.step());
        let plan = PartitionPlan::from_eta(&grid, eta, 0.5).unwrap();
        let b = plan.boundaries();
        prop_assert_eq!(b[0], steps);
        prop_assert_eq!(*b.last().unwrap(), 0);
        for w in b.windows(2) {
            prop_assert!(w[0] > w[1]);
            prop_assert!((w[0] - w[1]) as f64 * grid.step() <= eta + 1e-15);
        }
    }

    #[test]
    fn spec_config_round_trip(
        horizon in 0.1f64..10.0,
        p in 1.0001f64..4.0,
        l1 in proptest::option::of(0.0f64..10.0),
        l3 in proptest::option::of(0.0f64..10.0),
        adapted in proptest::bool::ANY,
    ) {
        let mode = if adapted { SolveMode::Adapted } else { SolveMode::MSolution };
        let generator = if adapted || l3.is_none() { "0.5 * y_0" } else { "0.5 * y_0 + 0.1 * zeta_0_0" };
        let spec = ProblemSpec {
            horizon,
            dim_y: 1,
            dim_w: 1,
            p,
            mode,
            terminal: vec![parse_expr("t * x_0", ExprContext::Terminal, (1, 1)).unwrap()],
            generator: vec![parse_expr(generator, ExprContext::Generator, (1, 1)).unwrap()],
            lipschitz: [
                l1.map(LipschitzBound::Constant),
                None,
                if adapted { None } else { l3.map(LipschitzBound::Constant) },
            ],
            lipschitz_eps: None,
        };
        let back = ProblemSpec::from_kv_text(&spec.to_kv_text()).unwrap();
        prop_assert_eq!(spec, back);
    }

    #[test]
    fn conditional_expectations_are_adapted(seed in 0u64..1000, j in 0usize..4) {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let ens = PathEnsemble::bernoulli(&grid, 1).unwrap();
        // An arbitrary terminal-measurable variable, seeded deterministically.
        let v: Vec<f64> = (0..ens.paths())
            .map(|p| ((p as f64 + 1.3) * (seed as f64 + 0.7)).sin() + ens.value(4, p, 0))
            .collect();
        let est = CondExpEstimator::exact_prefix();
        let ce = est.cond_exp(&v, &ens, j).unwrap();
        prop_assert!(ens.is_adapted_at(&ce.values, 1, j));
        let coeffs = est.martingale_coeffs(&v, &ens, j).unwrap();
        prop_assert!(ens.is_adapted_at(&coeffs, 1, j));
    }
}

fn random_surface(
    paths: usize,
    steps: usize,
    seed: u64,
) -> (AdaptedProcess, TwoParamField) {
    // Small deterministic LCG so surfaces vary but stay reproducible.
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut y = AdaptedProcess::zeros(paths, steps + 1, 1);
    for i in 0..=steps {
        for v in y.at_mut(i) {
            *v = next();
        }
    }
    let mut z = TwoParamField::new(paths, steps, 1, 1, true);
    for i in 0..=steps {
        for j in 0..steps {
            let cell: Vec<f64> = (0..paths).map(|_| next()).collect();
            z.set_block(i, j, &cell);
        }
    }
    (y, z)
}

proptest! {
    #[test]
    fn fixed_point_distance_satisfies_the_triangle_inequality(seed in 0u64..500) {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let ens = PathEnsemble::gaussian(1, 8, &grid, 1).unwrap();
        let (ya, za) = random_surface(8, 3, seed);
        let (yb, zb) = random_surface(8, 3, seed.wrapping_add(101));
        let (yc, zc) = random_surface(8, 3, seed.wrapping_add(977));
        for p in [1.25f64, 1.5, 2.0] {
            let ab = mp_norm_distance((&ya, &za), (&yb, &zb), p, &ens).unwrap();
            let bc = mp_norm_distance((&yb, &zb), (&yc, &zc), p, &ens).unwrap();
            let ac = mp_norm_distance((&ya, &za), (&yc, &zc), p, &ens).unwrap();
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-12), "p={p}: {ac} > {ab} + {bc}");
        }
    }
}
