//! Property tests: structural invariants that hold for arbitrary inputs,
//! not just the bundled systems.

use proptest::prelude::*;
use reachkit::bounds::{BoundEstimate, BoundsSet, Provenance};
use reachkit::certify::margin;
use reachkit::expr::{parse, BinaryOp, CmpOp, Expr, Guard, MinMaxOp, UnaryOp, VarSet};
use reachkit::model::{ControlSet, SystemSpec};

fn bx(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-3.0..3.0f64).prop_map(Expr::Const),
        Just(Expr::Var { name: "x".into(), index: 0 }),
        Just(Expr::Var { name: "y".into(), index: 1 }),
    ];
    leaf.prop_recursive(4, 48, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Neg, bx(e))),
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Sin, bx(e))),
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Cos, bx(e))),
            inner.clone().prop_map(|e| Expr::Unary(UnaryOp::Abs, bx(e))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Binary(BinaryOp::Add, bx(a), bx(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Binary(BinaryOp::Sub, bx(a), bx(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Binary(BinaryOp::Mul, bx(a), bx(b))),
            (inner.clone(), 2u32..4).prop_map(|(a, p)| Expr::Binary(
                BinaryOp::Pow,
                bx(a),
                bx(Expr::Const(p as f64))
            )),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::MinMax(MinMaxOp::Min, bx(a), bx(b))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::MinMax(MinMaxOp::Max, bx(a), bx(b))),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(g, t, e)| {
                Expr::Piecewise {
                    guard: Box::new(Guard {
                        op: CmpOp::Ge,
                        lhs: g,
                        rhs: Expr::Const(0.0),
                    }),
                    then_branch: bx(t),
                    else_branch: bx(e),
                }
            }),
        ]
    })
}

fn pendulum() -> SystemSpec {
    SystemSpec::from_json(include_str!("../../../configs/pendulum.json")).unwrap()
}

fn bounds_from(alpha: f64, beta: f64, gamma: f64, xi: f64) -> BoundsSet {
    let be = |v: f64| BoundEstimate {
        value: v,
        raw: v,
        provenance: Provenance::Override,
    };
    BoundsSet {
        alpha: be(alpha),
        beta: be(beta),
        gamma: be(gamma),
        xi: be(xi),
        grid: vec![],
        guard_factor: 1.0,
    }
}

proptest! {
    /// print -> parse is evaluation-equivalent to the original tree.
    #[test]
    fn print_parse_round_trip(e in arb_expr(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let vars = VarSet::new(["x", "y"]);
        let printed = e.to_string();
        let reparsed = parse(&printed, &vars).expect("printer emits parseable text");
        let point = [x, y];
        match (e.eval_values(&point), reparsed.eval_values(&point)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b, "round trip changed `{}`", printed),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "divergent results {a:?} vs {b:?} for `{printed}`"),
        }
    }

    /// A piecewise node returns exactly the value of the branch its guard
    /// selects.
    #[test]
    fn piecewise_exhaustive_and_exclusive(
        g in arb_expr(),
        t in arb_expr(),
        f in arb_expr(),
        x in -2.0..2.0f64,
        y in -2.0..2.0f64,
    ) {
        let point = [x, y];
        let pw = Expr::Piecewise {
            guard: Box::new(Guard { op: CmpOp::Ge, lhs: g.clone(), rhs: Expr::Const(0.0) }),
            then_branch: bx(t.clone()),
            else_branch: bx(f.clone()),
        };
        let gv = match g.eval_values(&point) { Ok(v) => v, Err(_) => return Ok(()) };
        let expected = if gv >= 0.0 { t.eval_values(&point) } else { f.eval_values(&point) };
        match (pw.eval_values(&point), expected) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "piecewise diverged: {a:?} vs {b:?}"),
        }
    }

    /// The margin is nondecreasing in delta, epsilon, alpha, beta and gamma
    /// separately.
    #[test]
    fn margin_monotone_in_each_parameter(
        delta in 0.0..0.5f64,
        epsilon in 0.0..0.5f64,
        alpha in 0.01..20.0f64,
        beta in 0.01..20.0f64,
        gamma in 0.01..20.0f64,
        bump in 0.001..2.0f64,
    ) {
        let spec = pendulum();
        let at = |d: f64, e: f64, a: f64, b: f64, g: f64| -> f64 {
            let varied = spec.with_parameters(Some(d), Some(e), None).unwrap();
            margin(&bounds_from(a, b, g, 1.0), &varied).1
        };
        let base = at(delta, epsilon, alpha, beta, gamma);
        prop_assert!(at(delta + bump, epsilon, alpha, beta, gamma) >= base);
        prop_assert!(at(delta, epsilon + bump, alpha, beta, gamma) >= base);
        prop_assert!(at(delta, epsilon, alpha + bump, beta, gamma) >= base);
        prop_assert!(at(delta, epsilon, alpha, beta + bump, gamma) >= base);
        prop_assert!(at(delta, epsilon, alpha, beta, gamma + bump) >= base);
    }

    /// Clamping lands inside the control set and is idempotent.
    #[test]
    fn clamp_projects_into_the_set(
        u in prop::collection::vec(-30.0..30.0f64, 1..4),
        ubar in 0.1..5.0f64,
    ) {
        let ball = ControlSet::Ball { ubar };
        let (c, _) = ball.clamp(&u);
        prop_assert!(ball.contains(&c));
        let (cc, fired_again) = ball.clamp(&c);
        prop_assert_eq!(&c, &cc);
        prop_assert!(!fired_again);

        let lower: Vec<f64> = u.iter().map(|_| -1.5).collect();
        let upper: Vec<f64> = u.iter().map(|_| 2.5).collect();
        let b = ControlSet::Box { lower, upper };
        let (c, _) = b.clamp(&u);
        prop_assert!(b.contains(&c));
    }

    /// Goal thresholds keep their ladder ordering for any nonnegative
    /// parameters.
    #[test]
    fn threshold_ladder(
        delta in 0.0..1.0f64,
        epsilon in 0.0..1.0f64,
        alpha in 0.0..30.0f64,
        xi in 0.0..30.0f64,
    ) {
        let spec = pendulum().with_parameters(Some(delta), Some(epsilon), None).unwrap();
        let alpha = alpha.max(1e-9);
        let t = reachkit::certify::goal_thresholds(&bounds_from(alpha, 1.0, 1.0, xi), &spec);
        prop_assert!(t.t1 >= 0.0 && t.t1 <= t.t2 && t.t2 <= t.t_hat);
    }
}
