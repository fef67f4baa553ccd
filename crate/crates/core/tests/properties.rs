use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use lpvjump::cli::Description;
use lpvjump::expr::{BinOp, Env, Expr, Func, Symbol};
use lpvjump::model::InitialHistory;
use lpvjump::polymat::{Monomial, ParamBox, Point, PolyMatrix};
use lpvjump::sim::{fmt_num, HistoryBuffer};

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0f64..1e3).prop_map(Expr::Num),
        (1e-9f64..1e-5).prop_map(Expr::Num),
        Just(Expr::Sym(Symbol::Rho)),
        Just(Expr::Sym(Symbol::Time)),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        let bin = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)];
        let unary = prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Heaviside)];
        let binary = prop_oneof![Just(Func::Min), Just(Func::Max)];
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (bin, inner.clone(), inner.clone()).prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
            (unary, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
            (binary, inner.clone(), inner).prop_map(|(f, a, b)| Expr::Call(f, vec![a, b])),
        ]
    })
}

/// Renders with minimal parentheses, exercising precedence and associativity in the parser.
fn render_terse(e: &Expr) -> String {
    fn prec(e: &Expr) -> u8 {
        match e {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(..) => 2,
            Expr::Neg(_) => 3,
            _ => 4,
        }
    }
    fn wrap(e: &Expr, min: u8) -> String {
        let s = render_terse(e);
        if prec(e) < min {
            format!("({s})")
        } else {
            s
        }
    }
    match e {
        Expr::Num(v) => format!("{v:?}"),
        Expr::Sym(Symbol::Rho) => "r".into(),
        Expr::Sym(Symbol::Time) => "t".into(),
        Expr::Neg(a) => format!("-{}", wrap(a, 3)),
        Expr::Bin(op, a, b) => {
            let (c, p) = match op {
                BinOp::Add => ("+", 1),
                BinOp::Sub => ("-", 1),
                BinOp::Mul => ("*", 2),
                BinOp::Div => ("/", 2),
            };
            // Left associative: the right operand needs strictly higher precedence.
            format!("{}{c}{}", wrap(a, p), wrap(b, p + 1))
        }
        Expr::Call(f, args) => {
            let name = match f {
                Func::Sin => "sin",
                Func::Cos => "cos",
                Func::Heaviside => "H",
                Func::Min => "min",
                Func::Max => "max",
            };
            let args: Vec<String> = args.iter().map(render_terse).collect();
            format!("{name}({})", args.join(","))
        }
    }
}

fn same_value(a: Result<f64, lpvjump::Error>, b: Result<f64, lpvjump::Error>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x == y || (x.is_nan() && y.is_nan()),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn expression_print_parse_round_trip(e in arb_expr()) {
        let source = render_terse(&e);
        let parsed: Expr = source.parse().unwrap();
        let reparsed: Expr = parsed.to_string().parse().unwrap();
        prop_assert_eq!(&reparsed, &parsed);
        let env = Env { rho: Some(0.37), time: Some(1.3) };
        prop_assert!(same_value(parsed.eval(&env), e.eval(&env)), "{}", source);
    }

    #[test]
    fn nine_digit_formatting_round_trips(x in prop_oneof![-1e6f64..1e6, -1e-3f64..1e-3, -1e30f64..1e30]) {
        let back: f64 = fmt_num(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs(), "{} -> {}", x, fmt_num(x));
    }

    #[test]
    fn polynomial_evaluation_is_linear(
        a in prop::collection::vec(-2.0f64..2.0, 12),
        b in prop::collection::vec(-2.0f64..2.0, 12),
        theta in 0.0f64..1.0,
        rho in 0.0f64..1.0,
    ) {
        let build = |c: &[f64]| PolyMatrix::from_terms(2, 2, [
            (Monomial::new(0, 0), DMatrix::from_row_slice(2, 2, &c[0..4])),
            (Monomial::new(1, 1), DMatrix::from_row_slice(2, 2, &c[4..8])),
            (Monomial::new(2, 0), DMatrix::from_row_slice(2, 2, &c[8..12])),
        ]).unwrap();
        let (pa, pb) = (build(&a), build(&b));
        let pt = Point::theta_rho(theta, rho);
        let lhs = pa.add(&pb).unwrap().eval(&pt).unwrap();
        let rhs = pa.eval(&pt).unwrap() + pb.eval(&pt).unwrap();
        prop_assert!((lhs - rhs).amax() < 1e-12);
        let prod = pa.matmul(&pb).unwrap().transpose().eval(&pt).unwrap();
        let direct = (pa.eval(&pt).unwrap() * pb.eval(&pt).unwrap()).transpose();
        prop_assert!((prod - direct).amax() < 1e-11);
    }

    #[test]
    fn theta_integral_matches_simpson(
        c in prop::collection::vec(-3.0f64..3.0, 4),
        lo in -2.0f64..0.0,
        width in 0.1f64..3.0,
        rho in 0.0f64..1.0,
    ) {
        let bx = ParamBox::new(lo, lo + width).unwrap();
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let p = PolyMatrix::from_terms(1, 1, [
            (Monomial::new(0, 1), one(c[0])),
            (Monomial::new(1, 0), one(c[1])),
            (Monomial::new(2, 1), one(c[2])),
            (Monomial::new(3, 0), one(c[3])),
        ]).unwrap();
        let exact = p.integrate_theta(&bx).unwrap().eval(&Point::rho(rho)).unwrap()[(0, 0)];
        let f = |th: f64| p.eval(&Point::theta_rho(th, rho)).unwrap()[(0, 0)];
        let panels = 10_000;
        let step = width / panels as f64;
        let mut s = f(lo) + f(lo + width);
        for k in 1..panels {
            s += f(lo + k as f64 * step) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        prop_assert!((exact - s * step / 3.0).abs() <= 1e-9);
    }

    #[test]
    fn history_is_exact_on_linear_paths(slope in -5.0f64..5.0, dt in 0.001f64..0.05, s in 0.0f64..1.0) {
        let mut buf = HistoryBuffer::new(InitialHistory::zero(1), 1.0);
        let steps = (2.0 / dt) as usize;
        for k in 0..=steps {
            let t = k as f64 * dt;
            buf.push(t, DVector::from_element(1, slope * t)).unwrap();
        }
        let t_end = steps as f64 * dt;
        let query = t_end - s;
        let v = buf.at(query).unwrap()[0];
        prop_assert!((v - slope * query).abs() < 1e-9);
    }

    #[test]
    fn description_matrices_round_trip(entries in prop::collection::vec(-1e3f64..1e3, 8)) {
        let text = format!(
            "n = 2\nn_w = 1\nn_z = 1\nbox = [0.0, 1.0]\nh = 0.1\nlambda0 = 1.0\n\
             [matrices.A]\n0 = [[{:?}, {:?}], [{:?}, {:?}]]\n2 = [[{:?}, {:?}], [{:?}, {:?}]]\n",
            entries[0], entries[1], entries[2], entries[3], entries[4], entries[5], entries[6], entries[7]
        );
        let d = Description::parse(&text).unwrap();
        let a = d.system.a.eval(&Point::rho(1.0)).unwrap();
        prop_assert_eq!(a[(0, 1)], entries[1] + entries[5]);
        let a0 = d.system.a.eval(&Point::rho(0.0)).unwrap();
        prop_assert_eq!(a0[(1, 0)], entries[2]);
    }
}
