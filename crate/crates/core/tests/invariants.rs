use degenerate_parabolic::geometry::{intrinsic_distance, Gamma, Point, SpatialGrid};
use degenerate_parabolic::harness::{DataSelector, ExperimentConfig};
use degenerate_parabolic::operators::{eval_operator, pucci_minus, pucci_plus, EllipticityPair, OperatorSpec, Problem, SymMatrix};
use degenerate_parabolic::regularity::estimate_exponent;
use degenerate_parabolic::solver::{monotonicity_bound, step};
use proptest::prelude::*;

fn sym(n: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-50.0..50.0f64, n * n).prop_map(move |v| SymMatrix::from_fn(n, |i, j| if i <= j { v[i * n + j] } else { v[j * n + i] }))
}

fn pair() -> impl Strategy<Value = EllipticityPair> {
    (0.1..2.0f64, 1.0..5.0f64).prop_map(|(l, s)| EllipticityPair::new(l, l * s).unwrap())
}

fn tol(m: &SymMatrix) -> f64 {
    1e-12 * (1.0 + m.max_abs_entry()) * 10.0
}

proptest! {
    #[test]
    fn pucci_duality_and_order(m in sym(3), e in pair()) {
        prop_assert!((pucci_minus(&m, e) + pucci_plus(&m.scale(-1.0), e)).abs() <= tol(&m));
        prop_assert!(pucci_minus(&m, e) <= pucci_plus(&m, e) + tol(&m));
    }

    #[test]
    fn pucci_is_positively_homogeneous(m in sym(2), c in 0.0..20.0f64, e in pair()) {
        let t = tol(&m) * (1.0 + c);
        prop_assert!((pucci_plus(&m.scale(c), e) - c * pucci_plus(&m, e)).abs() <= t);
        prop_assert!((pucci_minus(&m.scale(c), e) - c * pucci_minus(&m, e)).abs() <= t);
    }

    #[test]
    fn pucci_bounds_admissible_traces(m in sym(2), a in prop::collection::vec(0.0..1.0f64, 2), e in pair()) {
        // tr(AM) for a diagonal admissible A lies between the extremal values
        let aa: Vec<f64> = a.iter().map(|s| e.lambda + s * (e.big_lambda - e.lambda)).collect();
        let tr = aa[0] * m.get(0, 0) + aa[1] * m.get(1, 1);
        prop_assert!(pucci_minus(&m, e) <= tr + tol(&m));
        prop_assert!(tr <= pucci_plus(&m, e) + tol(&m));
    }

    #[test]
    fn operators_are_sandwiched(x in sym(2), y in sym(2)) {
        let e = EllipticityPair::new(1.0, 2.0).unwrap();
        let d = x.sub(&y);
        let s = tol(&x) + tol(&y);
        for key in ["laplacian", "pucci+", "pucci-", "bellman:inf:1,2;2,1", "bellman:sup:1.5,1.5@2;1,2"] {
            let op = OperatorSpec::from_key(key, e).unwrap();
            let diff = eval_operator(&op, &x, &[0.0, 0.5], 0.0).unwrap() - eval_operator(&op, &y, &[0.0, 0.5], 0.0).unwrap();
            prop_assert!(pucci_minus(&d, e) <= diff + s, "{key}");
            prop_assert!(diff <= pucci_plus(&d, e) + s, "{key}");
        }
    }

    #[test]
    fn intrinsic_distance_is_a_metric(
        a in prop::collection::vec(-1.0..1.0f64, 3),
        b in prop::collection::vec(-1.0..1.0f64, 3),
        c in prop::collection::vec(-1.0..1.0f64, 3),
        g in -3.0..0.99f64,
    ) {
        let g = Gamma::new(g).unwrap();
        let p = |v: &[f64]| Point::new(&v[..2], v[2]);
        let (pa, pb, pc) = (p(&a), p(&b), p(&c));
        let dab = intrinsic_distance(&pa, &pb, g);
        prop_assert!((dab - intrinsic_distance(&pb, &pa, g)).abs() <= 1e-15);
        prop_assert!(dab <= intrinsic_distance(&pa, &pc, g) + intrinsic_distance(&pc, &pb, g) + 1e-12);
        prop_assert_eq!(intrinsic_distance(&pa, &pa, g), 0.0);
    }

    #[test]
    fn estimator_recovers_power_laws(alpha in 0.01..0.99f64, c in 1e-3..1e3f64, order in 1u8..=2) {
        let radii: Vec<f64> = (1..=6).map(|k| 2f64.powi(-k)).collect();
        let res: Vec<f64> = radii.iter().map(|r| c * r.powf(order as f64 + alpha)).collect();
        let est = estimate_exponent(&radii, &res, order).unwrap();
        prop_assert!((est.alpha_raw.unwrap() - alpha).abs() <= 1e-10);
        prop_assert!((1.0 - est.r_squared.unwrap()).abs() <= 1e-12);
    }
}

fn problem(gamma: f64, key: &str) -> Problem {
    let e = EllipticityPair::new(1.0, 2.0).unwrap();
    Problem::new(Gamma::new(gamma).unwrap(), OperatorSpec::from_key(key, e).unwrap(), 2, |_, _| 0.0, |_, _| 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_step_preserves_order(
        u in prop::collection::vec(-1.0..1.0f64, 9 * 5),
        bump in prop::collection::vec(0.0..1.0f64, 9 * 5),
        g in prop::sample::select(vec![-1.0, 0.0, 0.5]),
        key in prop::sample::select(vec!["laplacian", "pucci+", "pucci-"]),
        frac in 0.05..1.0f64,
    ) {
        let prob = problem(g, key);
        let space = SpatialGrid::new(2, 0.25, 1.0).unwrap();
        prop_assume!(space.len() == u.len());
        let v: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let dt = frac * monotonicity_bound(&space, &prob, None);
        let su = step(&space, &u, &prob, 0.0, dt, None).unwrap();
        let sv = step(&space, &v, &prob, 0.0, dt, None).unwrap();
        for (a, b) in su.iter().zip(&sv) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn config_round_trips(
        gamma in -2.0..0.99f64,
        h in prop::sample::select(vec![0.125, 0.0625]),
        seed in any::<u64>(),
        amp in 0.0..10.0f64,
    ) {
        let text = format!(r#"{{
            "schema_version": 1, "name": "p", "seed": {seed},
            "problem": {{ "gamma": {gamma}, "operator": "pucci-", "lambda": 1.0, "Lambda": 2.0, "dim": 2,
                          "data": {{ "kind": "bump", "amplitude": {amp} }} }},
            "grid": {{ "h": {h} }}
        }}"#);
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&cfg.problem.data, &DataSelector::Bump { amplitude: amp });
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
