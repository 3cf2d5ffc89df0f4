use degenerate_parabolic::barriers::{
    lipschitz_barrier, lipschitz_parameters, singular_beta_threshold, verify_certificate, ClosedFormField, Domain, FieldKind, Form,
    Inequality, Relation, Sampler,
};
use degenerate_parabolic::geometry::{Gamma, Point, SampledField, SpatialGrid};
use degenerate_parabolic::operators::{EllipticityPair, OperatorSpec, Problem};
use degenerate_parabolic::regularity::{fit_boundary_linear, fit_boundary_quadratic, regularity_report};
use degenerate_parabolic::solver::{solve_cauchy_dirichlet, SchemeConfig};
use proptest::prelude::*;

fn e12() -> EllipticityPair {
    EllipticityPair::new(1.0, 2.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn nonnegative_data_gives_nonnegative_solutions(
        g in prop::sample::select(vec![-1.0, 0.0, 0.5]),
        key in prop::sample::select(vec!["laplacian", "pucci+", "pucci-"]),
        a in 0.0..2.0f64,
        c in 0.0..1.0f64,
        k in 0.0..6.0f64,
    ) {
        let e = if key == "laplacian" { EllipticityPair::new(1.0, 1.0).unwrap() } else { e12() };
        let prob = Problem::new(
            Gamma::new(g).unwrap(),
            OperatorSpec::from_key(key, e).unwrap(),
            2,
            move |x, _| c * x[1],
            move |x, t| a * (k * x[0] + t).sin().powi(2) + c * x[1],
        );
        let res = solve_cauchy_dirichlet(&prob, &SchemeConfig::new(0.125).with_safety(0.9)).unwrap();
        prop_assert!(res.field.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn fits_are_scale_equivariant(c in 0.1..50.0f64, order in 1u8..=2) {
        let g = Gamma::new(0.5).unwrap();
        let grid = SpatialGrid::new(2, 1.0 / 32.0, 1.0).unwrap();
        let u = SampledField::from_fn(grid, vec![-0.5, 0.0], |x, _| x[1].powf(1.5) + 0.3 * x[0] * x[1]).unwrap();
        let cu = u.map(|v, _, _| c * v).unwrap();
        let base = Point::origin(2, 0.0);
        let (f, cf) = match order {
            1 => (fit_boundary_linear(&u, &base, 0.25, g).unwrap(), fit_boundary_linear(&cu, &base, 0.25, g).unwrap()),
            _ => (fit_boundary_quadratic(&u, &base, 0.25, g, None).unwrap(), fit_boundary_quadratic(&cu, &base, 0.25, g, None).unwrap()),
        };
        prop_assert!((cf.residual - c * f.residual).abs() <= 1e-9 * c * f.residual.max(1e-12));
        for (a, b) in f.coefficients.iter().zip(&cf.coefficients) {
            prop_assert!((b - c * a).abs() <= 1e-8 * c * (1.0 + a.abs()), "{a} {b}");
        }
        let r1 = regularity_report(&u, &base, order, 1..=4, g, None).unwrap().estimate.unwrap();
        let r2 = regularity_report(&cu, &base, order, 1..=4, g, None).unwrap().estimate.unwrap();
        prop_assert!((r1.alpha_raw.unwrap() - r2.alpha_raw.unwrap()).abs() <= 1e-8);
    }
}

#[test]
fn coefficient_drift_is_geometric_on_the_power_profile() {
    // u − 1 = −x_n^{1.5}/0.75: a_k ~ r_k^{1/2}, so the drift shrinks by about 2^{−1/2} per level
    let g = Gamma::new(0.5).unwrap();
    let grid = SpatialGrid::new(2, 1.0 / 256.0, 1.0).unwrap();
    let u = SampledField::from_fn(grid, vec![-0.5, 0.0], |x, _| -x[1].powf(1.5) / 0.75).unwrap();
    let rep = regularity_report(&u, &Point::origin(2, 0.0), 1, 1..=6, g, None).unwrap();
    let alpha = rep.estimate.unwrap().alpha.unwrap();
    let drifts: Vec<f64> = rep.levels.iter().filter_map(|r| r.drift).collect();
    assert_eq!(drifts.len(), 5);
    let c = drifts[0];
    for (k, d) in drifts.iter().enumerate() {
        assert!(*d <= 1.1 * c * 0.5f64.powf(k as f64 * alpha), "level {k}: {d}");
    }
    for w in drifts.windows(2) {
        let ratio = w[1] / w[0];
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.05, "{ratio}");
    }
}

#[test]
fn singular_margin_decreases_in_beta_beyond_threshold() {
    let g = Gamma::new(-1.0).unwrap();
    let e = e12();
    let th = singular_beta_threshold(g, 2, e);
    let sampler = Sampler::new(Domain::SingularAnnulus, 2, g, 4000);
    let pts = sampler.points();
    let ineq = Inequality::new(Form::PucciMinus, Relation::AtMost, 0.0).normalized();
    let mut last = f64::INFINITY;
    for m in [1.0, 2.0, 4.0, 8.0, 16.0] {
        let phi = ClosedFormField::new(FieldKind::SingularPhi { beta: m * th }, g, 2).unwrap();
        let r = verify_certificate("phi", &phi, &ineq, e, &sampler, &pts).unwrap();
        assert!(r.max_value < last, "beta = {}: {} vs {last}", m * th, r.max_value);
        last = r.max_value;
    }
}

#[test]
fn lipschitz_certificate_on_a_dense_lattice() {
    let g = Gamma::new(0.5).unwrap();
    let e = e12();
    let (beta, m) = lipschitz_parameters(g, 2, e);
    let v = lipschitz_barrier(m, beta, g, 2, e).unwrap();
    let n = 64;
    let mut pts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = [-1.0 + (2 * i + 1) as f64 / n as f64, (j as f64 + 0.5) / n as f64];
                let t = -(k as f64) / n as f64;
                if x[0] * x[0] + x[1] * x[1] < 1.0 {
                    pts.push(Point::new(&x, t));
                }
            }
        }
    }
    let sampler = Sampler::new(Domain::HalfCylinder, 2, g, 0);
    let ineq = Inequality::new(Form::PucciPlus, Relation::AtLeast, 2.0);
    let r = verify_certificate("lattice", &v, &ineq, e, &sampler, &pts).unwrap();
    assert!(r.pass, "min {} at {:?}", r.min_value, r.worst_point);
}

#[test]
fn lipschitz_barrier_dominates_normalized_solutions_on_the_lateral_boundary() {
    let g = Gamma::new(0.5).unwrap();
    let e = EllipticityPair::new(1.0, 1.0).unwrap();
    let prob = Problem::new(g, OperatorSpec::laplacian(e).unwrap(), 2, |_, _| 0.0, |x, t| x[1] * (1.0 - x[1]) * (3.0 * x[0] + t).cos());
    let res = solve_cauchy_dirichlet(&prob, &SchemeConfig::new(1.0 / 32.0).with_safety(0.9)).unwrap();
    let norm = res.field.sup_norm() + res.envelope.forcing_sup;
    let (beta, m) = lipschitz_parameters(g, 2, e12());
    let v = lipschitz_barrier(m, beta, g, 2, e12()).unwrap();
    // the solve runs on t ∈ [−1, 0], matching Q_1^+
    let pts = Sampler::new(Domain::Lateral, 2, g, 2000).points();
    let mut checked = 0;
    for p in &pts {
        if let Some(u) = res.field.interpolate(p) {
            let vv = v.value(p.space(), p.t);
            assert!(vv >= 1.0 && 1.0 >= u.abs() / norm, "{p:?}: v = {vv}, u = {u}");
            checked += 1;
        }
    }
    assert!(checked > 1000, "{checked}");
}
