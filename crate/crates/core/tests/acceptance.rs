//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints its PASS/FAIL line; exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use degenerate_parabolic::barriers::BarrierError;
use degenerate_parabolic::geometry::{Gamma, Point};
use degenerate_parabolic::harness::{
    certificate_suite, comparison_suite, max_error, Analyses, CertificateKind, DataSelector, ExperimentConfig, GridConfig,
    ProblemConfig, SchemeOptions, SuiteReport, SCHEMA_VERSION,
};
use degenerate_parabolic::operators::{eval_operator, pucci_minus, pucci_plus, EllipticityPair, OperatorSpec, SymMatrix};
use degenerate_parabolic::regularity::{check_hopf_bound, check_lipschitz_bound, estimate_exponent, regularity_report};
use degenerate_parabolic::solver::{solve_cauchy_dirichlet, SolveResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

/// Envelope violations over every solve made by the suite.
#[derive(Default)]
struct Envelopes {
    runs: usize,
    violations: usize,
}

impl Envelopes {
    fn record(&mut self, r: &SolveResult) {
        self.runs += 1;
        self.violations += r.envelope.violations(&r.field);
    }
}

fn config(gamma: f64, op: &str, lambda: f64, big_lambda: f64, data: DataSelector, h: f64) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "acceptance".into(),
        problem: ProblemConfig { gamma, operator: op.into(), lambda, big_lambda, dim: 2, data },
        grid: GridConfig { h, radius: 1.0, t_start: -1.0, horizon: 1.0 },
        scheme: SchemeOptions::default(),
        analyses: Analyses::default(),
        output: None,
        seed: 0,
    }
}

fn solve(cfg: &ExperimentConfig, env: &mut Envelopes) -> SolveResult {
    let prob = cfg.build_problem().expect("valid problem");
    let r = solve_cauchy_dirichlet(&prob, &cfg.scheme_config()).expect("solve");
    env.record(&r);
    r
}

fn time_linear() -> DataSelector {
    DataSelector::TimeLinearProfile { linear: vec![0.0; 3] }
}

fn exact_reproduction(env: &mut Envelopes) -> Outcome {
    let started = Instant::now();
    let mut errors = Vec::new();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let cfg = config(0.5, "laplacian", 1.0, 1.0, time_linear(), h);
        let exact = cfg.exact_field(cfg.gamma().unwrap()).unwrap();
        let r = solve(&cfg, env);
        errors.push(max_error(&r.field, &exact));
    }
    let secs = started.elapsed().as_secs_f64();
    let order = errors.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    let err = errors[2];
    Outcome::new(
        err <= 5e-3 && order >= 1.0 && secs <= 120.0,
        format!("max error {err:.3e} (<= 5e-3), min observed order {order:.3} (>= 1), runtime {secs:.1}s (<= 120)"),
    )
}

fn order_one_exponent(env: &mut Envelopes) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    // 1/128 is the graded run; 1/64 is reported alongside
    for (h, graded) in [(1.0 / 128.0, true), (1.0 / 64.0, false)] {
        let cfg = config(0.5, "laplacian", 1.0, 1.0, DataSelector::PowerProfile { eps: 0.5 }, h);
        let r = solve(&cfg, env);
        let reduced = r.field.map(|v, _, _| v - 1.0).unwrap();
        let base = Point::origin(2, reduced.final_time());
        let rep = regularity_report(&reduced, &base, 1, 1..=5, cfg.gamma().unwrap(), None).unwrap();
        let est = rep.estimate.expect("estimate");
        let (a, r2) = (est.alpha_raw.unwrap(), est.r_squared.unwrap());
        if graded {
            pass = (0.45..=0.55).contains(&a) && r2 >= 0.98;
        }
        parts.push(format!("h=1/{}: alpha {a:.4}, R2 {r2:.5}{}", (1.0 / h).round(), if graded { "" } else { " (not graded)" }));
    }
    Outcome::new(pass, format!("{} (alpha in [0.45, 0.55], R2 >= 0.98)", parts.join("; ")))
}

fn order_two_exponent(env: &mut Envelopes) -> Outcome {
    use degenerate_parabolic::harness::{run_experiment, FitRequest, FitSource, Reduction, Stages};
    let mut cfg = config(0.5, "laplacian", 1.0, 1.0, time_linear(), 1.0 / 64.0);
    cfg.analyses.fits = vec![
        FitRequest { order: 2, levels: [1, 5], reduction: Reduction::CatalogProfile, field: FitSource::Analytic { h: 1.0 / 256.0 } },
        FitRequest { order: 2, levels: [1, 5], reduction: Reduction::CatalogProfile, field: FitSource::Solved },
    ];
    let out = run_experiment(&cfg, Stages::FIT, None).expect("experiment");
    env.record(out.solve.as_ref().unwrap());
    let alpha = |i: usize| out.fits[i].estimate.as_ref().and_then(|e| e.alpha_raw).unwrap_or(f64::NAN);
    let (an, so) = (alpha(0), alpha(1));
    Outcome::new(
        (0.48..=0.52).contains(&an) && (0.40..=0.60).contains(&so),
        format!("analytic (h=1/256) alpha {an:.4} in [0.48, 0.52]; solved (h=1/64) alpha {so:.4} in [0.40, 0.60]"),
    )
}

fn comparison(env: &Envelopes) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (gamma, seed) in [(-1.0, 11), (0.0, 12), (0.5, 13)] {
        let cfg = config(gamma, "laplacian", 1.0, 1.0, DataSelector::Zero, 1.0 / 16.0);
        let prob = cfg.build_problem().unwrap();
        let rep = comparison_suite(&prob, &cfg.scheme_config(), 20, seed).expect("comparison suite");
        pass &= rep.pass;
        let v = &rep.get("ordering_violations").unwrap().measured["violations"];
        let e = &rep.get("perron_envelope").unwrap().measured["violations"];
        parts.push(format!("gamma={gamma}: {v} ordering / {e} envelope violations"));
    }
    pass &= env.violations == 0;
    parts.push(format!("{} envelope violations over {} other acceptance solves", env.violations, env.runs));
    Outcome::new(pass, parts.join("; "))
}

fn certificates() -> Outcome {
    let e = EllipticityPair::new(1.0, 2.0).unwrap();
    let runs: [(CertificateKind, f64); 4] = [
        (CertificateKind::Lipschitz, 0.5),
        (CertificateKind::Lipschitz, -1.0),
        (CertificateKind::HopfSingular, -1.0),
        (CertificateKind::HopfDegenerate, 0.5),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (kind, gamma) in runs {
        let res: Result<(SuiteReport, _), BarrierError> = certificate_suite(kind, Gamma::new(gamma).unwrap(), 2, e, 20_000);
        let (rep, _) = res.expect("certificate suite");
        pass &= rep.pass;
        let failed: Vec<&str> = rep.checks.iter().filter(|c| c.mandatory && c.status == degenerate_parabolic::harness::Status::Fail).map(|c| c.name.as_str()).collect();
        parts.push(format!("{kind:?} gamma={gamma}: {}", if failed.is_empty() { "ok".to_string() } else { format!("failed {failed:?}") }));
    }
    Outcome::new(pass, parts.join("; "))
}

fn pucci() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let e = EllipticityPair::new(1.0, 2.0).unwrap();
    // brute force over a 10^3 grid of diagonal coefficient matrices
    let grid: Vec<f64> = (0..1000).map(|i| e.lambda + (e.big_lambda - e.lambda) * i as f64 / 999.0).collect();
    let mut oracle_err: f64 = 0.0;
    for _ in 0..100 {
        let d: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = SymMatrix::diagonal(&d);
        let sup: f64 = d.iter().map(|&di| grid.iter().map(|a| a * di).fold(f64::NEG_INFINITY, f64::max)).sum();
        let inf: f64 = d.iter().map(|&di| grid.iter().map(|a| a * di).fold(f64::INFINITY, f64::min)).sum();
        oracle_err = oracle_err.max((pucci_plus(&m, e) - sup).abs()).max((pucci_minus(&m, e) - inf).abs());
    }
    let ops: Vec<OperatorSpec> = ["laplacian", "pucci+", "pucci-", "bellman:inf:1,2;2,1.5@0.3", "bellman:sup:1.2,1;1.9,2@-1"]
        .iter()
        .map(|k| OperatorSpec::from_key(k, e).unwrap())
        .collect();
    let mut identity_err: f64 = 0.0;
    let mut sandwich_err: f64 = 0.0;
    for i in 0..1000 {
        let n = 2 + i % 2;
        let sym = |rng: &mut ChaCha8Rng| {
            let mut m = SymMatrix::zeros(n);
            for a in 0..n {
                for b in a..n {
                    m.set(a, b, rng.random_range(-10.0..10.0));
                }
            }
            m
        };
        let (x, y) = (sym(&mut rng), sym(&mut rng));
        let c = rng.random_range(0.0..10.0);
        let scale = 1.0 + x.max_abs_entry() * (1.0 + c);
        identity_err = identity_err
            .max((pucci_minus(&x, e) + pucci_plus(&x.scale(-1.0), e)).abs() / scale)
            .max((pucci_plus(&x.scale(c), e) - c * pucci_plus(&x, e)).abs() / scale)
            .max((pucci_minus(&x.scale(c), e) - c * pucci_minus(&x, e)).abs() / scale);
        let d = x.sub(&y);
        let (lo, hi) = (pucci_minus(&d, e), pucci_plus(&d, e));
        let pt = vec![0.1; n];
        for op in ops.iter().filter(|o| o.fixed_dim().is_none_or(|k| k == n)) {
            let diff = eval_operator(op, &x, &pt, 0.0).unwrap() - eval_operator(op, &y, &pt, 0.0).unwrap();
            let s = 1.0 + x.max_abs_entry() + y.max_abs_entry();
            sandwich_err = sandwich_err.max((lo - diff) / s).max((diff - hi) / s);
        }
    }
    Outcome::new(
        oracle_err <= 1e-3 && identity_err <= 1e-12 && sandwich_err <= 1e-12,
        format!("oracle gap {oracle_err:.2e} (<= 1e-3); duality/homogeneity {identity_err:.2e}, sandwich excess {sandwich_err:.2e} (<= 1e-12)"),
    )
}

fn calibration() -> Outcome {
    let radii: Vec<f64> = (1..=5).map(|k| 2f64.powi(-k)).collect();
    let mut worst: f64 = 0.0;
    let mut r2_gap: f64 = 0.0;
    for alpha in [0.1, 0.3, 0.5, 0.9] {
        let res: Vec<f64> = radii.iter().map(|r: &f64| r.powf(1.0 + alpha)).collect();
        let est = estimate_exponent(&radii, &res, 1).unwrap();
        worst = worst.max((est.alpha_raw.unwrap() - alpha).abs());
        r2_gap = r2_gap.max((1.0 - est.r_squared.unwrap()).abs());
    }
    Outcome::new(worst <= 1e-12 && r2_gap <= 1e-12, format!("max |alpha_hat - alpha| {worst:.2e} (<= 1e-12), max |1 - R2| {r2_gap:.2e}"))
}

fn lipschitz_hopf(env: &mut Envelopes) -> Outcome {
    let mut consts = Vec::new();
    let mut hopf = Vec::new();
    for h in [1.0 / 32.0, 1.0 / 64.0] {
        let cfg = config(0.5, "laplacian", 1.0, 1.0, DataSelector::Bump { amplitude: 1.0 }, h);
        let r = solve(&cfg, env);
        let g = cfg.gamma().unwrap();
        let l = check_lipschitz_bound(&r.field, r.field.sup_norm(), r.envelope.forcing_sup, g).unwrap();
        consts.push(l.constant);
        hopf.push(check_hopf_bound(&r.field, g).unwrap().constant);
    }
    let spread = (consts[0] - consts[1]).abs() / consts[0].max(consts[1]);
    Outcome::new(
        consts.iter().all(|c| c.is_finite() && *c > 0.0) && spread <= 0.10 && hopf.iter().all(|c| *c > 0.0),
        format!("Lipschitz C {:.4} / {:.4} (spread {:.1}% <= 10%); Hopf C {:.4} / {:.4} (> 0)", consts[0], consts[1], 100.0 * spread, hopf[0], hopf[1]),
    )
}

fn main() -> ExitCode {
    let mut env = Envelopes::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let o = f();
        println!("criterion {n} {name}: {} ({:.1}s) {}", if o.pass { "PASS" } else { "FAIL" }, started.elapsed().as_secs_f64(), o.detail);
        results.push((n, name, o));
    };
    run(1, "exact-solution reproduction", &mut || exact_reproduction(&mut env));
    run(2, "order-1 sharp exponent", &mut || order_one_exponent(&mut env));
    run(3, "order-2 sharp exponent", &mut || order_two_exponent(&mut env));
    run(8, "Lipschitz/Hopf checks", &mut || lipschitz_hopf(&mut env));
    run(4, "discrete comparison and envelopes", &mut || comparison(&env));
    run(5, "barrier certificates", &mut certificates);
    run(6, "Pucci correctness", &mut pucci);
    run(7, "estimator calibration", &mut calibration);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria PASS", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAIL in criteria {failed:?}");
        ExitCode::FAILURE
    }
}
