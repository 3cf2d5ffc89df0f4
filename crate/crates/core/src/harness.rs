//! Experiment configuration, end-to-end pipelines and property suites.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::barriers::{
    degenerate_thresholds, exact_solution, hopf_barrier_degenerate_unchecked, hopf_barrier_singular_unchecked, lipschitz_barrier,
    lipschitz_barrier_unchecked, lipschitz_parameters, singular_beta_threshold, singular_chain_bound, verify_certificate,
    CertificateReport, Domain, ExactKind, FieldKind, Form, Inequality, Relation, Sampler,
};
use crate::geometry::{intrinsic_distance, Gamma, Point, SampledField, SpatialGrid};
use crate::operators::{EllipticityPair, OperatorSpec, Problem, ScalarFn};
use crate::regularity::{check_hopf_bound, check_lipschitz_bound, regularity_report, RegularityReport};
use crate::solver::{solve_cauchy_dirichlet, Marcher, SchemeConfig, SolveResult, SolverError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> HarnessError {
    move |e| HarnessError::Stage { stage, message: e.to_string() }
}

/// Forcing and boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSelector {
    /// Exact solution `1 − x_n^{2−ε}/((2−ε)(1−ε))` with `f = x_n^{γ−ε}`.
    PowerProfile { eps: f64 },
    /// Exact solution `l(x) + t x_n + x_n^{3−γ}/((3−γ)(2−γ))` with `f = 0`.
    TimeLinearProfile {
        #[serde(default)]
        linear: Vec<f64>,
    },
    /// `f = 0`, `g = 0`.
    Zero,
    /// `γ = 0` heat solution `e^{−nπ²(t − t_start)} Π sin(π xᵢ)`.
    HeatSines,
    /// `f = 0`; `g = A·x_n(R − x_n)Π_{i<n}(R² − xᵢ²)/R^{2n}`, positive inside
    /// and zero on the face and lateral sides.
    Bump { amplitude: f64 },
    /// `f = 0`, `g = c`.
    Constant { c: f64 },
    /// `u = x_n`, reproduced exactly by the stencil.
    LinearNormal,
    /// `g = 0`, `f = c + k·d((x,t), (0, t_end))^{α+γ}` with `d` the intrinsic
    /// distance.
    SingularForcing { c: f64, k: f64, alpha: f64 },
}

impl DataSelector {
    pub const NAMES: [(&'static str, &'static str); 8] = [
        ("power_profile", "exact, f = x_n^(gamma-eps), C^{1,1-eps} at the face"),
        ("time_linear_profile", "exact, f = 0, C^{2,1-gamma} at the face"),
        ("zero", "f = 0, g = 0"),
        ("heat_sines", "exact separable heat solution (gamma = 0)"),
        ("bump", "f = 0, positive initial data vanishing on the face"),
        ("constant", "f = 0, g = c"),
        ("linear_normal", "exact, u = x_n"),
        ("singular_forcing", "g = 0, f = c + k d^(alpha+gamma)"),
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub gamma: f64,
    pub operator: String,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub dim: usize,
    pub data: DataSelector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default = "minus_one")]
    pub t_start: f64,
    #[serde(default = "one")]
    pub horizon: f64,
}

fn one() -> f64 {
    1.0
}

fn minus_one() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeOptions {
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    #[serde(default)]
    pub dt_override: Option<f64>,
    #[serde(default)]
    pub coefficient_cap: Option<f64>,
    #[serde(default)]
    pub snapshot_stride: Option<usize>,
}

fn default_safety() -> f64 {
    0.9
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions { cfl_safety: default_safety(), dt_override: None, coefficient_cap: None, snapshot_stride: None }
    }
}

/// What is subtracted from the field before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    None,
    /// `g(x', 0, t)`.
    FaceData,
    /// The boundary polynomial of the catalog solution (`1` for the power
    /// profile, `l(x) + t x_n` for the time-linear profile); falls back to
    /// face data for other selectors.
    #[default]
    CatalogProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitSource {
    Solved,
    /// The catalog solution sampled on its own grid of width `h`.
    Analytic { h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRequest {
    pub order: u8,
    /// Dyadic levels `k_min..=k_max` (`r = 2^{-k}`).
    pub levels: [u32; 2],
    #[serde(default)]
    pub reduction: Reduction,
    #[serde(default = "solved")]
    pub field: FitSource,
}

fn solved() -> FitSource {
    FitSource::Solved
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Lipschitz,
    HopfSingular,
    HopfDegenerate,
}

impl CertificateKind {
    pub const ALL: [(CertificateKind, &'static str); 3] = [
        (CertificateKind::Lipschitz, "v = 2M eta - M x_n^(2-gamma); v_t - x_n^gamma M+(D2 v) >= 2 on Q_1^+"),
        (CertificateKind::HopfSingular, "phi = exp(-beta(|x - e_n/2|^2 - 4^(1-gamma) t)), gamma < 0"),
        (CertificateKind::HopfDegenerate, "w = K(xi + psi), 0 < gamma < 1"),
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateRequest {
    pub kind: CertificateKind,
    /// Overrides of the problem's `γ`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_cert_samples")]
    pub interior_samples: usize,
}

fn default_cert_samples() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRequest {
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceRequest {
    pub resolutions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Analyses {
    #[serde(default)]
    pub fits: Vec<FitRequest>,
    #[serde(default)]
    pub lipschitz: bool,
    #[serde(default)]
    pub hopf: bool,
    #[serde(default)]
    pub certificates: Vec<CertificateRequest>,
    #[serde(default)]
    pub comparison: Option<ComparisonRequest>,
    #[serde(default)]
    pub convergence: Option<ConvergenceRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub scheme: SchemeOptions,
    #[serde(default)]
    pub analyses: Analyses,
    /// Artifact directory; the CLI's `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.into(), source: e })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn gamma(&self) -> Result<Gamma, HarnessError> {
        Gamma::new(self.problem.gamma).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn ellipticity(&self) -> Result<EllipticityPair, HarnessError> {
        EllipticityPair::new(self.problem.lambda, self.problem.big_lambda).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn operator(&self) -> Result<OperatorSpec, HarnessError> {
        OperatorSpec::from_key(&self.problem.operator, self.ellipticity()?).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Checks everything that can be checked before computing.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let gamma = self.gamma()?;
        let op = self.operator()?;
        let n = self.problem.dim;
        if !(1..=3).contains(&n) {
            return bad(format!("dim = {n}"));
        }
        if let Some(d) = op.fixed_dim() {
            if d != n {
                return bad(format!("operator has dimension {d}, problem {n}"));
            }
        }
        let g = &self.grid;
        if !(g.h > 0.0 && g.radius > 0.0 && g.horizon > 0.0 && g.t_start.is_finite()) {
            return bad(format!("grid {g:?}"));
        }
        SpatialGrid::new(n, g.h, g.radius).map_err(|e| HarnessError::Config(e.to_string()))?;
        match &self.problem.data {
            DataSelector::PowerProfile { eps } => {
                exact_solution(&ExactKind::PowerProfile { eps: *eps }, gamma, n).map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            DataSelector::TimeLinearProfile { linear } => {
                exact_solution(&ExactKind::TimeLinearProfile { linear: linear.clone() }, gamma, n)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            DataSelector::HeatSines if gamma.value() != 0.0 => return bad("heat_sines requires gamma = 0".into()),
            DataSelector::SingularForcing { alpha, .. } if !(*alpha > 0.0 && *alpha <= 1.0) => {
                return bad(format!("singular_forcing alpha = {alpha}"));
            }
            _ => {}
        }
        let s = &self.scheme;
        if !(s.cfl_safety > 0.0 && s.cfl_safety.is_finite()) {
            return bad(format!("cfl_safety = {}", s.cfl_safety));
        }
        for f in &self.analyses.fits {
            if f.order != 1 && f.order != 2 {
                return bad(format!("fit order {}", f.order));
            }
            if f.levels[0] > f.levels[1] {
                return bad(format!("fit levels {:?}", f.levels));
            }
            if let FitSource::Analytic { h } = f.field {
                if self.exact_field(gamma).is_none() {
                    return bad("analytic fits need an exact catalog selector".into());
                }
                if !(h > 0.0) {
                    return bad(format!("analytic h = {h}"));
                }
            }
        }
        if let Some(c) = &self.analyses.comparison {
            if c.trials == 0 {
                return bad("comparison trials must be at least 1".into());
            }
        }
        if let Some(c) = &self.analyses.convergence {
            if c.resolutions.len() < 3 {
                return bad("convergence needs at least 3 resolutions".into());
            }
            if self.exact_field(gamma).is_none() {
                return bad("convergence needs an exact catalog selector".into());
            }
        }
        for c in &self.analyses.certificates {
            if let Some(g) = c.gamma {
                Gamma::new(g).map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Closed-form solution for exact selectors, when the operator is one it
    /// solves.
    pub fn exact_field(&self, gamma: Gamma) -> Option<ScalarFn> {
        let lap = self.problem.operator == "laplacian";
        let n = self.problem.dim;
        let t0 = self.grid.t_start;
        match &self.problem.data {
            DataSelector::PowerProfile { eps } if lap => {
                exact_solution(&ExactKind::PowerProfile { eps: *eps }, gamma, n).ok().map(|s| s.boundary)
            }
            DataSelector::TimeLinearProfile { linear } if lap => {
                exact_solution(&ExactKind::TimeLinearProfile { linear: linear.clone() }, gamma, n).ok().map(|s| s.boundary)
            }
            DataSelector::HeatSines if lap && gamma.value() == 0.0 => Some(Arc::new(move |x: &[f64], t: f64| heat_sines(x, t, t0))),
            DataSelector::LinearNormal => Some(Arc::new(|x: &[f64], _| x[x.len() - 1])),
            DataSelector::Zero => Some(Arc::new(|_, _| 0.0)),
            DataSelector::Constant { c } => {
                let c = *c;
                Some(Arc::new(move |_, _| c))
            }
            _ => None,
        }
    }

    pub fn scheme_config(&self) -> SchemeConfig {
        SchemeConfig {
            cfl_safety: self.scheme.cfl_safety,
            h: self.grid.h,
            dt_override: self.scheme.dt_override,
            coefficient_cap: self.scheme.coefficient_cap,
            snapshot_stride: self.scheme.snapshot_stride,
        }
    }

    /// The problem described by this config.
    pub fn build_problem(&self) -> Result<Problem, HarnessError> {
        let gamma = self.gamma()?;
        let op = self.operator()?;
        let n = self.problem.dim;
        let g = &self.grid;
        let (f, b) = data_functions(&self.problem.data, gamma, n, g.radius, g.t_start, g.t_start + g.horizon)?;
        let mut p = Problem::new(gamma, op, n, |_, _| 0.0, |_, _| 0.0).with_window(g.t_start, g.horizon).with_radius(g.radius);
        p.forcing = f;
        p.boundary = b;
        Ok(p)
    }
}

fn heat_sines(x: &[f64], t: f64, t0: f64) -> f64 {
    let n = x.len() as f64;
    (-n * PI * PI * (t - t0)).exp() * x.iter().map(|v| (PI * v).sin()).product::<f64>()
}

fn data_functions(sel: &DataSelector, gamma: Gamma, n: usize, radius: f64, t0: f64, t_end: f64) -> Result<(ScalarFn, ScalarFn), HarnessError> {
    let zero: ScalarFn = Arc::new(|_, _| 0.0);
    Ok(match sel {
        DataSelector::PowerProfile { eps } => {
            let s = exact_solution(&ExactKind::PowerProfile { eps: *eps }, gamma, n).map_err(|e| HarnessError::Config(e.to_string()))?;
            (s.forcing, s.boundary)
        }
        DataSelector::TimeLinearProfile { linear } => {
            let s = exact_solution(&ExactKind::TimeLinearProfile { linear: linear.clone() }, gamma, n)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            (s.forcing, s.boundary)
        }
        DataSelector::Zero => (zero.clone(), zero),
        DataSelector::HeatSines => (zero, Arc::new(move |x: &[f64], t: f64| heat_sines(x, t, t0))),
        DataSelector::Bump { amplitude } => {
            let a = *amplitude;
            let norm = radius.powi(2 * n as i32);
            (
                zero,
                Arc::new(move |x: &[f64], _| {
                    let xn = x[x.len() - 1];
                    let tang: f64 = x[..x.len() - 1].iter().map(|v| radius * radius - v * v).product();
                    a * xn * (radius - xn) * tang / norm
                }),
            )
        }
        DataSelector::Constant { c } => {
            let c = *c;
            (zero, Arc::new(move |_, _| c))
        }
        DataSelector::LinearNormal => (zero, Arc::new(|x: &[f64], _| x[x.len() - 1])),
        DataSelector::SingularForcing { c, k, alpha } => {
            let (c, k, p) = (*c, *k, alpha + gamma.value());
            let base = Point::origin(n, t_end);
            (
                Arc::new(move |x: &[f64], t: f64| {
                    let d = intrinsic_distance(&Point::new(x, t), &base, gamma);
                    c + k * d.powf(p)
                }),
                zero,
            )
        }
    })
}

/// Status of one check in a [`SuiteReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub mandatory: bool,
    pub measured: Value,
    pub tolerance: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    /// Wall-clock seconds; not serialized so outputs stay deterministic.
    #[serde(skip)]
    pub runtime: Option<f64>,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, measured: Value, tolerance: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            mandatory: true,
            measured,
            tolerance: tolerance.into(),
            detail: String::new(),
            runtime: None,
        }
    }

    pub fn info(name: impl Into<String>, measured: Value) -> Self {
        Check { name: name.into(), status: Status::Info, mandatory: false, measured, tolerance: String::new(), detail: String::new(), runtime: None }
    }

    pub fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub name: String,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn new(name: impl Into<String>) -> Self {
        SuiteReport { schema_version: SCHEMA_VERSION, name: name.into(), checks: vec![], pass: true }
    }

    pub fn push(&mut self, c: Check) {
        if c.mandatory && c.status == Status::Fail {
            self.pass = false;
        }
        self.checks.push(c);
    }

    pub fn extend(&mut self, other: SuiteReport) {
        for c in other.checks {
            self.push(c);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: SuiteReport,
    pub solve: Option<SolveResult>,
    pub fits: Vec<RegularityReport>,
    pub certificates: Vec<CertificateReport>,
    pub convergence: Option<ConvergenceTable>,
}

/// Which parts of a config to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub solve: bool,
    pub fits: bool,
    pub certificates: bool,
    pub comparison: bool,
    pub convergence: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { solve: true, fits: true, certificates: true, comparison: true, convergence: true };
    pub const SOLVE: Stages = Stages { solve: true, fits: false, certificates: false, comparison: false, convergence: false };
    pub const FIT: Stages = Stages { solve: true, fits: true, certificates: false, comparison: false, convergence: false };
    pub const CERTIFY: Stages = Stages { solve: false, fits: false, certificates: true, comparison: false, convergence: false };
    pub const SUITE: Stages = Stages { solve: false, fits: false, certificates: false, comparison: true, convergence: false };
    pub const CONVERGE: Stages = Stages { solve: false, fits: false, certificates: false, comparison: false, convergence: true };
}

/// Samples the catalog field onto a grid of width `h` at 17 levels of the
/// problem window.
fn analytic_field(cfg: &ExperimentConfig, exact: &ScalarFn, h: f64) -> Result<SampledField, HarnessError> {
    let space = SpatialGrid::new(cfg.problem.dim, h, cfg.grid.radius).map_err(stage("analytic sampling"))?;
    let g = &cfg.grid;
    let times: Vec<f64> = (0..=16).map(|k| if k == 16 { g.t_start + g.horizon } else { g.t_start + g.horizon * k as f64 / 16.0 }).collect();
    SampledField::from_fn(space, times, |x, t| exact(x, t)).map_err(stage("analytic sampling"))
}

/// The function subtracted before fitting.
fn reduction_fn(cfg: &ExperimentConfig, red: Reduction, boundary: &ScalarFn) -> Option<ScalarFn> {
    let face = |b: ScalarFn| -> ScalarFn {
        Arc::new(move |x: &[f64], t: f64| {
            let mut y = x.to_vec();
            let n = y.len();
            y[n - 1] = 0.0;
            b(&y, t)
        })
    };
    match red {
        Reduction::None => None,
        Reduction::FaceData => Some(face(boundary.clone())),
        Reduction::CatalogProfile => match &cfg.problem.data {
            DataSelector::PowerProfile { .. } => Some(Arc::new(|_, _| 1.0)),
            DataSelector::TimeLinearProfile { linear } => {
                let l = linear.clone();
                Some(Arc::new(move |x: &[f64], t: f64| {
                    let n = x.len();
                    let c = |i: usize| l.get(i).copied().unwrap_or(0.0);
                    c(0) + t * x[n - 1] + x.iter().enumerate().map(|(i, xi)| c(i + 1) * xi).sum::<f64>()
                }))
            }
            _ => Some(face(boundary.clone())),
        },
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| HarnessError::Io { path, source: e })
}

/// Final-time slice as CSV: `x_1..x_n, t, u[, exact, error]`.
pub fn solution_csv(field: &SampledField, exact: Option<&ScalarFn>) -> Result<String, HarnessError> {
    let n = field.space.dim;
    let k = field.levels() - 1;
    let t = field.times[k];
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    header.extend(["t".into(), "u".into()]);
    if exact.is_some() {
        header.extend(["exact".into(), "error".into()]);
    }
    w.write_record(&header).map_err(stage("csv"))?;
    for idx in 0..field.space.len() {
        let x = field.space.coords(idx);
        let v = field.value(k, idx);
        let mut row: Vec<String> = x[..n].iter().map(|c| format!("{c:e}")).collect();
        row.push(format!("{t:e}"));
        row.push(format!("{v:e}"));
        if let Some(e) = exact {
            let ex = e(&x[..n], t);
            row.push(format!("{ex:e}"));
            row.push(format!("{:e}", v - ex));
        }
        w.write_record(&row).map_err(stage("csv"))?;
    }
    String::from_utf8(w.into_inner().map_err(stage("csv"))?).map_err(stage("csv"))
}

/// Maximum `|u − exact|` over every stored sample.
pub fn max_error(field: &SampledField, exact: &ScalarFn) -> f64 {
    field.samples().map(|(_, _, p, v)| (v - exact(p.space(), p.t)).abs()).fold(0.0, f64::max)
}

/// Runs the requested stages and writes artifacts to `out` if given.
pub fn run_experiment(cfg: &ExperimentConfig, stages: Stages, out: Option<&Path>) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.into(), source: e })?;
    }
    let gamma = cfg.gamma()?;
    let prob = cfg.build_problem()?;
    let exact = cfg.exact_field(gamma);
    let mut report = SuiteReport::new(cfg.name.clone());
    let mut output = ExperimentOutput { report: SuiteReport::new(cfg.name.clone()), solve: None, fits: vec![], certificates: vec![], convergence: None };

    let want_solve = stages.solve || (stages.fits && (!cfg.analyses.fits.is_empty() || cfg.analyses.lipschitz || cfg.analyses.hopf));
    if want_solve {
        let started = Instant::now();
        let res = solve_cauchy_dirichlet(&prob, &cfg.scheme_config()).map_err(stage("solve"))?;
        let mut c = Check::info(
            "solve",
            json!({ "dt": res.dt, "steps": res.grid.steps, "stability_margin": res.stability_margin, "levels_stored": res.field.levels() }),
        );
        c.runtime = Some(started.elapsed().as_secs_f64());
        report.push(c);
        let v = res.envelope.violations(&res.field);
        report.push(Check::new(
            "perron_envelope",
            v == 0,
            json!({ "violations": v, "forcing_sup": res.envelope.forcing_sup, "boundary_sup": res.envelope.boundary_sup }),
            "0 violations",
        ));
        if let Some(e) = &exact {
            report.push(Check::info("max_error", json!(max_error(&res.field, e))));
        }
        if let Some(dir) = out {
            write_text(dir, "solution_final.csv", &solution_csv(&res.field, exact.as_ref())?)?;
        }
        output.solve = Some(res);
    }

    if stages.fits {
        for (i, req) in cfg.analyses.fits.iter().enumerate() {
            let raw = match (&req.field, &output.solve) {
                (FitSource::Solved, Some(s)) => s.field.clone(),
                (FitSource::Solved, None) => return Err(HarnessError::Stage { stage: "fit", message: "no solved field".into() }),
                (FitSource::Analytic { h }, _) => analytic_field(cfg, exact.as_ref().expect("validated"), *h)?,
            };
            let field = match reduction_fn(cfg, req.reduction, &prob.boundary) {
                Some(sub) => raw.map(|v, x, t| v - sub(x, t)).map_err(stage("fit"))?,
                None => raw,
            };
            let base = Point::origin(cfg.problem.dim, field.final_time());
            let rep = regularity_report(&field, &base, req.order, req.levels[0]..=req.levels[1], gamma, Some(&prob.op)).map_err(stage("fit"))?;
            let name = format!("fit_{i}_order{}", req.order);
            let mut measured = json!({ "levels": rep.levels.len() });
            if let Some(e) = &rep.estimate {
                measured = json!({ "alpha": e.alpha, "alpha_raw": e.alpha_raw, "r_squared": e.r_squared, "exact_polynomial": e.exact_polynomial, "levels": e.levels });
            }
            let mut c = Check::info(name.clone(), measured);
            if let Some(err) = &rep.estimate_error {
                c = c.with_detail(err.clone());
            }
            report.push(c);
            if let Some(dir) = out {
                let mut buf = Vec::new();
                rep.write_csv(&mut buf).map_err(stage("fit"))?;
                write_text(dir, &format!("{name}.csv"), &String::from_utf8_lossy(&buf))?;
                write_text(dir, &format!("{name}.json"), &rep.to_json().map_err(stage("fit"))?)?;
            }
            output.fits.push(rep);
        }
        if let Some(res) = &output.solve {
            if cfg.analyses.lipschitz {
                let l = check_lipschitz_bound(&res.field, res.field.sup_norm(), res.envelope.forcing_sup, gamma).map_err(stage("lipschitz"))?;
                report.push(Check::new("lipschitz_bound", l.pass, json!({ "constant": l.constant, "samples": l.samples }), "finite"));
            }
            if cfg.analyses.hopf {
                let hcheck = check_hopf_bound(&res.field, gamma).map_err(stage("hopf"))?;
                report.push(Check::new(
                    "hopf_bound",
                    hcheck.pass,
                    json!({ "constant": hcheck.constant, "probe_value": hcheck.probe_value, "zero_field": hcheck.zero_field, "degenerate_probe": hcheck.degenerate_probe }),
                    "C > 0",
                ));
            }
        }
    }

    if stages.certificates {
        for req in &cfg.analyses.certificates {
            let g = match req.gamma {
                Some(v) => Gamma::new(v).map_err(|e| HarnessError::Config(e.to_string()))?,
                None => gamma,
            };
            let (suite, certs) = certificate_suite(req.kind, g, cfg.problem.dim, cfg.ellipticity()?, req.interior_samples).map_err(stage("certify"))?;
            report.extend(suite);
            output.certificates.extend(certs);
        }
        if let Some(dir) = out {
            if !output.certificates.is_empty() {
                write_text(dir, "certificates.json", &serde_json::to_string_pretty(&output.certificates).expect("serializes"))?;
            }
        }
    }

    if stages.comparison {
        if let Some(c) = &cfg.analyses.comparison {
            report.extend(comparison_suite(&prob, &cfg.scheme_config(), c.trials, cfg.seed).map_err(stage("comparison"))?);
        }
    }

    if stages.convergence {
        if let Some(c) = &cfg.analyses.convergence {
            let table = convergence_study(&prob, exact.as_ref().expect("validated"), &c.resolutions, &cfg.scheme_config()).map_err(stage("convergence"))?;
            report.push(Check::info("convergence", serde_json::to_value(&table).expect("serializes")));
            if let Some(dir) = out {
                write_text(dir, "convergence.csv", &table.to_csv().map_err(stage("convergence"))?)?;
            }
            output.convergence = Some(table);
        }
    }

    if let Some(dir) = out {
        write_text(dir, "summary.json", &report.to_json())?;
    }
    output.report = report;
    Ok(output)
}

/// Draws a random smooth function on the problem domain.
fn random_mode(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, f64, f64, f64) {
    let k: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    (k, rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..0.5))
}

/// Ordered-data trials: `g₁ = g + mode`, `g₂ = g₁ + bump ≥ g₁`, marched in
/// lockstep; counts nodes with `u₁ > u₂` at every step. Trial 0 uses a zero
/// bump and must give identical fields. A final negative control requests a
/// time step four times the monotonicity bound and expects a refusal.
pub fn comparison_suite(base: &Problem, cfg: &SchemeConfig, trials: usize, seed: u64) -> Result<SuiteReport, SolverError> {
    let mut rep = SuiteReport::new(format!("comparison gamma={}", base.gamma.value()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = base.dim;
    let r = base.radius;
    let mut total_violations = 0usize;
    let mut envelope_violations = 0usize;
    let mut identical = true;
    let mut nodes_compared = 0usize;
    for trial in 0..trials {
        let (k, w, phase, amp) = random_mode(&mut rng, n);
        let b = base.boundary.clone();
        let g1: ScalarFn = Arc::new(move |x: &[f64], t: f64| {
            let arg: f64 = x.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() + w * t + phase;
            b(x, t) + amp * arg.sin()
        });
        let bump_amp = if trial == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        let center: Vec<f64> = (0..n).map(|i| if i + 1 == n { rng.random_range(0.0..r) } else { rng.random_range(-r..r) }).collect();
        let width = rng.random_range(0.2..0.6) * r;
        let g1c = g1.clone();
        let g2: ScalarFn = Arc::new(move |x: &[f64], t: f64| {
            let d2: f64 = x.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum();
            g1c(x, t) + bump_amp * (1.0 - d2 / (width * width)).max(0.0)
        });
        let p1 = base.clone().with_boundary(g1);
        let p2 = base.clone().with_boundary(g2);
        let mut m1 = Marcher::new(&p1, cfg)?;
        let mut m2 = Marcher::new(&p2, cfg)?;
        loop {
            let (s1, s2) = (m1.state(), m2.state());
            let scale = 1.0 + s1.iter().chain(s2).fold(0.0f64, |a, v| a.max(v.abs()));
            total_violations += s1.iter().zip(s2).filter(|(a, b)| **a > **b + 1e-12 * scale).count();
            if trial == 0 && s1 != s2 {
                identical = false;
            }
            nodes_compared += s1.len();
            let t = m1.time();
            for m in [&m1, &m2] {
                let env = m.envelope();
                envelope_violations += m.state().iter().filter(|v| v.abs() > env.upper(t)).count();
            }
            let a = m1.advance()?;
            let b = m2.advance()?;
            if !(a && b) {
                break;
            }
        }
    }
    rep.push(Check::new(
        "ordering_violations",
        total_violations == 0,
        json!({ "violations": total_violations, "trials": trials, "node_steps": nodes_compared }),
        "0",
    ));
    rep.push(Check::new("identical_data_identical_fields", identical, json!(identical), "bitwise equal"));
    rep.push(Check::new("perron_envelope", envelope_violations == 0, json!({ "violations": envelope_violations }), "0"));
    let mut bad = cfg.clone();
    bad.cfl_safety = 4.0;
    bad.dt_override = None;
    let refused = matches!(Marcher::new(base, &bad), Err(SolverError::NonMonotone { .. }));
    rep.push(Check::new("negative_control_non_monotone_dt_refused", refused, json!(refused), "refused"));
    Ok(rep)
}

/// One row of a [`ConvergenceTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub dt: f64,
    pub max_error: f64,
    /// `log₂(e_{previous}/e_h)` scaled by the mesh ratio.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["h", "dt", "max_error", "observed_order"])?;
        for r in &self.rows {
            w.write_record([format!("{:e}", r.h), format!("{:e}", r.dt), format!("{:e}", r.max_error), r.observed_order.map(|o| format!("{o}")).unwrap_or_default()])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf8"))
    }

    /// Smallest pairwise observed order.
    pub fn min_order(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.observed_order).reduce(f64::min)
    }
}

/// Solves at each `h` and measures the max error over all stored samples.
pub fn convergence_study(prob: &Problem, exact: &ScalarFn, resolutions: &[f64], cfg: &SchemeConfig) -> Result<ConvergenceTable, SolverError> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &h in resolutions {
        let mut c = cfg.clone();
        c.h = h;
        let res = solve_cauchy_dirichlet(prob, &c)?;
        let e = max_error(&res.field, exact);
        let order = rows.last().map(|p| (p.max_error / e).ln() / (p.h / h).ln());
        rows.push(ConvergenceRow { h, dt: res.dt, max_error: e, observed_order: order });
    }
    Ok(ConvergenceTable { rows })
}

/// Upper end of the `β` search.
pub const BETA_CAP: f64 = 65_536.0;

fn cert_check(r: &CertificateReport, expect_pass: bool) -> Check {
    let measured = json!({
        "min": r.min_value, "max": r.max_value, "worst_value": r.worst_value,
        "worst_point": r.worst_point.space().iter().copied().chain([r.worst_point.t]).collect::<Vec<f64>>(),
        "violations": r.violations, "samples": r.samples, "parameters": r.parameters,
    });
    let tol = if expect_pass { r.inequality.clone() } else { format!("fails: {}", r.inequality) };
    Check::new(r.name.clone(), r.pass == expect_pass, measured, tol)
}

/// Runs one barrier certificate with the parameter selection described in
/// the guide, plus its negative control.
pub fn certificate_suite(
    kind: CertificateKind,
    gamma: Gamma,
    dim: usize,
    e: EllipticityPair,
    interior: usize,
) -> Result<(SuiteReport, Vec<CertificateReport>), crate::barriers::BarrierError> {
    let mut rep = SuiteReport::new(format!("{kind:?} gamma={}", gamma.value()));
    let mut certs = Vec::new();
    let g = gamma.value();
    match kind {
        CertificateKind::Lipschitz => {
            let (beta, m) = lipschitz_parameters(gamma, dim, e);
            let v = lipschitz_barrier(m, beta, gamma, dim, e)?;
            let s_int = Sampler::new(Domain::HalfCylinder, dim, gamma, interior);
            let s_lat = Sampler::new(Domain::Lateral, dim, gamma, interior / 8);
            let s_fb = Sampler::new(Domain::FaceAndBottom, dim, gamma, interior / 8);
            let (p_int, p_lat, p_fb) = (s_int.points(), s_lat.points(), s_fb.points());
            let checks = [
                ("lipschitz_interior", Inequality::new(Form::PucciPlus, Relation::AtLeast, 2.0), &s_int, &p_int),
                ("lipschitz_lateral_order", Inequality::new(Form::Value, Relation::AtLeast, 1.0), &s_lat, &p_lat),
                ("lipschitz_face_bottom_order", Inequality::new(Form::Value, Relation::AtLeast, 0.0), &s_fb, &p_fb),
            ];
            let mut all = true;
            for (name, ineq, s, p) in checks.iter() {
                let r = verify_certificate(name, &v, ineq, e, s, p)?;
                all &= r.pass;
                rep.push(cert_check(&r, true));
                certs.push(r);
            }
            rep.push(Check::info("lipschitz_parameters", json!({ "beta": beta, "M": m, "all_pass": all })));
            // negative control: β = 1 with the same M
            let v1 = lipschitz_barrier_unchecked(m, 1.0, gamma, dim)?;
            let mut neg_pass = true;
            for (name, ineq, s, p) in checks.iter() {
                let r = verify_certificate(&format!("{name}_beta1"), &v1, ineq, e, s, p)?;
                neg_pass &= r.pass;
                certs.push(r);
            }
            rep.push(Check::new("lipschitz_negative_control_beta1", !neg_pass, json!({ "certificate_passed": neg_pass }), "fails"));
        }
        CertificateKind::HopfSingular => {
            let th = singular_beta_threshold(gamma, dim, e);
            let s = Sampler::new(Domain::SingularAnnulus, dim, gamma, interior);
            let pts = s.points();
            let sign = Inequality::new(Form::PucciMinus, Relation::AtMost, 0.0).normalized();
            let mut beta = 2.0 * th;
            let mut chosen = None;
            let mut last = None;
            while beta <= BETA_CAP {
                let phi = crate::barriers::ClosedFormField::new(FieldKind::SingularPhi { beta }, gamma, dim)?;
                let r = verify_certificate("hopf_singular", &phi, &sign, e, &s, &pts)?;
                if r.pass {
                    chosen = Some(beta);
                    last = Some((r, phi));
                    break;
                }
                last = Some((r, phi));
                beta *= 2.0;
            }
            let (r, phi) = last.expect("at least one attempt");
            rep.push(cert_check(&r, true).with_detail(format!("beta search from {} doubling to {BETA_CAP}; chosen {chosen:?}", 2.0 * th)));
            certs.push(r);
            let b = match &phi.kind {
                FieldKind::SingularPhi { beta } => *beta,
                _ => unreachable!(),
            };
            let chain = Inequality::new(Form::PucciMinus, Relation::AtMost, singular_chain_bound(b, gamma, dim, e)).normalized();
            let r = verify_certificate("hopf_singular_chain_bound", &phi, &chain, e, &s, &pts)?;
            rep.push(cert_check(&r, true));
            certs.push(r);
            let v = hopf_barrier_singular_unchecked(b, gamma, dim)?;
            let r = verify_certificate("hopf_singular_barrier", &v, &sign, e, &s, &pts)?;
            rep.push(cert_check(&r, true));
            certs.push(r);
            let low = th / 4.0;
            let phi = crate::barriers::ClosedFormField::new(FieldKind::SingularPhi { beta: low }, gamma, dim)?;
            let r = verify_certificate("hopf_singular_negative_control", &phi, &sign, e, &s, &pts)?;
            rep.push(cert_check(&r, false));
            certs.push(r);
        }
        CertificateKind::HopfDegenerate => {
            let delta = e.lambda / (40.0 * e.big_lambda);
            let (_, b_min) = degenerate_thresholds(gamma, delta, dim, e);
            let s = Sampler::new(Domain::DegenerateAnnulus, dim, gamma, interior);
            let pts = s.points();
            let sign = Inequality::new(Form::PucciMinus, Relation::AtMost, 0.0).normalized();
            let mut beta = 2.0 * b_min;
            let mut tried = Vec::new();
            let mut result = None;
            while beta <= BETA_CAP {
                let parts = hopf_barrier_degenerate_unchecked(beta, delta, gamma, dim)?;
                let r = verify_certificate("hopf_degenerate", &parts.w, &sign, e, &s, &pts)?;
                tried.push(json!({ "beta": beta, "max": r.max_value, "violations": r.violations }));
                let pass = r.pass;
                result = Some((r, parts, beta));
                if pass {
                    break;
                }
                beta *= 2.0;
            }
            let (r, parts, b) = result.expect("at least one attempt");
            rep.push(cert_check(&r, true).with_detail(format!("delta = {delta}; beta search from {} doubling to {BETA_CAP}", 2.0 * b_min)));
            rep.push(Check::info("hopf_degenerate_search", json!(tried)));
            certs.push(r);
            let xi_bound = Inequality::new(Form::PucciMinus, Relation::AtMost, -b * b * e.lambda / 6.0).normalized();
            let r = verify_certificate("hopf_degenerate_xi_bound", &parts.xi, &xi_bound, e, &s, &pts)?;
            rep.push(cert_check(&r, true));
            certs.push(r);
            let psi_bound = Inequality::new(Form::PucciMinus, Relation::AtMost, 2.0 * b * b * e.big_lambda).normalized();
            let r = verify_certificate("hopf_degenerate_psi_bound", &parts.psi, &psi_bound, e, &s, &pts)?;
            rep.push(cert_check(&r, true));
            certs.push(r);
            let neg = hopf_barrier_degenerate_unchecked(1.0, delta, gamma, dim)?;
            let r = verify_certificate("hopf_degenerate_negative_control", &neg.w, &sign, e, &s, &pts)?;
            rep.push(cert_check(&r, false));
            certs.push(r);
            let _ = g;
        }
    }
    Ok((rep, certs))
}

/// Registered operators, barriers, exact solutions and data selectors.
pub fn catalog_listing() -> String {
    let mut s = String::from("operators:\n");
    for (k, d) in OperatorSpec::registry() {
        s += &format!("  {k:<28} {d}\n");
    }
    s += "barriers:\n";
    for (k, d) in CertificateKind::ALL {
        let key = serde_json::to_value(k).expect("serializes");
        s += &format!("  {:<28} {d}\n", key.as_str().unwrap_or_default());
    }
    s += "data:\n";
    for (k, d) in DataSelector::NAMES {
        s += &format!("  {k:<28} {d}\n");
    }
    s
}

/// Parameters echoed into reports.
pub fn describe_problem(cfg: &ExperimentConfig) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    m.insert("gamma".into(), json!(cfg.problem.gamma));
    m.insert("operator".into(), json!(cfg.problem.operator));
    m.insert("dim".into(), json!(cfg.problem.dim));
    m.insert("h".into(), json!(cfg.grid.h));
    m
}
