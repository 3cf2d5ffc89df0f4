//! Symmetric matrices, Pucci's extremal operators and the registry of
//! uniformly parabolic operators `F(M, x, t)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Gamma, GeometryError, Point, SampledField, MAX_DIM};

#[derive(Debug, Error, PartialEq)]
pub enum OperatorError {
    #[error("ellipticity constants must satisfy 0 < lambda <= Lambda, got ({0}, {1})")]
    InvalidEllipticity(f64, f64),
    #[error("unknown operator key `{0}` (expected laplacian, pucci+, pucci-, or bellman:<inf|sup>:...)")]
    UnknownKey(String),
    #[error("malformed operator key `{key}`: {reason}")]
    MalformedKey { key: String, reason: String },
    #[error("dimension mismatch: operator expects {expected}, matrix has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("coefficient {value} of {what} lies outside [{lambda}, {big_lambda}]")]
    CoefficientOutOfRange { what: String, value: f64, lambda: f64, big_lambda: f64 },
    #[error("grid too small for the stencil: {0}")]
    GridTooSmall(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Dense symmetric `n×n` matrix, `n ≤ 3`. Only the upper triangle is stored
/// independently; reads mirror it, so symmetry holds by construction.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    m: [[f64; MAX_DIM]; MAX_DIM],
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<f64>> = (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect();
        write!(f, "SymMatrix{rows:?}")
    }
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim));
        SymMatrix { dim, m: [[0.0; MAX_DIM]; MAX_DIM] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut s = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            s.m[i][i] = v;
        }
        s
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle `i ≤ j`.
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                s.set(i, j, f(i, j));
            }
        }
        s
    }

    /// `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.m[i][j]
        } else {
            self.m[j][i]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.m[a][b] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.m[i][i]).sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_fn(self.dim, |i, j| c * self.get(i, j))
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_fn(self.dim, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (i + 1..self.dim).all(|j| self.m[i][j] == 0.0))
    }

    pub fn diagonal_entries(&self) -> [f64; MAX_DIM] {
        let mut d = [0.0; MAX_DIM];
        for (i, v) in d.iter_mut().enumerate().take(self.dim) {
            *v = self.m[i][i];
        }
        d
    }

    pub fn max_abs_entry(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                best = best.max(self.m[i][j].abs());
            }
        }
        best
    }

    /// Eigenvalues in no particular order; only the first `dim` are meaningful.
    pub fn eigenvalues(&self) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        if self.is_diagonal() {
            return self.diagonal_entries();
        }
        match self.dim {
            1 => out[0] = self.m[0][0],
            2 => {
                let e = Matrix2::new(self.get(0, 0), self.get(0, 1), self.get(1, 0), self.get(1, 1)).symmetric_eigenvalues();
                out[0] = e[0];
                out[1] = e[1];
            }
            _ => {
                let e = Matrix3::from_fn(|i, j| self.get(i, j)).symmetric_eigenvalues();
                out.copy_from_slice(e.as_slice());
            }
        }
        out
    }

    /// Spectral norm `max |e_i|`.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues()[..self.dim].iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// `xᵀ M x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += x[i] * self.get(i, j) * x[j];
            }
        }
        s
    }
}

/// The ellipticity constants `0 < λ ≤ Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityPair {
    pub lambda: f64,
    pub big_lambda: f64,
}

impl EllipticityPair {
    pub fn new(lambda: f64, big_lambda: f64) -> Result<Self, OperatorError> {
        if lambda > 0.0 && big_lambda >= lambda && big_lambda.is_finite() {
            Ok(EllipticityPair { lambda, big_lambda })
        } else {
            Err(OperatorError::InvalidEllipticity(lambda, big_lambda))
        }
    }

    /// Whether a diffusion coefficient is admissible.
    pub fn admits(&self, a: f64) -> bool {
        a >= self.lambda && a <= self.big_lambda
    }
}

#[inline]
fn pucci_from_eigs(eigs: &[f64], up: f64, down: f64) -> f64 {
    eigs.iter().map(|&e| if e > 0.0 { up * e } else { down * e }).sum()
}

/// `ℳ⁺(M) = sup_{λI ≤ A ≤ ΛI} tr(AM) = Λ Σ e⁺ − λ Σ e⁻`.
pub fn pucci_plus(m: &SymMatrix, e: EllipticityPair) -> f64 {
    let eig = m.eigenvalues();
    pucci_from_eigs(&eig[..m.dim()], e.big_lambda, e.lambda)
}

/// `ℳ⁻(M) = inf_{λI ≤ A ≤ ΛI} tr(AM) = λ Σ e⁺ − Λ Σ e⁻`.
pub fn pucci_minus(m: &SymMatrix, e: EllipticityPair) -> f64 {
    let eig = m.eigenvalues();
    pucci_from_eigs(&eig[..m.dim()], e.lambda, e.big_lambda)
}

/// A scalar function of `(x, t)`.
pub type ScalarFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A coefficient that is either a constant (serializable, usable from the CLI)
/// or an arbitrary closure.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Field(ScalarFn),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "{c}"),
            Coefficient::Field(_) => write!(f, "<field>"),
        }
    }
}

impl Coefficient {
    pub fn field(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Field(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Field(f) => f(x, t),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::Constant(c)
    }
}

/// One linear operator `M ↦ Σ a_i(x,t) M_ii + c(x,t)` of a Bellman family.
#[derive(Debug, Clone)]
pub struct LinearMember {
    pub diag: Vec<Coefficient>,
    pub source: Coefficient,
}

impl LinearMember {
    pub fn constant(diag: &[f64], source: f64) -> Self {
        LinearMember { diag: diag.iter().map(|&a| a.into()).collect(), source: source.into() }
    }

    #[inline]
    fn apply_diag(&self, d: &[f64], x: &[f64], t: f64) -> f64 {
        self.diag.iter().zip(d).map(|(a, v)| a.eval(x, t) * v).sum::<f64>() + self.source.eval(x, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Concave.
    Inf,
    /// Convex.
    Sup,
}

/// Which `F` an [`OperatorSpec`] stands for.
#[derive(Debug, Clone)]
pub enum OperatorKind {
    Laplacian,
    PucciPlus,
    PucciMinus,
    /// `inf_k` or `sup_k` of linear members with diagonal coefficients.
    Bellman { combine: Combine, members: Vec<LinearMember> },
    /// A single linear member with variable coefficients, compared against its
    /// value frozen at `base`; its oscillation moduli are derived in closed form.
    FrozenPerturbation { member: LinearMember, base: Point },
}

/// An operator `F` with its ellipticity pair.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub ellipticity: EllipticityPair,
    /// Registry key the spec was parsed from, if any.
    pub key: Option<String>,
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, ellipticity: EllipticityPair) -> Result<Self, OperatorError> {
        let spec = OperatorSpec { kind, ellipticity, key: None };
        spec.validate_constants()?;
        Ok(spec)
    }

    pub fn laplacian(e: EllipticityPair) -> Result<Self, OperatorError> {
        Self::new(OperatorKind::Laplacian, e)
    }

    /// Parses a registry key: `laplacian`, `pucci+`, `pucci-`, or
    /// `bellman:<inf|sup>:a11,a22[@c];b11,b22[@c];...`.
    pub fn from_key(key: &str, e: EllipticityPair) -> Result<Self, OperatorError> {
        let malformed = |reason: &str| OperatorError::MalformedKey { key: key.to_string(), reason: reason.to_string() };
        let kind = match key {
            "laplacian" => OperatorKind::Laplacian,
            "pucci+" => OperatorKind::PucciPlus,
            "pucci-" => OperatorKind::PucciMinus,
            k if k.starts_with("bellman:") => {
                let mut parts = k.splitn(3, ':').skip(1);
                let combine = match parts.next() {
                    Some("inf") => Combine::Inf,
                    Some("sup") => Combine::Sup,
                    _ => return Err(malformed("expected `inf` or `sup` after `bellman:`")),
                };
                let body = parts.next().ok_or_else(|| malformed("missing member list"))?;
                let mut members = Vec::new();
                for m in body.split(';').filter(|s| !s.trim().is_empty()) {
                    let (coeffs, source) = match m.split_once('@') {
                        Some((c, s)) => (c, s.trim().parse::<f64>().map_err(|_| malformed("bad source term"))?),
                        None => (m, 0.0),
                    };
                    let diag = coeffs
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| malformed("bad coefficient"))?;
                    members.push(LinearMember::constant(&diag, source));
                }
                if members.is_empty() {
                    return Err(malformed("empty member list"));
                }
                OperatorKind::Bellman { combine, members }
            }
            other => return Err(OperatorError::UnknownKey(other.to_string())),
        };
        let mut spec = Self::new(kind, e)?;
        spec.key = Some(key.to_string());
        Ok(spec)
    }

    /// Keys understood by [`OperatorSpec::from_key`], for `--list-catalog`.
    pub fn registry() -> &'static [(&'static str, &'static str)] {
        &[
            ("laplacian", "tr(M); needs lambda <= 1 <= Lambda"),
            ("pucci+", "maximal Pucci operator M+"),
            ("pucci-", "minimal Pucci operator M-"),
            ("bellman:<inf|sup>:a,b[@c];...", "inf/sup of diagonal linear operators with constant source"),
        ]
    }

    fn validate_constants(&self) -> Result<(), OperatorError> {
        let e = self.ellipticity;
        let check = |what: String, a: f64| {
            if e.admits(a) {
                Ok(())
            } else {
                Err(OperatorError::CoefficientOutOfRange { what, value: a, lambda: e.lambda, big_lambda: e.big_lambda })
            }
        };
        let members: &[LinearMember] = match &self.kind {
            OperatorKind::Laplacian => return check("laplacian".into(), 1.0),
            OperatorKind::PucciPlus | OperatorKind::PucciMinus => return Ok(()),
            OperatorKind::Bellman { members, .. } => members,
            OperatorKind::FrozenPerturbation { member, .. } => std::slice::from_ref(member),
        };
        let dim = members[0].diag.len();
        for (k, m) in members.iter().enumerate() {
            if m.diag.len() != dim {
                return Err(OperatorError::DimensionMismatch { expected: dim, found: m.diag.len() });
            }
            for (i, a) in m.diag.iter().enumerate() {
                if let Coefficient::Constant(v) = a {
                    check(format!("member {k}, entry {i}"), *v)?;
                }
            }
        }
        Ok(())
    }

    /// Spatial dimension fixed by the operator's coefficients, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match &self.kind {
            OperatorKind::Bellman { members, .. } => Some(members[0].diag.len()),
            OperatorKind::FrozenPerturbation { member, .. } => Some(member.diag.len()),
            _ => None,
        }
    }

    /// Whether `F` is concave (`Some(true)`), convex (`Some(false)`) or both
    /// (linear operators report concave).
    pub fn is_concave(&self) -> Option<bool> {
        match &self.kind {
            OperatorKind::Laplacian | OperatorKind::FrozenPerturbation { .. } => Some(true),
            OperatorKind::PucciPlus => Some(false),
            OperatorKind::PucciMinus => Some(true),
            OperatorKind::Bellman { combine, members } => {
                if members.len() == 1 {
                    Some(true)
                } else {
                    Some(*combine == Combine::Inf)
                }
            }
        }
    }

    /// `F(M, x, t)` for a diagonal `M = diag(d)`. This is the form the
    /// explicit scheme uses: it never builds mixed second differences.
    #[inline]
    pub fn eval_diagonal(&self, d: &[f64], x: &[f64], t: f64) -> f64 {
        let e = self.ellipticity;
        match &self.kind {
            OperatorKind::Laplacian => d.iter().sum(),
            OperatorKind::PucciPlus => pucci_from_eigs(d, e.big_lambda, e.lambda),
            OperatorKind::PucciMinus => pucci_from_eigs(d, e.lambda, e.big_lambda),
            OperatorKind::Bellman { combine, members } => {
                let vals = members.iter().map(|m| m.apply_diag(d, x, t));
                match combine {
                    Combine::Inf => vals.fold(f64::INFINITY, f64::min),
                    Combine::Sup => vals.fold(f64::NEG_INFINITY, f64::max),
                }
            }
            OperatorKind::FrozenPerturbation { member, .. } => member.apply_diag(d, x, t),
        }
    }

    /// Oscillation moduli `(β¹(x,t), β²(x,t))` relative to the frozen point,
    /// with `|F(M,x,t) − F(M,x₀,t₀)| ≤ β¹‖M‖ + β²`.
    ///
    /// For linear members `β¹ = Σ_i |a_i(x,t) − a_i(x₀,t₀)|` and
    /// `β² = |c(x,t) − c(x₀,t₀)|`; for inf/sup families the maximum over
    /// members bounds the difference. Constant-coefficient kinds return zero.
    pub fn moduli(&self, x: &[f64], t: f64, base: &Point) -> (f64, f64) {
        let members: &[LinearMember] = match &self.kind {
            OperatorKind::Bellman { members, .. } => members,
            OperatorKind::FrozenPerturbation { member, .. } => std::slice::from_ref(member),
            _ => return (0.0, 0.0),
        };
        let (x0, t0) = (base.space(), base.t);
        let mut b1: f64 = 0.0;
        let mut b2: f64 = 0.0;
        for m in members {
            let d: f64 = m.diag.iter().map(|a| (a.eval(x, t) - a.eval(x0, t0)).abs()).sum();
            b1 = b1.max(d);
            b2 = b2.max((m.source.eval(x, t) - m.source.eval(x0, t0)).abs());
        }
        (b1, b2)
    }

    /// The frozen point of a perturbation kind.
    pub fn base_point(&self) -> Option<Point> {
        match &self.kind {
            OperatorKind::FrozenPerturbation { base, .. } => Some(*base),
            _ => None,
        }
    }

    /// Sampled `[β^i]_{C^α(x₀,t₀)} ≈ max β^i(p) / d(p, x₀)^α` over `points`,
    /// returned as `(β¹ constant, β² constant)`.
    pub fn moduli_holder_constants(&self, base: &Point, alpha: f64, gamma: Gamma, points: &[Point]) -> (f64, f64) {
        let mut c = (0.0f64, 0.0f64);
        for p in points {
            let d = crate::geometry::intrinsic_distance(p, base, gamma);
            if d == 0.0 {
                continue;
            }
            let (b1, b2) = self.moduli(p.space(), p.t, base);
            let s = d.powf(alpha);
            c.0 = c.0.max(b1 / s);
            c.1 = c.1.max(b2 / s);
        }
        c
    }
}

/// `F(M, x, t)` for the operator described by `spec`.
pub fn eval_operator(spec: &OperatorSpec, m: &SymMatrix, x: &[f64], t: f64) -> Result<f64, OperatorError> {
    if x.len() != m.dim() {
        return Err(OperatorError::DimensionMismatch { expected: x.len(), found: m.dim() });
    }
    if let Some(d) = spec.fixed_dim() {
        if d != m.dim() {
            return Err(OperatorError::DimensionMismatch { expected: d, found: m.dim() });
        }
    }
    let e = spec.ellipticity;
    Ok(match &spec.kind {
        OperatorKind::Laplacian => m.trace(),
        OperatorKind::PucciPlus => pucci_plus(m, e),
        OperatorKind::PucciMinus => pucci_minus(m, e),
        // Linear members only read the diagonal of M.
        _ => spec.eval_diagonal(&m.diagonal_entries()[..m.dim()], x, t),
    })
}

/// A Cauchy–Dirichlet problem on `[-R,R]^(n-1) × [0,R] × [t_start, t_start + horizon]`.
#[derive(Clone)]
pub struct Problem {
    pub gamma: Gamma,
    pub op: OperatorSpec,
    pub forcing: ScalarFn,
    /// Boundary and initial data; only read on the parabolic boundary.
    pub boundary: ScalarFn,
    pub dim: usize,
    pub radius: f64,
    pub t_start: f64,
    pub horizon: f64,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("gamma", &self.gamma)
            .field("op", &self.op)
            .field("dim", &self.dim)
            .field("radius", &self.radius)
            .field("t_start", &self.t_start)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(
        gamma: Gamma,
        op: OperatorSpec,
        dim: usize,
        forcing: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        boundary: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Problem {
            gamma,
            op,
            forcing: Arc::new(forcing),
            boundary: Arc::new(boundary),
            dim,
            radius: 1.0,
            t_start: -1.0,
            horizon: 1.0,
        }
    }

    /// Sets the time window `[t_start, t_start + horizon]`.
    pub fn with_window(mut self, t_start: f64, horizon: f64) -> Self {
        self.t_start = t_start;
        self.horizon = horizon;
        self
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_boundary(mut self, g: ScalarFn) -> Self {
        self.boundary = g;
        self
    }
}

/// Second difference along `axis` at an interior node.
#[inline]
pub(crate) fn second_difference(u: &[f64], idx: usize, stride: usize, inv_h2: f64) -> f64 {
    (u[idx + stride] - 2.0 * u[idx] + u[idx - stride]) * inv_h2
}

/// Pointwise residual `u_t − x_n^γ F(D²u, x, t) − f` of a sampled field.
///
/// Uses the backward difference between consecutive time levels and the full
/// central-difference Hessian (mixed terms included) at the later level.
/// Boundary nodes and the first time level carry zero.
pub fn degenerate_residual(u: &SampledField, prob: &Problem) -> Result<SampledField, OperatorError> {
    let g = &u.space;
    if g.dim != prob.dim {
        return Err(OperatorError::DimensionMismatch { expected: prob.dim, found: g.dim });
    }
    if g.interior_len() == 0 {
        return Err(OperatorError::GridTooSmall("no interior nodes".into()));
    }
    if u.levels() < 2 {
        return Err(OperatorError::GridTooSmall("need at least two time levels".into()));
    }
    let n = g.len();
    let inv_h2 = 1.0 / (g.h * g.h);
    let mut out = vec![0.0; n * u.levels()];
    for k in 1..u.levels() {
        let (prev, cur) = (u.slice(k - 1), u.slice(k));
        let t = u.times[k];
        let dt = t - u.times[k - 1];
        for idx in 0..n {
            if g.is_boundary(idx) {
                continue;
            }
            let x = g.coords(idx);
            let x = &x[..g.dim];
            let hess = SymMatrix::from_fn(g.dim, |i, j| {
                if i == j {
                    second_difference(cur, idx, g.stride(i), inv_h2)
                } else {
                    let (si, sj) = (g.stride(i), g.stride(j));
                    (cur[idx + si + sj] - cur[idx + si - sj] - cur[idx - si + sj] + cur[idx - si - sj]) * 0.25 * inv_h2
                }
            });
            let f_val = eval_operator(&prob.op, &hess, x, t)?;
            let weight = prob.gamma.weight(x[g.dim - 1]);
            out[k * n + idx] = (cur[idx] - prev[idx]) / dt - weight * f_val - (prob.forcing)(x, t);
        }
    }
    Ok(SampledField::new(g.clone(), u.times.clone(), out)?)
}
