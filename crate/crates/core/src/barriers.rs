//! Closed-form barriers and exact solutions with analytic derivatives, plus a
//! sampled checker for their differential inequalities.
//!
//! Exponential barriers are evaluated through a *normalized* jet: the jet
//! divided by a positive scale `e^{log_scale}`. Both inequality forms used here
//! are positively homogeneous, so dividing by the scale preserves the sign and
//! keeps large `β` free of overflow and underflow.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Gamma, Point, MAX_DIM};
use crate::operators::{pucci_minus, pucci_plus, EllipticityPair, ScalarFn, SymMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum BarrierError {
    #[error("{name} = {value} violates {requirement}")]
    Threshold { name: &'static str, value: f64, requirement: String },
    #[error("dimension {0} outside 1..=3")]
    Dimension(usize),
    #[error("empty sample set for {0}")]
    EmptySample(String),
}

/// Value, time derivative, gradient and Hessian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub time: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: SymMatrix,
}

impl Jet {
    fn scaled(&self, c: f64) -> Jet {
        let mut grad = self.grad;
        grad.iter_mut().for_each(|g| *g *= c);
        Jet { value: self.value * c, time: self.time * c, grad, hess: self.hess.scale(c) }
    }

    fn plus(&self, o: &Jet) -> Jet {
        let mut grad = self.grad;
        grad.iter_mut().zip(o.grad).for_each(|(a, b)| *a += b);
        Jet { value: self.value + o.value, time: self.time + o.time, grad, hess: self.hess.add(&o.hess) }
    }
}

/// The closed-form expressions in the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Constant { c: f64 },
    /// `η = 1 − |x + e_n|^{−β}`.
    LipschitzEta { beta: f64 },
    /// `v = 2Mη − M x_n^{2−γ}`.
    LipschitzBarrier { m: f64, beta: f64 },
    /// `φ = e^{−β(|x − e_n/2|² − 4^{1−γ} t)}`.
    SingularPhi { beta: f64 },
    /// `(φ − e^{−β/4}) / (e^{−β/16} − e^{−β/4})`.
    SingularBarrier { beta: f64 },
    /// `ξ = e^{−β(|x − e_n/2|² − δ t x_n − 1/4)}`.
    DegenerateXi { beta: f64, delta: f64 },
    /// `ψ = −e^{−β(4^{2−γ} − δ) t x_n}`.
    DegeneratePsi { beta: f64, delta: f64 },
    /// `w = K(ξ + ψ)` with `K = e^{β(δ − 2·4^{2−γ})/4^{3−γ}} / (e^{−β/16} − e^{−β/4})`.
    DegenerateBarrier { beta: f64, delta: f64 },
    /// `1 − x_n^{2−ε} / ((2−ε)(1−ε))`, solving the Laplacian problem with
    /// `f = x_n^{γ−ε}`.
    PowerProfile { eps: f64 },
    /// `l(x) + t x_n + x_n^{3−γ} / ((3−γ)(2−γ))` with `l(x) = l₀ + Σ lᵢ xᵢ`,
    /// solving the homogeneous Laplacian problem.
    TimeLinearProfile { linear: Vec<f64> },
}

/// A closed-form function of `(x, t)` with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormField {
    pub kind: FieldKind,
    pub gamma: Gamma,
    pub dim: usize,
}

impl fmt::Display for ClosedFormField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} (n = {}, gamma = {})", self.kind, self.dim, self.gamma.value())
    }
}

fn offset_center(x: &[f64]) -> [f64; MAX_DIM] {
    let mut y = [0.0; MAX_DIM];
    y[..x.len()].copy_from_slice(x);
    y[x.len() - 1] -= 0.5;
    y
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn unit_jet(dim: usize) -> Jet {
    Jet { value: 1.0, time: 0.0, grad: [0.0; MAX_DIM], hess: SymMatrix::zeros(dim) }
}

impl ClosedFormField {
    pub fn new(kind: FieldKind, gamma: Gamma, dim: usize) -> Result<Self, BarrierError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(BarrierError::Dimension(dim));
        }
        Ok(ClosedFormField { kind, gamma, dim })
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let (j, log_scale) = self.normalized_jet(x, t);
        j.value * log_scale.exp()
    }

    /// Raw jet. May overflow or underflow for exponential kinds at large `β`;
    /// prefer [`ClosedFormField::normalized_jet`] for inequality checks.
    pub fn jet(&self, x: &[f64], t: f64) -> Jet {
        let (j, log_scale) = self.normalized_jet(x, t);
        j.scaled(log_scale.exp())
    }

    /// `(ĵ, s)` with `jet = e^s · ĵ`.
    pub fn normalized_jet(&self, x: &[f64], t: f64) -> (Jet, f64) {
        debug_assert_eq!(x.len(), self.dim);
        let n = self.dim;
        let g = self.gamma.value();
        let xn = x[n - 1];
        match &self.kind {
            FieldKind::Constant { c } => {
                let mut j = unit_jet(n);
                j.value = *c;
                (j, 0.0)
            }
            FieldKind::LipschitzEta { beta } => (eta_jet(x, *beta), 0.0),
            FieldKind::LipschitzBarrier { m, beta } => {
                let eta = eta_jet(x, *beta);
                let mut j = eta.scaled(2.0 * m);
                let p = 2.0 - g;
                j.value -= m * xn.powf(p);
                j.grad[n - 1] -= m * p * xn.powf(1.0 - g);
                let d = j.hess.get(n - 1, n - 1) - m * p * (1.0 - g) * xn.powf(-g);
                j.hess.set(n - 1, n - 1, d);
                (j, 0.0)
            }
            FieldKind::SingularPhi { beta } => {
                let y = offset_center(x);
                let c = 4f64.powf(1.0 - g);
                (phi_normalized(&y, n, *beta, c), -beta * (norm2(&y[..n]) - c * t))
            }
            FieldKind::SingularBarrier { beta } => {
                let y = offset_center(x);
                let c = 4f64.powf(1.0 - g);
                let log_phi = -beta * (norm2(&y[..n]) - c * t);
                let mut j = phi_normalized(&y, n, *beta, c);
                // v = (φ − a)/(b − a) = (φ/(b − a))·(1 − a/φ)
                j.value = 1.0 - (-beta / 4.0 - log_phi).exp();
                (j, log_phi - log_exp_gap(*beta))
            }
            FieldKind::DegenerateXi { beta, delta } => {
                let (j, e) = xi_normalized(x, t, *beta, *delta);
                (j, e)
            }
            FieldKind::DegeneratePsi { beta, delta } => {
                let kappa = beta * (4f64.powf(2.0 - g) - delta);
                (psi_normalized(n, xn, t, kappa), -kappa * t * xn)
            }
            FieldKind::DegenerateBarrier { beta, delta } => {
                let (xi, log_xi) = xi_normalized(x, t, *beta, *delta);
                let c = 4f64.powf(2.0 - g);
                let kappa = beta * (c - delta);
                let y = offset_center(x);
                let gap = beta * (0.25 + c * t * xn - norm2(&y[..n]));
                let psi = psi_normalized(n, xn, t, kappa).scaled((-gap).exp());
                let log_k = beta * (delta - 2.0 * c) / 4f64.powf(3.0 - g) - log_exp_gap(*beta);
                (xi.plus(&psi), log_k + log_xi)
            }
            FieldKind::PowerProfile { eps } => {
                let e = *eps;
                let mut j = unit_jet(n);
                j.value = 1.0 - xn.powf(2.0 - e) / ((2.0 - e) * (1.0 - e));
                j.grad[n - 1] = -xn.powf(1.0 - e) / (1.0 - e);
                j.hess.set(n - 1, n - 1, -xn.powf(-e));
                (j, 0.0)
            }
            FieldKind::TimeLinearProfile { linear } => {
                let mut j = unit_jet(n);
                let l0 = linear.first().copied().unwrap_or(0.0);
                j.value = l0 + t * xn + xn.powf(3.0 - g) / ((3.0 - g) * (2.0 - g));
                for i in 0..n {
                    let li = linear.get(i + 1).copied().unwrap_or(0.0);
                    j.value += li * x[i];
                    j.grad[i] = li;
                }
                j.time = xn;
                j.grad[n - 1] += t + xn.powf(2.0 - g) / (2.0 - g);
                j.hess.set(n - 1, n - 1, xn.powf(1.0 - g));
                (j, 0.0)
            }
        }
    }
}

/// `ln(e^{−β/16} − e^{−β/4})`.
fn log_exp_gap(beta: f64) -> f64 {
    -beta / 16.0 + (-(-3.0 * beta / 16.0).exp()).ln_1p()
}

fn eta_jet(x: &[f64], beta: f64) -> Jet {
    let n = x.len();
    let mut z = [0.0; MAX_DIM];
    z[..n].copy_from_slice(x);
    z[n - 1] += 1.0;
    let rho2 = norm2(&z[..n]);
    let rho = rho2.sqrt();
    let c = beta * rho.powf(-beta - 2.0);
    let mut grad = [0.0; MAX_DIM];
    for i in 0..n {
        grad[i] = c * z[i];
    }
    let hess = SymMatrix::from_fn(n, |i, j| c * ((i == j) as u8 as f64 - (beta + 2.0) * z[i] * z[j] / rho2));
    Jet { value: 1.0 - rho.powf(-beta), time: 0.0, grad, hess }
}

/// Jet of `φ/φ`, with `y = x − e_n/2` and `c = 4^{1−γ}`.
fn phi_normalized(y: &[f64; MAX_DIM], n: usize, beta: f64, c: f64) -> Jet {
    let mut grad = [0.0; MAX_DIM];
    for i in 0..n {
        grad[i] = -2.0 * beta * y[i];
    }
    let hess = SymMatrix::from_fn(n, |i, j| 4.0 * beta * beta * y[i] * y[j] - if i == j { 2.0 * beta } else { 0.0 });
    Jet { value: 1.0, time: beta * c, grad, hess }
}

/// Jet of `ξ/ξ` and `ln ξ`.
fn xi_normalized(x: &[f64], t: f64, beta: f64, delta: f64) -> (Jet, f64) {
    let n = x.len();
    let xn = x[n - 1];
    let y = offset_center(x);
    let mut grad = [0.0; MAX_DIM];
    for i in 0..n {
        grad[i] = -2.0 * beta * y[i];
    }
    grad[n - 1] += beta * delta * t;
    let hess = SymMatrix::from_fn(n, |i, j| grad[i] * grad[j] - if i == j { 2.0 * beta } else { 0.0 });
    let jet = Jet { value: 1.0, time: beta * delta * xn, grad, hess };
    (jet, -beta * (norm2(&y[..n]) - delta * t * xn - 0.25))
}

/// Jet of `ψ/|ψ|` for `ψ = −e^{−κ t x_n}`.
fn psi_normalized(n: usize, xn: f64, t: f64, kappa: f64) -> Jet {
    let mut grad = [0.0; MAX_DIM];
    grad[n - 1] = kappa * t;
    let mut hess = SymMatrix::zeros(n);
    hess.set(n - 1, n - 1, -kappa * kappa * t * t);
    Jet { value: -1.0, time: kappa * xn, grad, hess }
}

/// `max{2, (n−1)Λ/λ − 1}`; the barrier needs `β` strictly above it.
pub fn lipschitz_beta_threshold(dim: usize, e: EllipticityPair) -> f64 {
    f64::max(2.0, (dim as f64 - 1.0) * e.big_lambda / e.lambda - 1.0)
}

/// `4(4^{1−γ} + 2nΛ)/λ`, the positive root of `4^{1−γ}β − λβ²/4 + 2nΛβ`.
pub fn singular_beta_threshold(gamma: Gamma, dim: usize, e: EllipticityPair) -> f64 {
    4.0 * (4f64.powf(1.0 - gamma.value()) + 2.0 * dim as f64 * e.big_lambda) / e.lambda
}

/// `4^{1−γ}β − λβ²/4 + 2nΛβ`.
pub fn singular_chain_bound(beta: f64, gamma: Gamma, dim: usize, e: EllipticityPair) -> f64 {
    4f64.powf(1.0 - gamma.value()) * beta - 0.25 * e.lambda * beta * beta + 2.0 * dim as f64 * e.big_lambda * beta
}

/// `(δ_max, β_min)`: `δ < λ/(20Λ)` and `β > max{30(δ + 2nΛ)/λ, 4^{2−γ}/Λ}`.
pub fn degenerate_thresholds(gamma: Gamma, delta: f64, dim: usize, e: EllipticityPair) -> (f64, f64) {
    let d_max = e.lambda / (20.0 * e.big_lambda);
    let b_min = f64::max(30.0 * (delta + 2.0 * dim as f64 * e.big_lambda) / e.lambda, 4f64.powf(2.0 - gamma.value()) / e.big_lambda);
    (d_max, b_min)
}

fn require(name: &'static str, value: f64, ok: bool, requirement: String) -> Result<(), BarrierError> {
    if ok {
        Ok(())
    } else {
        Err(BarrierError::Threshold { name, value, requirement })
    }
}

/// `v = 2Mη − M x_n^{2−γ}` with the threshold on `β` enforced.
pub fn lipschitz_barrier(m: f64, beta: f64, gamma: Gamma, dim: usize, e: EllipticityPair) -> Result<ClosedFormField, BarrierError> {
    let th = lipschitz_beta_threshold(dim, e);
    require("beta", beta, beta > th, format!("beta > {th}"))?;
    require("M", m, m > 0.0, "M > 0".into())?;
    lipschitz_barrier_unchecked(m, beta, gamma, dim)
}

/// As [`lipschitz_barrier`] without the threshold, for negative controls.
pub fn lipschitz_barrier_unchecked(m: f64, beta: f64, gamma: Gamma, dim: usize) -> Result<ClosedFormField, BarrierError> {
    ClosedFormField::new(FieldKind::LipschitzBarrier { m, beta }, gamma, dim)
}

/// Parameters `(β, M)` for the Lipschitz barrier:
/// `β = 4·max{2, (n−1)Λ/λ − 1}` and `M = 1.05·max{M_lat, M_int}` where
/// `M_lat = 1 / min_{|x|=1, x_n ≥ 0}(2η − x_n^{2−γ})` makes `v ≥ 1` on the
/// lateral boundary and `M_int = 2/(λ(2−γ)(1−γ))` makes the interior margin
/// at least 2.
pub fn lipschitz_parameters(gamma: Gamma, dim: usize, e: EllipticityPair) -> (f64, f64) {
    let beta = 4.0 * lipschitz_beta_threshold(dim, e);
    let g = gamma.value();
    // On |x| = 1, |x + e_n|² = 2 + 2x_n, so the lateral quantity depends on x_n only.
    let lateral_min = (0..=100_000)
        .map(|k| {
            let s = k as f64 / 100_000.0;
            2.0 * (1.0 - (2.0 + 2.0 * s).powf(-beta / 2.0)) - s.powf(2.0 - g)
        })
        .fold(f64::INFINITY, f64::min);
    let m_lat = 1.0 / lateral_min;
    let m_int = 2.0 / (e.lambda * (2.0 - g) * (1.0 - g));
    (beta, 1.05 * m_lat.max(m_int))
}

/// `v = (φ − e^{−β/4})/(e^{−β/16} − e^{−β/4})` for `γ < 0`, threshold enforced.
pub fn hopf_barrier_singular(beta: f64, gamma: Gamma, dim: usize, e: EllipticityPair) -> Result<ClosedFormField, BarrierError> {
    require("gamma", gamma.value(), gamma.value() < 0.0, "gamma < 0".into())?;
    let th = singular_beta_threshold(gamma, dim, e);
    require("beta", beta, beta > th, format!("beta > {th}"))?;
    hopf_barrier_singular_unchecked(beta, gamma, dim)
}

pub fn hopf_barrier_singular_unchecked(beta: f64, gamma: Gamma, dim: usize) -> Result<ClosedFormField, BarrierError> {
    ClosedFormField::new(FieldKind::SingularBarrier { beta }, gamma, dim)
}

/// The pieces of the degenerate Hopf barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateHopf {
    pub xi: ClosedFormField,
    pub psi: ClosedFormField,
    pub w: ClosedFormField,
}

/// `ξ`, `ψ` and `w = K(ξ + ψ)` for `0 < γ < 1`, thresholds enforced.
pub fn hopf_barrier_degenerate(beta: f64, delta: f64, gamma: Gamma, dim: usize, e: EllipticityPair) -> Result<DegenerateHopf, BarrierError> {
    let g = gamma.value();
    require("gamma", g, g > 0.0 && g < 1.0, "0 < gamma < 1".into())?;
    let (d_max, b_min) = degenerate_thresholds(gamma, delta, dim, e);
    require("delta", delta, delta > 0.0 && delta < d_max, format!("0 < delta < {d_max}"))?;
    require("beta", beta, beta > b_min, format!("beta > {b_min}"))?;
    hopf_barrier_degenerate_unchecked(beta, delta, gamma, dim)
}

pub fn hopf_barrier_degenerate_unchecked(beta: f64, delta: f64, gamma: Gamma, dim: usize) -> Result<DegenerateHopf, BarrierError> {
    Ok(DegenerateHopf {
        xi: ClosedFormField::new(FieldKind::DegenerateXi { beta, delta }, gamma, dim)?,
        psi: ClosedFormField::new(FieldKind::DegeneratePsi { beta, delta }, gamma, dim)?,
        w: ClosedFormField::new(FieldKind::DegenerateBarrier { beta, delta }, gamma, dim)?,
    })
}

/// Exact solutions of `u_t − x_n^γ Δu = f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExactKind {
    /// `ε ∈ (0, γ]`; `C^{1,1−ε}` at the face and no better.
    PowerProfile { eps: f64 },
    /// `C^{2,1−γ}` at the face and no better.
    TimeLinearProfile {
        #[serde(default)]
        linear: Vec<f64>,
    },
}

/// A closed-form solution together with its forcing and boundary data.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: ClosedFormField,
    pub forcing: ScalarFn,
    pub boundary: ScalarFn,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactSolution").field("u", &self.u).finish_non_exhaustive()
    }
}

pub fn exact_solution(kind: &ExactKind, gamma: Gamma, dim: usize) -> Result<ExactSolution, BarrierError> {
    let g = gamma.value();
    require("gamma", g, g > 0.0 && g < 1.0, "0 < gamma < 1".into())?;
    let (field_kind, forcing): (FieldKind, ScalarFn) = match kind {
        ExactKind::PowerProfile { eps } => {
            let e = *eps;
            require("eps", e, e > 0.0 && e <= g, format!("0 < eps <= {g}"))?;
            let p = g - e;
            let f: ScalarFn = if p == 0.0 { std::sync::Arc::new(|_, _| 1.0) } else { std::sync::Arc::new(move |x: &[f64], _| x[x.len() - 1].powf(p)) };
            (FieldKind::PowerProfile { eps: e }, f)
        }
        ExactKind::TimeLinearProfile { linear } => {
            if linear.len() > dim + 1 {
                return Err(BarrierError::Threshold { name: "linear", value: linear.len() as f64, requirement: format!("at most {} coefficients", dim + 1) });
            }
            (FieldKind::TimeLinearProfile { linear: linear.clone() }, std::sync::Arc::new(|_, _| 0.0))
        }
    };
    let u = ClosedFormField::new(field_kind, gamma, dim)?;
    let uu = u.clone();
    Ok(ExactSolution { u, forcing, boundary: std::sync::Arc::new(move |x, t| uu.value(x, t)) })
}

/// Sampling domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum Domain {
    /// `Q_1^+ = (B_1 ∩ {x_n > 0}) × (−1, 0]`.
    HalfCylinder,
    /// The closed lateral piece `{|x| = 1, x_n ≥ 0} × [−1, 0]`.
    Lateral,
    /// The face `{x_n = 0}` and the bottom `{t = −1}` of `Q_1^+`, closed.
    FaceAndBottom,
    /// `{1/4 < |x − e_n/2| < √(4^{1−γ}t + 1/4), t < 0}`.
    SingularAnnulus,
    /// `{1/4 < |x − e_n/2| < √(4^{2−γ}t x_n + 1/4), t < 0}`.
    DegenerateAnnulus,
}

/// Deterministic point set over a [`Domain`]: low-discrepancy interior points
/// plus points at relative distances `offsets` from each boundary piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub domain: Domain,
    pub dim: usize,
    pub gamma: Gamma,
    pub interior: usize,
    /// Points per boundary piece and offset.
    pub boundary: usize,
    pub offsets: Vec<f64>,
}

/// Radical inverse of `k` in base `b`.
fn halton(mut k: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while k > 0 {
        f /= b as f64;
        r += f * (k % b) as f64;
        k /= b;
    }
    r
}

const PRIMES: [usize; 5] = [2, 3, 5, 7, 11];

fn unit_vector(dim: usize, a: f64, b: f64) -> [f64; MAX_DIM] {
    let mut v = [0.0; MAX_DIM];
    match dim {
        1 => v[0] = if a < 0.5 { -1.0 } else { 1.0 },
        2 => {
            let th = 2.0 * std::f64::consts::PI * a;
            v[0] = th.sin();
            v[1] = th.cos();
        }
        _ => {
            let th = 2.0 * std::f64::consts::PI * a;
            let z = 2.0 * b - 1.0;
            let s = (1.0 - z * z).max(0.0).sqrt();
            v[0] = s * th.cos();
            v[1] = s * th.sin();
            v[2] = z;
        }
    }
    v
}

impl Sampler {
    pub fn new(domain: Domain, dim: usize, gamma: Gamma, interior: usize) -> Self {
        Sampler { domain, dim, gamma, interior, boundary: 256, offsets: (1..=9).map(|k| 10f64.powi(-k)).collect() }
    }

    pub fn describe(&self) -> String {
        format!(
            "{:?}, n = {}, {} low-discrepancy points, {} points per boundary piece at relative offsets {:?}",
            self.domain, self.dim, self.interior, self.boundary, self.offsets
        )
    }

    /// Radial interval `(ρ_lo, ρ_hi)` of the annulus along direction `u` at
    /// time `t`, if nonempty.
    fn radial_interval(&self, u: &[f64; MAX_DIM], t: f64) -> Option<(f64, f64)> {
        let n = self.dim;
        let g = self.gamma.value();
        let (lo, hi) = match self.domain {
            Domain::SingularAnnulus => (0.25, (4f64.powf(1.0 - g) * t + 0.25).max(0.0).sqrt()),
            Domain::DegenerateAnnulus => {
                // ρ² < 1/4 + a(1/2 + ρ u_n) with a = 4^{2−γ} t: between the roots
                let a = 4f64.powf(2.0 - g) * t;
                let disc = a * a * u[n - 1] * u[n - 1] + 1.0 + 2.0 * a;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                (f64::max(0.25, 0.5 * (a * u[n - 1] - s)), 0.5 * (a * u[n - 1] + s))
            }
            _ => return None,
        };
        (hi > lo).then_some((lo, hi))
    }

    fn time_range(&self) -> (f64, f64) {
        let g = self.gamma.value();
        match self.domain {
            Domain::SingularAnnulus => (-3.0 / (16.0 * 4f64.powf(1.0 - g)), 0.0),
            Domain::DegenerateAnnulus => (-1.0 / 4f64.powf(2.0 - g), 0.0),
            _ => (-1.0, 0.0),
        }
    }

    fn annulus_point(&self, u: &[f64; MAX_DIM], rho: f64, t: f64) -> Point {
        let n = self.dim;
        let mut x = [0.0; MAX_DIM];
        for i in 0..n {
            x[i] = rho * u[i];
        }
        x[n - 1] += 0.5;
        Point::new(&x[..n], t)
    }

    fn param(&self, k: usize) -> [f64; 5] {
        let mut p = [0.0; 5];
        for (i, v) in p.iter_mut().enumerate() {
            *v = halton(k + 1, PRIMES[i]);
        }
        p
    }

    pub fn points(&self) -> Vec<Point> {
        let n = self.dim;
        let mut out = Vec::new();
        match self.domain {
            Domain::HalfCylinder => {
                let mut k = 0;
                while out.len() < self.interior && k < 64 * self.interior.max(1) {
                    let p = self.param(k);
                    k += 1;
                    let mut x = [0.0; MAX_DIM];
                    for i in 0..n - 1 {
                        x[i] = 2.0 * p[i] - 1.0;
                    }
                    x[n - 1] = p[n - 1];
                    if x[n - 1] > 0.0 && norm2(&x[..n]) < 1.0 {
                        out.push(Point::new(&x[..n], -p[n]));
                    }
                }
                for &off in &self.offsets {
                    for k in 0..self.boundary {
                        let p = self.param(k);
                        let u = unit_vector(n, p[0], p[1]);
                        let mut u = u;
                        u[n - 1] = u[n - 1].abs();
                        let t = -p[2];
                        // near the lateral sphere
                        let x: Vec<f64> = (0..n).map(|i| (1.0 - off) * u[i]).collect();
                        if x[n - 1] > 0.0 {
                            out.push(Point::new(&x, t));
                        }
                        // near the face
                        let mut x: Vec<f64> = (0..n).map(|i| (1.0 - off) * p[3] * u[i]).collect();
                        x[n - 1] = off;
                        if norm2(&x) < 1.0 {
                            out.push(Point::new(&x, t));
                        }
                        // near the bottom
                        let mut x: Vec<f64> = (0..n).map(|i| p[3] * u[i]).collect();
                        x[n - 1] = x[n - 1].max(off);
                        if norm2(&x) < 1.0 {
                            out.push(Point::new(&x, -1.0 + off));
                        }
                    }
                }
            }
            Domain::Lateral => {
                for k in 0..self.interior.max(self.boundary) {
                    let p = self.param(k);
                    let mut u = unit_vector(n, p[0], p[1]);
                    u[n - 1] = u[n - 1].abs();
                    out.push(Point::new(&u[..n], -p[2]));
                }
                let mut top = [0.0; MAX_DIM];
                top[n - 1] = 1.0;
                out.push(Point::new(&top[..n], -1.0));
                out.push(Point::new(&top[..n], 0.0));
            }
            Domain::FaceAndBottom => {
                for k in 0..self.interior.max(self.boundary) {
                    let p = self.param(k);
                    let mut u = unit_vector(n, p[0], p[1]);
                    let r = p[3];
                    let mut x: Vec<f64> = (0..n).map(|i| r * u[i]).collect();
                    x[n - 1] = 0.0;
                    out.push(Point::new(&x, -p[2]));
                    u[n - 1] = u[n - 1].abs();
                    let x: Vec<f64> = (0..n).map(|i| r * u[i]).collect();
                    out.push(Point::new(&x, -1.0));
                }
            }
            Domain::SingularAnnulus | Domain::DegenerateAnnulus => {
                let (t0, t1) = self.time_range();
                let mut k = 0;
                while out.len() < self.interior && k < 64 * self.interior.max(1) {
                    let p = self.param(k);
                    k += 1;
                    let u = unit_vector(n, p[0], p[1]);
                    let t = t0 + (t1 - t0) * p[2];
                    if t >= 0.0 {
                        continue;
                    }
                    if let Some((lo, hi)) = self.radial_interval(&u, t) {
                        let rho = lo + (hi - lo) * p[3];
                        if rho > lo && rho < hi {
                            out.push(self.annulus_point(&u, rho, t));
                        }
                    }
                }
                let mut found = 0;
                let mut k = 0;
                while found < self.boundary && k < 64 * self.boundary.max(1) {
                    let p = self.param(k);
                    k += 1;
                    let u = unit_vector(n, p[0], p[1]);
                    let t = t0 + (t1 - t0) * p[2];
                    if t >= 0.0 {
                        continue;
                    }
                    let Some((lo, hi)) = self.radial_interval(&u, t) else { continue };
                    found += 1;
                    let w = hi - lo;
                    for &off in &self.offsets {
                        out.push(self.annulus_point(&u, hi - off * w, t));
                        out.push(self.annulus_point(&u, lo + off * w, t));
                    }
                }
            }
        }
        out
    }
}

/// The differential expression checked at each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// `v_t − x_n^γ ℳ⁺(D²v)`.
    PucciPlus,
    /// `x_n^{−γ} v_t − ℳ⁻(D²v)`.
    PucciMinus,
    /// The value `v` itself.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

/// `form(v) relation target`, optionally on the normalized jet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub form: Form,
    pub relation: Relation,
    pub target: f64,
    /// Evaluate on the normalized jet. Only meaningful for `target = 0` or
    /// targets already expressed relative to the scale.
    pub normalized: bool,
}

impl Inequality {
    pub fn new(form: Form, relation: Relation, target: f64) -> Self {
        Inequality { form, relation, target, normalized: false }
    }

    pub fn normalized(mut self) -> Self {
        self.normalized = true;
        self
    }

    pub fn describe(&self) -> String {
        let lhs = match (self.form, self.normalized) {
            (Form::PucciPlus, false) => "v_t - x_n^g M+(D2 v)",
            (Form::PucciPlus, true) => "(v_t - x_n^g M+(D2 v))/s",
            (Form::PucciMinus, false) => "x_n^-g v_t - M-(D2 v)",
            (Form::PucciMinus, true) => "(x_n^-g v_t - M-(D2 v))/s",
            (Form::Value, false) => "v",
            (Form::Value, true) => "v/s",
        };
        let rel = match self.relation {
            Relation::AtLeast => ">=",
            Relation::AtMost => "<=",
        };
        format!("{lhs} {rel} {}", self.target)
    }

    fn holds(&self, v: f64) -> bool {
        match self.relation {
            Relation::AtLeast => v >= self.target,
            Relation::AtMost => v <= self.target,
        }
    }
}

/// Evaluates the form of `ineq` for `field` at one point.
pub fn evaluate_form(field: &ClosedFormField, ineq: &Inequality, e: EllipticityPair, p: &Point) -> f64 {
    let x = p.space();
    let (jet, log_scale) = field.normalized_jet(x, p.t);
    let jet = if ineq.normalized { jet } else { jet.scaled(log_scale.exp()) };
    let g = field.gamma;
    let xn = x[x.len() - 1];
    match ineq.form {
        Form::PucciPlus => jet.time - g.weight(xn) * pucci_plus(&jet.hess, e),
        Form::PucciMinus => jet.time / g.weight(xn) - pucci_minus(&jet.hess, e),
        Form::Value => jet.value,
    }
}

/// Result of a sampled inequality check. Sampled evidence, not a proof.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub name: String,
    pub label: String,
    pub field: ClosedFormField,
    pub parameters: BTreeMap<String, f64>,
    pub domain: String,
    pub samples: usize,
    pub inequality: String,
    pub target: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// Sample where the inequality is tightest (or most violated).
    pub worst_point: Point,
    pub worst_value: f64,
    pub violations: usize,
    pub pass: bool,
}

pub const EVIDENCE_LABEL: &str = "numerical evidence";

/// Evaluates `ineq` for `field` at every point.
pub fn verify_certificate(
    name: &str,
    field: &ClosedFormField,
    ineq: &Inequality,
    e: EllipticityPair,
    sampler: &Sampler,
    points: &[Point],
) -> Result<CertificateReport, BarrierError> {
    if points.is_empty() {
        return Err(BarrierError::EmptySample(name.to_string()));
    }
    let mut min_value = f64::INFINITY;
    let mut max_value = f64::NEG_INFINITY;
    let mut worst = (points[0], f64::NAN);
    let mut violations = 0;
    for p in points {
        let v = evaluate_form(field, ineq, e, p);
        min_value = min_value.min(v);
        max_value = max_value.max(v);
        // negated so NaN on either side counts as worse
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let worse = match ineq.relation {
            Relation::AtLeast => !(v >= worst.1),
            Relation::AtMost => !(v <= worst.1),
        };
        if worse {
            worst = (*p, v);
        }
        if !ineq.holds(v) {
            violations += 1;
        }
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("lambda".into(), e.lambda);
    parameters.insert("Lambda".into(), e.big_lambda);
    parameters.insert("gamma".into(), field.gamma.value());
    match &field.kind {
        FieldKind::LipschitzBarrier { m, beta } => {
            parameters.insert("M".into(), *m);
            parameters.insert("beta".into(), *beta);
        }
        FieldKind::LipschitzEta { beta } | FieldKind::SingularPhi { beta } | FieldKind::SingularBarrier { beta } => {
            parameters.insert("beta".into(), *beta);
        }
        FieldKind::DegenerateXi { beta, delta } | FieldKind::DegeneratePsi { beta, delta } | FieldKind::DegenerateBarrier { beta, delta } => {
            parameters.insert("beta".into(), *beta);
            parameters.insert("delta".into(), *delta);
        }
        _ => {}
    }
    Ok(CertificateReport {
        name: name.to_string(),
        label: EVIDENCE_LABEL.into(),
        field: field.clone(),
        parameters,
        domain: sampler.describe(),
        samples: points.len(),
        inequality: ineq.describe(),
        target: ineq.target,
        min_value,
        max_value,
        worst_point: worst.0,
        worst_value: worst.1,
        violations,
        pass: violations == 0,
    })
}
