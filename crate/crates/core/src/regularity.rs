//! Boundary profile fits over dyadic intrinsic cylinders, exponent
//! extraction, and the Lipschitz and Hopf bound checks.
//!
//! Fits are Chebyshev (sup-norm) fits over the closure of `Q_r^+(base)`
//! restricted to `x_n > 0`. Profiles do not depend on time, so only the
//! per-node minimum and maximum over the cylinder's time window enter the
//! objective.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Gamma, GeometryError, IntrinsicCylinder, Point, SampledField, MAX_DIM};
use crate::operators::{eval_operator, OperatorError, OperatorSpec, SymMatrix};

#[derive(Debug, Error)]
pub enum RegularityError {
    #[error("cylinder of radius {radius} around {base:?} contains no interior node")]
    EmptyCylinder { base: Point, radius: f64 },
    #[error("need at least {needed} resolved levels, got {found}")]
    TooFewLevels { needed: usize, found: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("probe point {0:?} lies outside the sampled field")]
    ProbeOutside(Point),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, RegularityError>;

/// Minimum levels and nodes per level for an exponent estimate.
pub const MIN_LEVELS: usize = 4;
pub const MIN_NODES: usize = 4;

/// A Chebyshev boundary fit at one radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFit {
    pub order: u8,
    /// Order 1: `[a]` for `a·x_n`. Order 2: `[a_1, …, a_n]` for
    /// `Σ_{i<n} a_i (x_i − x₀_i) x_n + a_n x_n²`.
    pub coefficients: Vec<f64>,
    pub radius: f64,
    pub residual: f64,
    /// Distinct spatial nodes with `x_n > 0` in the cylinder.
    pub spatial_nodes: usize,
    /// Space-time samples in the cylinder.
    pub samples: usize,
    /// `|F(D²P, base)|` for order 2.
    pub operator_defect: Option<f64>,
    /// False when a coefficient ended at the edge of its search bracket.
    pub converged: bool,
}

/// Per-node data entering a fit: profile features and the range of `u`.
struct FitData {
    features: Vec<[f64; MAX_DIM]>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    samples: usize,
    scale: f64,
    max_normal: f64,
}

fn collect(u: &SampledField, base: &Point, r: f64, gamma: Gamma, order: u8) -> Result<FitData> {
    let space = &u.space;
    let n = space.dim;
    if base.dim != n {
        return Err(RegularityError::Invalid(format!("base has dimension {}, field {}", base.dim, n)));
    }
    let cyl = IntrinsicCylinder::upper(*base, r, gamma);
    let whole = IntrinsicCylinder::new(*base, r, gamma);
    let levels: Vec<usize> = (0..u.levels()).filter(|&k| whole.closure_contains_parts(base.space(), u.times[k])).collect();
    let mut data = FitData { features: vec![], lo: vec![], hi: vec![], samples: 0, scale: 0.0, max_normal: 0.0 };
    for idx in 0..space.len() {
        let x = space.coords(idx);
        if !cyl.closure_contains_parts(&x[..n], base.t) {
            continue;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &k in &levels {
            let v = u.value(k, idx);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if levels.is_empty() {
            continue;
        }
        let xn = x[n - 1];
        let mut f = [0.0; MAX_DIM];
        if order == 1 {
            f[0] = xn;
        } else {
            for i in 0..n - 1 {
                f[i] = (x[i] - base.x[i]) * xn;
            }
            f[n - 1] = xn * xn;
        }
        data.features.push(f);
        data.lo.push(lo);
        data.hi.push(hi);
        data.samples += levels.len();
        data.scale = data.scale.max(lo.abs()).max(hi.abs());
        data.max_normal = data.max_normal.max(xn);
    }
    if data.features.is_empty() {
        return Err(RegularityError::EmptyCylinder { base: *base, radius: r });
    }
    Ok(data)
}

fn objective(d: &FitData, a: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for ((f, lo), hi) in d.features.iter().zip(&d.lo).zip(&d.hi) {
        let p: f64 = f.iter().zip(a).map(|(x, c)| x * c).sum();
        worst = worst.max(hi - p).max(p - lo);
    }
    worst
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimization of a convex function on `[lo, hi]`.
/// Returns `(argmin, min, hit_edge)`.
fn golden(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64, bool) {
    let (a0, b0) = (lo, hi);
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let tol = 1e-13 * (b0 - a0).abs().max(f64::MIN_POSITIVE);
    while (hi - lo).abs() > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x);
    let edge = (x - a0).abs() < 1e-9 * (b0 - a0) || (b0 - x).abs() < 1e-9 * (b0 - a0);
    (x, fx, edge)
}

/// Minimizes over coefficients `depth..` with earlier ones fixed. Partial
/// minimization of a convex function is convex, so each level is a convex
/// 1-D problem.
fn nested(d: &FitData, a: &mut Vec<f64>, depth: usize, bracket: f64, edge: &mut bool) -> f64 {
    if depth == a.len() {
        return objective(d, a);
    }
    let mut inner_edge = false;
    let (best, _, hit) = golden(-bracket, bracket, |c| {
        a[depth] = c;
        let mut e = false;
        nested(d, a, depth + 1, bracket, &mut e)
    });
    a[depth] = best;
    let v = nested(d, a, depth + 1, bracket, &mut inner_edge);
    *edge |= hit || inner_edge;
    v
}

fn search_bracket(d: &FitData, r: f64, order: u8) -> f64 {
    let o = order as i32;
    let from_radius = 10.0 * d.scale / r.powi(o);
    // |a|·X^order ≤ 2‖u‖ at the optimum, X the largest sampled x_n
    let from_nodes = 2.5 * d.scale / d.max_normal.powi(o);
    from_radius.max(from_nodes).max(f64::MIN_POSITIVE)
}

/// Best `a` for `sup |u − a·x_n|` over `Q_r^+(base)`.
pub fn fit_boundary_linear(u: &SampledField, base: &Point, r: f64, gamma: Gamma) -> Result<BoundaryFit> {
    let d = collect(u, base, r, gamma, 1)?;
    let (a, res, edge) = if d.scale == 0.0 {
        (0.0, 0.0, false)
    } else {
        let bracket = search_bracket(&d, r, 1);
        golden(-bracket, bracket, |a| objective(&d, &[a]))
    };
    Ok(BoundaryFit {
        order: 1,
        coefficients: vec![a],
        radius: r,
        residual: res,
        spatial_nodes: d.features.len(),
        samples: d.samples,
        operator_defect: None,
        converged: !edge || d.scale == 0.0,
    })
}

/// Hessian of `Σ_{i<n} a_i x_i x_n + a_n x_n²`.
pub fn quadratic_profile_hessian(a: &[f64]) -> SymMatrix {
    let n = a.len();
    let mut h = SymMatrix::zeros(n);
    for (i, &c) in a.iter().enumerate().take(n - 1) {
        h.set(i, n - 1, c);
    }
    h.set(n - 1, n - 1, 2.0 * a[n - 1]);
    h
}

/// Best `{a_i}` for `sup |u − Σ a_i x_i x_n|` over `Q_r^+(base)`, and the
/// defect `|F(D²P, base)|` when an operator is given.
pub fn fit_boundary_quadratic(u: &SampledField, base: &Point, r: f64, gamma: Gamma, op: Option<&OperatorSpec>) -> Result<BoundaryFit> {
    let n = u.space.dim;
    let d = collect(u, base, r, gamma, 2)?;
    let bracket = search_bracket(&d, r, 2);
    let mut a = vec![0.0; n];
    let mut edge = false;
    let res = if d.scale == 0.0 { 0.0 } else { nested(&d, &mut a, 0, bracket, &mut edge) };
    let defect = match op {
        Some(op) => Some(eval_operator(op, &quadratic_profile_hessian(&a), base.space(), base.t)?.abs()),
        None => None,
    };
    Ok(BoundaryFit {
        order: 2,
        coefficients: a,
        radius: r,
        residual: res,
        spatial_nodes: d.features.len(),
        samples: d.samples,
        operator_defect: defect,
        converged: !edge || d.scale == 0.0,
    })
}

/// Least-squares fit of `ln ρ` against `ln r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub order: u8,
    pub levels: usize,
    /// Slope minus `order`; `None` for an exact polynomial.
    pub alpha_raw: Option<f64>,
    /// `alpha_raw` clamped to `[0, 1]`.
    pub alpha: Option<f64>,
    pub r_squared: Option<f64>,
    /// Largest `|ln ρ − fit|`.
    pub residual_band: Option<f64>,
    pub exact_polynomial: bool,
}

pub fn estimate_exponent(radii: &[f64], residuals: &[f64], order: u8) -> Result<ExponentEstimate> {
    if radii.len() != residuals.len() {
        return Err(RegularityError::Invalid("radii and residuals differ in length".into()));
    }
    if radii.len() < MIN_LEVELS {
        return Err(RegularityError::TooFewLevels { needed: MIN_LEVELS, found: radii.len() });
    }
    if radii.iter().chain(residuals).any(|v| !v.is_finite() || *v < 0.0) || radii.iter().any(|&r| r <= 0.0) {
        return Err(RegularityError::Invalid("radii must be positive and residuals nonnegative".into()));
    }
    let levels = radii.len();
    if residuals.iter().all(|&v| v == 0.0) {
        return Ok(ExponentEstimate { order, levels, alpha_raw: None, alpha: None, r_squared: None, residual_band: None, exact_polynomial: true });
    }
    if residuals.contains(&0.0) {
        return Err(RegularityError::Invalid("some but not all residuals vanish".into()));
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|v| v.ln()).collect();
    let m = levels as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(RegularityError::Invalid("radii are all equal".into()));
    }
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let fit: Vec<f64> = xs.iter().map(|x| icept + slope * x).collect();
    let ss_res: f64 = ys.iter().zip(&fit).map(|(y, f)| (y - f).powi(2)).sum();
    let band = ys.iter().zip(&fit).map(|(y, f)| (y - f).abs()).fold(0.0, f64::max);
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    let raw = slope - order as f64;
    Ok(ExponentEstimate {
        order,
        levels,
        alpha_raw: Some(raw),
        alpha: Some(raw.clamp(0.0, 1.0)),
        r_squared: Some(r2),
        residual_band: Some(band),
        exact_polynomial: false,
    })
}

/// One dyadic level of a [`RegularityReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: u32,
    pub fit: BoundaryFit,
    pub resolved: bool,
    /// Max-norm change of the coefficients from the previous level.
    pub drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub base: Point,
    pub order: u8,
    pub gamma: Gamma,
    pub mesh_width: f64,
    pub levels: Vec<LevelRow>,
    pub estimate: Option<ExponentEstimate>,
    /// Why no estimate was produced.
    pub estimate_error: Option<String>,
}

/// Fits at `r_k = 2^{−k}` for `k` in `levels` and estimates the exponent from
/// the resolved ones (at least [`MIN_NODES`] spatial nodes each).
pub fn regularity_report(
    u: &SampledField,
    base: &Point,
    order: u8,
    levels: std::ops::RangeInclusive<u32>,
    gamma: Gamma,
    op: Option<&OperatorSpec>,
) -> Result<RegularityReport> {
    if order != 1 && order != 2 {
        return Err(RegularityError::Invalid(format!("order {order}")));
    }
    let mut rows: Vec<LevelRow> = Vec::new();
    for k in levels {
        let r = 0.5f64.powi(k as i32);
        let fit = match order {
            1 => fit_boundary_linear(u, base, r, gamma),
            _ => fit_boundary_quadratic(u, base, r, gamma, op),
        };
        let fit = match fit {
            Ok(f) => f,
            Err(RegularityError::EmptyCylinder { .. }) => continue,
            Err(e) => return Err(e),
        };
        let drift = rows.last().map(|p| p.fit.coefficients.iter().zip(&fit.coefficients).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let resolved = fit.spatial_nodes >= MIN_NODES;
        rows.push(LevelRow { level: k, fit, resolved, drift });
    }
    let (radii, res): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.resolved).map(|r| (r.fit.radius, r.fit.residual)).unzip();
    let (estimate, estimate_error) = match estimate_exponent(&radii, &res, order) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(RegularityReport { base: *base, order, gamma, mesh_width: u.space.h, levels: rows, estimate, estimate_error })
}

pub const REGULARITY_CSV_HEADER: [&str; 12] =
    ["level", "radius", "spatial_nodes", "samples", "resolved", "residual", "coef_1", "coef_2", "coef_3", "operator_defect", "drift", "converged"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RegularityReport {
    /// One row per dyadic level; columns in [`REGULARITY_CSV_HEADER`].
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REGULARITY_CSV_HEADER)?;
        for row in &self.levels {
            let f = &row.fit;
            let c = |i: usize| opt(f.coefficients.get(i).copied());
            out.write_record([
                row.level.to_string(),
                format!("{:e}", f.radius),
                f.spatial_nodes.to_string(),
                f.samples.to_string(),
                row.resolved.to_string(),
                format!("{:e}", f.residual),
                c(0),
                c(1),
                c(2),
                opt(f.operator_defect),
                opt(row.drift),
                f.converged.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Empirical Lipschitz constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCheck {
    pub constant: f64,
    pub samples: usize,
    pub pass: bool,
}

/// `max |u| / ((‖u‖ + ‖f‖)|x|)` over `Q_{1/2}^+` anchored at the final time
/// and the origin, skipping `x = 0`.
pub fn check_lipschitz_bound(u: &SampledField, u_norm: f64, f_norm: f64, gamma: Gamma) -> Result<LipschitzCheck> {
    let base = Point::origin(u.space.dim, u.final_time());
    let cyl = IntrinsicCylinder::upper(base, 0.5, gamma);
    let denom = u_norm + f_norm;
    let mut c: f64 = 0.0;
    let mut samples = 0;
    for (p, v) in u.samples_in_closure(&cyl) {
        let r = p.spatial_norm();
        if r == 0.0 {
            continue;
        }
        samples += 1;
        if denom > 0.0 {
            c = c.max(v.abs() / (denom * r));
        }
    }
    if samples == 0 {
        return Err(RegularityError::EmptyCylinder { base, radius: 0.5 });
    }
    Ok(LipschitzCheck { constant: c, samples, pass: c.is_finite() })
}

/// Empirical Hopf constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfCheck {
    pub constant: f64,
    pub probe: Point,
    pub probe_value: f64,
    pub samples: usize,
    /// The field vanishes identically; the check passes vacuously.
    pub zero_field: bool,
    /// `u(probe) = 0` while `u` is not identically zero.
    pub degenerate_probe: bool,
    pub pass: bool,
}

/// `min u / (u(probe)·x_n)` over `Q_{1/2}^+`, probe `(e_n/2, t_end − 2/4^{2−γ})`.
pub fn check_hopf_bound(u: &SampledField, gamma: Gamma) -> Result<HopfCheck> {
    let n = u.space.dim;
    let t_end = u.final_time();
    let mut x = [0.0; MAX_DIM];
    x[n - 1] = 0.5;
    let probe = Point::new(&x[..n], t_end - 2.0 / 4f64.powf(2.0 - gamma.value()));
    let zero_field = u.values().iter().all(|&v| v == 0.0);
    if zero_field {
        return Ok(HopfCheck { constant: 0.0, probe, probe_value: 0.0, samples: 0, zero_field, degenerate_probe: false, pass: true });
    }
    let pv = u.interpolate(&probe).ok_or(RegularityError::ProbeOutside(probe))?;
    let cyl = IntrinsicCylinder::upper(Point::origin(n, t_end), 0.5, gamma);
    let mut c = f64::INFINITY;
    let mut samples = 0;
    for (p, v) in u.samples_in_closure(&cyl) {
        samples += 1;
        c = c.min(v / (pv * p.normal()));
    }
    if samples == 0 {
        return Err(RegularityError::EmptyCylinder { base: Point::origin(n, t_end), radius: 0.5 });
    }
    let degenerate_probe = pv == 0.0;
    Ok(HopfCheck { constant: c, probe, probe_value: pv, samples, zero_field, degenerate_probe, pass: !degenerate_probe && pv > 0.0 && c > 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpatialGrid;

    fn gm(v: f64) -> Gamma {
        Gamma::new(v).unwrap()
    }

    fn field(h: f64, f: impl Fn(&[f64], f64) -> f64) -> SampledField {
        let s = SpatialGrid::new(2, h, 1.0).unwrap();
        let times = (0..=8).map(|k| -1.0 + k as f64 / 8.0).collect();
        SampledField::from_fn(s, times, f).unwrap()
    }

    /// Dense scan over `a` of the same discrete objective.
    fn scan_linear(u: &SampledField, r: f64, gamma: Gamma) -> (f64, f64) {
        let base = Point::origin(2, u.final_time());
        let cyl = IntrinsicCylinder::upper(base, r, gamma);
        let pts: Vec<(f64, f64)> = u.samples_in_closure(&cyl).map(|(p, v)| (p.normal(), v)).collect();
        let mut best = (0.0, f64::INFINITY);
        for k in -40_000..=40_000 {
            let a = k as f64 * 1e-4;
            let r = pts.iter().map(|(x, v)| (v - a * x).abs()).fold(0.0, f64::max);
            if r < best.1 {
                best = (a, r);
            }
        }
        best
    }

    #[test]
    fn exact_linear_profile() {
        let u = field(1.0 / 16.0, |x, _| 3.0 * x[1]);
        let f = fit_boundary_linear(&u, &Point::origin(2, 0.0), 0.5, gm(0.5)).unwrap();
        assert!((f.coefficients[0] - 3.0).abs() < 1e-9);
        assert!(f.residual < 1e-9);
    }

    #[test]
    fn linear_fit_agrees_with_dense_scan() {
        for (g, f) in [
            (0.5, Box::new(|x: &[f64], _t: f64| x[1].powf(1.5) / 0.75) as Box<dyn Fn(&[f64], f64) -> f64>),
            (0.0, Box::new(|x: &[f64], t: f64| x[1] + 0.01 * ((37.0 * x[0] + 11.0 * x[1] + 5.0 * t).sin()))),
        ] {
            let u = field(1.0 / 32.0, f);
            for r in [0.5, 0.25, 0.125] {
                let fit = fit_boundary_linear(&u, &Point::origin(2, 0.0), r, gm(g)).unwrap();
                let (a, res) = scan_linear(&u, r, gm(g));
                assert!((fit.coefficients[0] - a).abs() < 2e-4, "{} vs {a}", fit.coefficients[0]);
                assert!(fit.residual <= res + 1e-10, "{} vs {res}", fit.residual);
                assert!(res - fit.residual < 1e-4);
            }
        }
    }

    #[test]
    fn noisy_linear_profile_within_noise() {
        let sigma = 1e-3;
        let u = field(1.0 / 32.0, |x, t| x[1] + sigma * ((91.0 * x[0] + 53.0 * x[1] + 17.0 * t).sin()));
        let f = fit_boundary_linear(&u, &Point::origin(2, 0.0), 0.5, gm(0.5)).unwrap();
        assert!((f.coefficients[0] - 1.0).abs() < 4.0 * sigma);
        assert!(f.residual <= sigma + 1e-12);
    }

    #[test]
    fn exact_quadratic_profile() {
        let u = field(1.0 / 16.0, |x, _| 2.0 * x[0] * x[1]);
        let f = fit_boundary_quadratic(&u, &Point::origin(2, 0.0), 0.5, gm(0.5), None).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-8, "{:?}", f.coefficients);
        assert!(f.coefficients[1].abs() < 1e-8);
        assert!(f.residual < 1e-8);
        assert!(f.converged);
    }

    #[test]
    fn quadratic_fit_agrees_with_dense_scan_over_normal_curvature() {
        let u = field(1.0 / 32.0, |x, _| x[1] * x[1] * (1.0 + x[1]));
        let r = 0.5;
        let fit = fit_boundary_quadratic(&u, &Point::origin(2, 0.0), r, gm(0.5), None).unwrap();
        let cyl = IntrinsicCylinder::upper(Point::origin(2, 0.0), r, gm(0.5));
        let pts: Vec<(f64, f64)> = u.samples_in_closure(&cyl).map(|(p, v)| (p.normal(), v)).collect();
        let (mut best_a, mut best) = (0.0, f64::INFINITY);
        for k in 0..=30_000 {
            let a = k as f64 * 1e-4;
            let res = pts.iter().map(|(x, v)| (v - a * x * x).abs()).fold(0.0, f64::max);
            if res < best {
                best = res;
                best_a = a;
            }
        }
        assert!(fit.residual > 0.0);
        assert!(fit.coefficients[0].abs() < 1e-6);
        assert!((fit.coefficients[1] - best_a).abs() < 2e-4);
        assert!(fit.residual <= best + 1e-10 && best - fit.residual < 1e-4);
    }

    #[test]
    fn operator_defect_of_fitted_profile() {
        let e = crate::operators::EllipticityPair::new(1.0, 1.0).unwrap();
        let lap = OperatorSpec::laplacian(e).unwrap();
        let u = field(1.0 / 16.0, |x, _| 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1]);
        let f = fit_boundary_quadratic(&u, &Point::origin(2, 0.0), 0.5, gm(0.5), Some(&lap)).unwrap();
        assert!((f.operator_defect.unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn empty_cylinder_errors() {
        let u = field(0.25, |_, _| 0.0);
        let r = fit_boundary_linear(&u, &Point::origin(2, 0.0), 0.1, gm(0.5));
        assert!(matches!(r, Err(RegularityError::EmptyCylinder { .. })));
    }

    #[test]
    fn exponent_examples() {
        let radii: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
        let e = estimate_exponent(&radii, &radii.iter().map(|r| r.powf(1.5)).collect::<Vec<_>>(), 1).unwrap();
        assert!((e.alpha_raw.unwrap() - 0.5).abs() < 1e-12);
        assert!((e.r_squared.unwrap() - 1.0).abs() < 1e-12);
        let e = estimate_exponent(&radii, &radii.iter().map(|r| r.powf(2.5)).collect::<Vec<_>>(), 2).unwrap();
        assert!((e.alpha.unwrap() - 0.5).abs() < 1e-12);
        let e = estimate_exponent(&radii, &[0.0; 6], 2).unwrap();
        assert!(e.exact_polynomial && e.alpha.is_none());
        assert!(matches!(estimate_exponent(&radii[..3], &[1.0; 3], 1), Err(RegularityError::TooFewLevels { .. })));
        let e = estimate_exponent(&radii, &radii.iter().map(|r| r.powf(2.5)).collect::<Vec<_>>(), 1).unwrap();
        assert_eq!(e.alpha, Some(1.0));
        assert!((e.alpha_raw.unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn report_csv_has_one_row_per_level() {
        let u = field(1.0 / 32.0, |x, _| x[1].powf(1.5));
        let rep = regularity_report(&u, &Point::origin(2, 0.0), 1, 1..=4, gm(0.5), None).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + rep.levels.len());
        assert!(text.starts_with("level,radius"));
        assert!(rep.to_json().unwrap().contains("\"order\": 1"));
    }

    #[test]
    fn lipschitz_examples() {
        let u = field(1.0 / 16.0, |_, _| 0.0);
        assert_eq!(check_lipschitz_bound(&u, 0.0, 0.0, gm(0.5)).unwrap().constant, 0.0);
        let u = field(1.0 / 16.0, |x, _| x[1]);
        let c = check_lipschitz_bound(&u, 1.0, 0.0, gm(0.5)).unwrap();
        assert!((c.constant - 1.0).abs() < 1e-15);
        assert!(c.pass);
    }

    #[test]
    fn hopf_examples() {
        let u = field(1.0 / 16.0, |_, _| 0.0);
        let c = check_hopf_bound(&u, gm(0.5)).unwrap();
        assert!(c.zero_field && c.pass);
        let u = field(1.0 / 16.0, |x, _| x[1]);
        let c = check_hopf_bound(&u, gm(0.5)).unwrap();
        assert!((c.probe_value - 0.5).abs() < 1e-15);
        assert!((c.constant - 2.0).abs() < 1e-12);
        assert!(c.pass);
        let u = field(1.0 / 16.0, |x, _| x[0].max(0.0) * x[1]);
        let c = check_hopf_bound(&u, gm(0.5)).unwrap();
        assert!(c.degenerate_probe && !c.pass);
    }
}
