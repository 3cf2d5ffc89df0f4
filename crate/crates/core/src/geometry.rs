//! Half-cylinder grids, the intrinsic parabolic metric and anisotropic Hölder
//! seminorms.
//!
//! Time and space scale differently for `u_t - x_n^γ F(D²u) = f`: a spatial
//! dilation by `r` must be paired with a temporal dilation by `r^(2-γ)`. All
//! distances and cylinders in this module follow that scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("gamma must be finite and < 1, got {0}")]
    InvalidGamma(f64),
    #[error("spatial dimension must be in 1..={MAX_DIM}, got {0}")]
    InvalidDimension(usize),
    #[error("mesh width {h} does not divide radius {radius}")]
    MeshMismatch { h: f64, radius: f64 },
    #[error("time step {dt} does not divide horizon {horizon}")]
    StepMismatch { dt: f64, horizon: f64 },
    #[error("invalid grid parameter: {0}")]
    InvalidParameter(String),
    #[error("no sample points inside the requested region")]
    EmptySample,
    #[error("field has {found} values, layout expects {expected}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("non-finite value at node {node} of time level {level}")]
    NonFinite { node: usize, level: usize },
}

/// Which side of `γ = 0` the coefficient `x_n^γ` falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `0 < γ < 1`: the coefficient vanishes on the face.
    Degenerate,
    /// `γ = 0`: uniformly parabolic.
    Uniform,
    /// `γ < 0`: the coefficient blows up on the face.
    Singular,
}

/// The exponent `γ` of the boundary weight, always `< 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Gamma(f64);

impl Gamma {
    pub fn new(value: f64) -> Result<Self, GeometryError> {
        if value.is_finite() && value < 1.0 {
            Ok(Gamma(value))
        } else {
            Err(GeometryError::InvalidGamma(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn regime(self) -> Regime {
        if self.0 > 0.0 {
            Regime::Degenerate
        } else if self.0 == 0.0 {
            Regime::Uniform
        } else {
            Regime::Singular
        }
    }

    /// `2 - γ`, the exponent relating time lengths to space lengths.
    pub fn time_exponent(self) -> f64 {
        2.0 - self.0
    }

    /// The boundary weight `x_n^γ`.
    #[inline]
    pub fn weight(self, x_n: f64) -> f64 {
        if self.0 == 0.0 {
            1.0
        } else {
            x_n.powf(self.0)
        }
    }
}

impl TryFrom<f64> for Gamma {
    type Error = GeometryError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Gamma::new(v)
    }
}

impl From<Gamma> for f64 {
    fn from(g: Gamma) -> f64 {
        g.0
    }
}

/// A point `(x, t)` with `x ∈ ℝⁿ`, `n ≤ 3`. Unused trailing coordinates are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: [f64; MAX_DIM],
    pub dim: usize,
    pub t: f64,
}

impl Point {
    /// Panics if `x.len() > 3`.
    pub fn new(x: &[f64], t: f64) -> Self {
        assert!(x.len() <= MAX_DIM && !x.is_empty(), "point dimension {} out of range", x.len());
        let mut c = [0.0; MAX_DIM];
        c[..x.len()].copy_from_slice(x);
        Point { x: c, dim: x.len(), t }
    }

    /// The origin of `ℝⁿ` at time `t`.
    pub fn origin(dim: usize, t: f64) -> Self {
        Point::new(&vec![0.0; dim], t)
    }

    pub fn space(&self) -> &[f64] {
        &self.x[..self.dim]
    }

    /// The normal coordinate `x_n`.
    pub fn normal(&self) -> f64 {
        self.x[self.dim - 1]
    }

    pub fn spatial_norm(&self) -> f64 {
        self.space().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn spatial_gap(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `|x - y| + |t - s|^(1/(2-γ))`.
pub fn intrinsic_distance(p: &Point, q: &Point, gamma: Gamma) -> f64 {
    spatial_gap(p.space(), q.space()) + (p.t - q.t).abs().powf(1.0 / gamma.time_exponent())
}

/// `Q_r(x₀,t₀) = B_r(x₀) × (t₀ - r^(2-γ), t₀]`, optionally cut to `{x_n > 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicCylinder {
    pub center: Point,
    pub radius: f64,
    pub gamma: Gamma,
    /// Restrict to the open upper half-space.
    pub upper: bool,
}

impl IntrinsicCylinder {
    pub fn new(center: Point, radius: f64, gamma: Gamma) -> Self {
        IntrinsicCylinder { center, radius, gamma, upper: false }
    }

    /// The `Q_r^+` variant.
    pub fn upper(center: Point, radius: f64, gamma: Gamma) -> Self {
        IntrinsicCylinder { center, radius, gamma, upper: true }
    }

    /// Length of the time interval, `r^(2-γ)`.
    pub fn duration(&self) -> f64 {
        self.radius.powf(self.gamma.time_exponent())
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.contains_parts(p.space(), p.t)
    }

    pub fn contains_parts(&self, x: &[f64], t: f64) -> bool {
        let c = &self.center;
        if self.upper && x[x.len() - 1] <= 0.0 {
            return false;
        }
        spatial_gap(x, c.space()) < self.radius && t > c.t - self.duration() && t <= c.t
    }

    /// Membership in the closure in `(x, t)`, keeping `x_n > 0` for the upper
    /// variant. Spheres and the bottom slice are admitted up to a relative
    /// `1e-12` so grid nodes on them are not lost to rounding.
    pub fn closure_contains_parts(&self, x: &[f64], t: f64) -> bool {
        let c = &self.center;
        if self.upper && x[x.len() - 1] <= 0.0 {
            return false;
        }
        let slack = 1e-12 * self.radius.max(1.0);
        spatial_gap(x, c.space()) <= self.radius + slack && t >= c.t - self.duration() - slack && t <= c.t + slack
    }
}

/// Uniform spatial lattice on `[-R, R]^(n-1) × [0, R]`.
///
/// Tangential coordinates are `-R + i·h` for `i = 0..=2N`, the normal
/// coordinate is `j·h` for `j = 0..=N`, with `N = R/h`. The normal axis is the
/// fastest varying index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub dim: usize,
    pub h: f64,
    pub radius: f64,
    /// `N = radius / h`.
    pub cells: usize,
    dims: [usize; MAX_DIM],
    strides: [usize; MAX_DIM],
    count: usize,
}

impl SpatialGrid {
    pub fn new(dim: usize, h: f64, radius: f64) -> Result<Self, GeometryError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GeometryError::InvalidDimension(dim));
        }
        if !(h > 0.0 && radius > 0.0 && h.is_finite() && radius.is_finite()) {
            return Err(GeometryError::InvalidParameter(format!("h = {h}, radius = {radius}")));
        }
        let ratio = radius / h;
        let cells = ratio.round();
        if (ratio - cells).abs() > 1e-9 * ratio.max(1.0) || cells < 1.0 {
            return Err(GeometryError::MeshMismatch { h, radius });
        }
        let cells = cells as usize;
        let mut dims = [1; MAX_DIM];
        for d in dims.iter_mut().take(dim - 1) {
            *d = 2 * cells + 1;
        }
        dims[dim - 1] = cells + 1;
        let mut strides = [0; MAX_DIM];
        let mut s = 1;
        for a in (0..dim).rev() {
            strides[a] = s;
            s *= dims[a];
        }
        Ok(SpatialGrid { dim, h, radius, cells, dims, strides, count: s })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Number of nodes along `axis`.
    pub fn axis_len(&self, axis: usize) -> usize {
        self.dims[axis]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Multi-index of a flat node index.
    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut m = [0; MAX_DIM];
        for a in 0..self.dim {
            m[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinate of lattice index `i` along `axis`.
    #[inline]
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if axis + 1 == self.dim {
            i as f64 * self.h
        } else {
            -self.radius + i as f64 * self.h
        }
    }

    /// Spatial coordinates of a node; trailing entries beyond `dim` are 0.
    pub fn coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(idx);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.axis_coord(a, m[a]);
        }
        x
    }

    /// Index along the normal axis, i.e. `x_n = j·h`.
    pub fn normal_index(&self, idx: usize) -> usize {
        (idx / self.strides[self.dim - 1]) % self.dims[self.dim - 1]
    }

    /// True on the face `x_n = 0`, the top `x_n = R` and the lateral sides.
    pub fn is_boundary(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim).any(|a| m[a] == 0 || m[a] + 1 == self.dims[a])
    }

    pub fn is_face(&self, idx: usize) -> bool {
        self.normal_index(idx) == 0
    }

    /// Interior nodes have at least one neighbour on each side along every axis.
    pub fn interior_len(&self) -> usize {
        (0..self.dim).map(|a| self.dims[a].saturating_sub(2)).product()
    }
}

/// Time layout of a forward march: `t_k = t_start + k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfCylinderGrid {
    pub space: SpatialGrid,
    pub t_start: f64,
    pub horizon: f64,
    pub dt: f64,
    pub steps: usize,
}

impl HalfCylinderGrid {
    pub fn new(space: SpatialGrid, t_start: f64, horizon: f64, dt: f64) -> Result<Self, GeometryError> {
        if !(horizon > 0.0 && dt > 0.0 && t_start.is_finite()) {
            return Err(GeometryError::InvalidParameter(format!("horizon = {horizon}, dt = {dt}")));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(GeometryError::StepMismatch { dt, horizon });
        }
        Ok(HalfCylinderGrid { space, t_start, horizon, dt, steps: steps as usize })
    }

    /// The largest admissible step `≤ max_dt` that divides the horizon.
    pub fn fitted(space: SpatialGrid, t_start: f64, horizon: f64, max_dt: f64) -> Result<Self, GeometryError> {
        if !(max_dt > 0.0 && horizon > 0.0) {
            return Err(GeometryError::InvalidParameter(format!("horizon = {horizon}, dt = {max_dt}")));
        }
        let steps = (horizon / max_dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok(HalfCylinderGrid { space, t_start, horizon, dt: horizon / steps as f64, steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_start + self.horizon
        } else {
            self.t_start + k as f64 * self.dt
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.horizon
    }
}

/// Values on a spatial grid at a list of increasing time levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    pub space: SpatialGrid,
    pub times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledField {
    pub fn new(space: SpatialGrid, times: Vec<f64>, values: Vec<f64>) -> Result<Self, GeometryError> {
        let expected = space.len() * times.len();
        if values.len() != expected {
            return Err(GeometryError::LayoutMismatch { expected, found: values.len() });
        }
        if times.is_empty() {
            return Err(GeometryError::InvalidParameter("no time levels".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { node: i % space.len(), level: i / space.len() });
        }
        Ok(SampledField { space, times, values })
    }

    /// Samples `f(x, t)` at every node and time level.
    pub fn from_fn(space: SpatialGrid, times: Vec<f64>, f: impl Fn(&[f64], f64) -> f64) -> Result<Self, GeometryError> {
        let n = space.len();
        let mut values = Vec::with_capacity(n * times.len());
        for &t in &times {
            for idx in 0..n {
                let x = space.coords(idx);
                values.push(f(&x[..space.dim], t));
            }
        }
        SampledField::new(space, times, values)
    }

    pub fn levels(&self) -> usize {
        self.times.len()
    }

    pub fn slice(&self, level: usize) -> &[f64] {
        let n = self.space.len();
        &self.values[level * n..(level + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, level: usize, idx: usize) -> f64 {
        self.values[level * self.space.len() + idx]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("at least one level")
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Applies `f(value, x, t)` nodewise.
    pub fn map(&self, f: impl Fn(f64, &[f64], f64) -> f64) -> Result<SampledField, GeometryError> {
        let n = self.space.len();
        let mut values = Vec::with_capacity(self.values.len());
        for (k, &t) in self.times.iter().enumerate() {
            for idx in 0..n {
                let x = self.space.coords(idx);
                values.push(f(self.values[k * n + idx], &x[..self.space.dim], t));
            }
        }
        SampledField::new(self.space.clone(), self.times.clone(), values)
    }

    /// Iterates `(level, node, point, value)` over every sample.
    pub fn samples(&self) -> impl Iterator<Item = (usize, usize, Point, f64)> + '_ {
        let n = self.space.len();
        self.times.iter().enumerate().flat_map(move |(k, &t)| {
            (0..n).map(move |idx| {
                let x = self.space.coords(idx);
                let p = Point { x, dim: self.space.dim, t };
                (k, idx, p, self.values[k * n + idx])
            })
        })
    }

    /// Samples inside `cyl`.
    pub fn samples_in<'a>(&'a self, cyl: &'a IntrinsicCylinder) -> impl Iterator<Item = (Point, f64)> + 'a {
        self.samples().filter(move |(_, _, p, _)| cyl.contains(p)).map(|(_, _, p, v)| (p, v))
    }

    /// Samples inside the closure of `cyl` (see
    /// [`IntrinsicCylinder::closure_contains_parts`]).
    pub fn samples_in_closure<'a>(&'a self, cyl: &'a IntrinsicCylinder) -> impl Iterator<Item = (Point, f64)> + 'a {
        self.samples().filter(move |(_, _, p, _)| cyl.closure_contains_parts(p.space(), p.t)).map(|(_, _, p, v)| (p, v))
    }

    /// Linear interpolation in time (clamped to the stored range) at a node.
    pub fn value_at_time(&self, idx: usize, t: f64) -> f64 {
        let times = &self.times;
        if t <= times[0] {
            return self.value(0, idx);
        }
        let last = times.len() - 1;
        if t >= times[last] {
            return self.value(last, idx);
        }
        let k = times.partition_point(|&s| s <= t);
        let (t0, t1) = (times[k - 1], times[k]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.value(k - 1, idx) + w * self.value(k, idx)
    }

    /// Multilinear interpolation in space and linear interpolation in time.
    /// Returns `None` outside the grid.
    pub fn interpolate(&self, p: &Point) -> Option<f64> {
        let g = &self.space;
        let mut lo = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for a in 0..g.dim {
            let origin = if a + 1 == g.dim { 0.0 } else { -g.radius };
            let s = (p.x[a] - origin) / g.h;
            let last = (g.axis_len(a) - 1) as f64;
            if s < -1e-9 || s > last + 1e-9 {
                return None;
            }
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(g.axis_len(a) - 1);
            let i = if i + 1 >= g.axis_len(a) && g.axis_len(a) > 1 { i - 1 } else { i };
            lo[a] = i;
            frac[a] = s - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << g.dim) {
            let mut w = 1.0;
            let mut m = [0usize; MAX_DIM];
            for a in 0..g.dim {
                let up = (corner >> a) & 1 == 1;
                m[a] = lo[a] + up as usize;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let idx = g.flat_index(&m[..g.dim]);
            acc += w * self.value_at_time(idx, p.t);
        }
        Some(acc)
    }
}

/// Discrete `[f]_{C^{k,α}}` at `base`: the largest sampled quotient
/// `|f - P| / d^(k+α)` with `d` the intrinsic distance to `base`.
///
/// The profile `P` is supplied by the caller. When `radius` is given only
/// samples in the (closed-face) cylinder `Q_radius(base)` are used; the base
/// point itself is skipped.
pub fn holder_seminorm(
    field: &SampledField,
    order: u32,
    alpha: f64,
    base: &Point,
    gamma: Gamma,
    profile: impl Fn(&[f64], f64) -> f64,
    radius: Option<f64>,
) -> Result<f64, GeometryError> {
    if !(alpha > 0.0 && alpha <= 1.0) || order > 2 {
        return Err(GeometryError::InvalidParameter(format!("order {order}, alpha {alpha}")));
    }
    let cyl = radius.map(|r| IntrinsicCylinder::new(*base, r, gamma));
    let exponent = order as f64 + alpha;
    let mut best: Option<f64> = None;
    for (_, _, p, v) in field.samples() {
        if let Some(c) = &cyl {
            if !c.contains(&p) {
                continue;
            }
        }
        let d = intrinsic_distance(&p, base, gamma);
        if d == 0.0 {
            continue;
        }
        let q = (v - profile(p.space(), p.t)).abs() / d.powf(exponent);
        best = Some(best.map_or(q, |b: f64| b.max(q)));
    }
    best.ok_or(GeometryError::EmptySample)
}
