//! Monotone explicit marching for the Cauchy–Dirichlet problem.
//!
//! The update at an interior node is
//! `u ← u + dt·(w(x_n)·F(diag(δ²₁u, …, δ²ₙu), x, t) + f)` with `w(x_n) = x_n^γ`
//! (optionally capped for `γ < 0`) and `δ²ᵢ` the central second difference
//! along axis `i`. By uniform ellipticity the partial derivatives of `F` in each diagonal
//! entry lie in `[λ, Λ]`, so the update is nondecreasing in every neighbour
//! and, once `dt ≤ h² / (2nΛ · max w)`, in the centre value too.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Gamma, GeometryError, HalfCylinderGrid, SampledField, SpatialGrid, MAX_DIM};
use crate::operators::{second_difference, EllipticityPair, OperatorError, Problem};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("time step {dt:e} exceeds the monotonicity bound {bound:e}")]
    NonMonotone { dt: f64, bound: f64 },
    #[error("non-finite value at node {node} (x = {x:?}) after step {step}")]
    NonFinite { node: usize, x: Vec<f64>, step: usize },
    #[error("non-finite data g or f at node {node} at time {t}")]
    BadData { node: usize, t: f64 },
    #[error("problem and grid are incompatible: {0}")]
    Incompatible(String),
    #[error("invalid scheme configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Scheme parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Fraction of the monotonicity bound used as time step, in `(0, 1]`.
    pub cfl_safety: f64,
    pub h: f64,
    /// Explicit time step; refused if it violates monotonicity.
    #[serde(default)]
    pub dt_override: Option<f64>,
    /// Upper bound on `x_n^γ` for `γ < 0`.
    #[serde(default)]
    pub coefficient_cap: Option<f64>,
    /// Keep every `k`-th time level (plus the last). Defaults to at most ~256
    /// stored levels.
    #[serde(default)]
    pub snapshot_stride: Option<usize>,
}

impl SchemeConfig {
    pub fn new(h: f64) -> Self {
        SchemeConfig { cfl_safety: 1.0, h, dt_override: None, coefficient_cap: None, snapshot_stride: None }
    }

    pub fn with_safety(mut self, s: f64) -> Self {
        self.cfl_safety = s;
        self
    }

    pub fn with_stride(mut self, k: usize) -> Self {
        self.snapshot_stride = Some(k);
        self
    }
}

/// Largest value of the (capped) weight `x_n^γ` over interior nodes, using
/// `h^γ` for `γ < 0` and `radius^γ` for `γ > 0`.
pub fn max_interior_weight(space: &SpatialGrid, gamma: Gamma, cap: Option<f64>) -> f64 {
    let w = match gamma.value() {
        g if g < 0.0 => space.h.powf(g),
        g if g > 0.0 => space.radius.powf(g),
        _ => 1.0,
    };
    match cap {
        Some(c) if gamma.value() < 0.0 => w.min(c),
        _ => w,
    }
}

/// `dt = safety · h² / (2 n Λ · max w)`.
pub fn cfl_dt(space: &SpatialGrid, gamma: Gamma, e: EllipticityPair, cfl_safety: f64) -> f64 {
    cfl_dt_capped(space, gamma, e, cfl_safety, None)
}

pub fn cfl_dt_capped(space: &SpatialGrid, gamma: Gamma, e: EllipticityPair, cfl_safety: f64, cap: Option<f64>) -> f64 {
    cfl_safety * space.h * space.h / (2.0 * space.dim as f64 * e.big_lambda * max_interior_weight(space, gamma, cap))
}

#[inline]
fn weight(gamma: Gamma, x_n: f64, cap: Option<f64>) -> f64 {
    let w = gamma.weight(x_n);
    match cap {
        Some(c) if gamma.value() < 0.0 => w.min(c),
        _ => w,
    }
}

/// Precomputed node classification shared by every step of a march.
struct Stencil {
    interior: Vec<usize>,
    boundary: Vec<usize>,
    coords: Vec<[f64; MAX_DIM]>,
    weights: Vec<f64>,
}

impl Stencil {
    fn new(space: &SpatialGrid, gamma: Gamma, cap: Option<f64>) -> Self {
        let n = space.len();
        let coords: Vec<_> = (0..n).map(|i| space.coords(i)).collect();
        let (boundary, interior): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| space.is_boundary(i));
        let weights = coords.iter().map(|x| if x[space.dim - 1] > 0.0 { weight(gamma, x[space.dim - 1], cap) } else { 0.0 }).collect();
        Stencil { interior, boundary, coords, weights }
    }
}

fn apply_step(
    space: &SpatialGrid,
    st: &Stencil,
    prob: &Problem,
    state: &[f64],
    next: &mut [f64],
    t: f64,
    dt: f64,
    forcing_sup: &mut f64,
) {
    let dim = space.dim;
    let inv_h2 = 1.0 / (space.h * space.h);
    let mut d = [0.0; MAX_DIM];
    for &idx in &st.interior {
        for (a, v) in d.iter_mut().enumerate().take(dim) {
            *v = second_difference(state, idx, space.stride(a), inv_h2);
        }
        let x = &st.coords[idx][..dim];
        let f = (prob.forcing)(x, t);
        *forcing_sup = forcing_sup.max(f.abs());
        let op = prob.op.eval_diagonal(&d[..dim], x, t);
        next[idx] = state[idx] + dt * (st.weights[idx] * op + f);
    }
}

fn write_boundary(st: &Stencil, prob: &Problem, dim: usize, values: &mut [f64], t: f64, boundary_sup: &mut f64) -> Result<(), SolverError> {
    for &idx in &st.boundary {
        let g = (prob.boundary)(&st.coords[idx][..dim], t);
        if !g.is_finite() {
            return Err(SolverError::BadData { node: idx, t });
        }
        *boundary_sup = boundary_sup.max(g.abs());
        values[idx] = g;
    }
    Ok(())
}

/// Monotonicity bound for a given spatial grid and problem (no safety factor).
pub fn monotonicity_bound(space: &SpatialGrid, prob: &Problem, cap: Option<f64>) -> f64 {
    cfl_dt_capped(space, prob.gamma, prob.op.ellipticity, 1.0, cap)
}

/// One explicit step from `t` to `t + dt`. Boundary nodes of the result hold
/// `g(·, t + dt)`.
pub fn step(space: &SpatialGrid, state: &[f64], prob: &Problem, t: f64, dt: f64, cap: Option<f64>) -> Result<Vec<f64>, SolverError> {
    if state.len() != space.len() {
        return Err(SolverError::Incompatible(format!("state has {} values, grid {}", state.len(), space.len())));
    }
    let bound = monotonicity_bound(space, prob, cap);
    if dt > bound * (1.0 + 1e-12) {
        return Err(SolverError::NonMonotone { dt, bound });
    }
    let st = Stencil::new(space, prob.gamma, cap);
    let mut next = state.to_vec();
    let mut sink = 0.0;
    apply_step(space, &st, prob, state, &mut next, t, dt, &mut sink);
    write_boundary(&st, prob, space.dim, &mut next, t + dt, &mut sink)?;
    Ok(next)
}

/// Closed-form Perron envelopes `±e^{t+1}(‖f‖ + ‖g‖)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerronEnvelope {
    pub forcing_sup: f64,
    pub boundary_sup: f64,
}

impl PerronEnvelope {
    pub fn from_norms(forcing_sup: f64, boundary_sup: f64) -> Self {
        PerronEnvelope { forcing_sup, boundary_sup }
    }

    pub fn upper(&self, t: f64) -> f64 {
        (t + 1.0).exp() * (self.forcing_sup + self.boundary_sup)
    }

    pub fn lower(&self, t: f64) -> f64 {
        -self.upper(t)
    }

    /// `(lower, upper)` sampled on the layout of `like`.
    pub fn fields(&self, like: &SampledField) -> Result<(SampledField, SampledField), GeometryError> {
        let lo = like.map(|_, _, t| self.lower(t))?;
        let hi = like.map(|_, _, t| self.upper(t))?;
        Ok((lo, hi))
    }

    /// Number of samples of `u` outside the envelope.
    pub fn violations(&self, u: &SampledField) -> usize {
        u.samples().filter(|(_, _, p, v)| *v > self.upper(p.t) || *v < self.lower(p.t)).count()
    }
}

/// Perron envelopes for `prob` with the norms of `f` (interior nodes) and `g`
/// (parabolic boundary nodes) sampled at every time level of `grid`.
pub fn perron_bounds(prob: &Problem, grid: &HalfCylinderGrid) -> PerronEnvelope {
    let space = &grid.space;
    let mut fs: f64 = 0.0;
    let mut gs: f64 = 0.0;
    for idx in 0..space.len() {
        let x = space.coords(idx);
        let x = &x[..space.dim];
        let on_boundary = space.is_boundary(idx);
        for k in 0..=grid.steps {
            let t = grid.time(k);
            if on_boundary || k == 0 {
                gs = gs.max((prob.boundary)(x, t).abs());
            }
            if !on_boundary && k < grid.steps {
                fs = fs.max((prob.forcing)(x, t).abs());
            }
        }
    }
    PerronEnvelope::from_norms(fs, gs)
}

/// Output of [`solve_cauchy_dirichlet`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Stored time levels of the march (see [`SchemeConfig::snapshot_stride`]).
    pub field: SampledField,
    pub grid: HalfCylinderGrid,
    pub dt: f64,
    /// `1 − dt / bound`; nonnegative for a monotone run.
    pub stability_margin: f64,
    pub envelope: PerronEnvelope,
    pub elapsed: Duration,
}

/// Step-by-step march; [`solve_cauchy_dirichlet`] drives one to the horizon.
pub struct Marcher<'a> {
    prob: &'a Problem,
    pub grid: HalfCylinderGrid,
    st: Stencil,
    cur: Vec<f64>,
    next: Vec<f64>,
    step: usize,
    bound: f64,
    forcing_sup: f64,
    boundary_sup: f64,
}

impl<'a> Marcher<'a> {
    /// Validates the configuration and loads the initial slice.
    pub fn new(prob: &'a Problem, cfg: &SchemeConfig) -> Result<Self, SolverError> {
        if !(cfg.cfl_safety > 0.0 && cfg.cfl_safety.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("cfl_safety = {}", cfg.cfl_safety)));
        }
        if let Some(d) = prob.op.fixed_dim() {
            if d != prob.dim {
                return Err(SolverError::Incompatible(format!("operator has dimension {d}, problem {}", prob.dim)));
            }
        }
        let space = SpatialGrid::new(prob.dim, cfg.h, prob.radius)?;
        if space.interior_len() == 0 {
            return Err(SolverError::Incompatible("grid has no interior nodes".into()));
        }
        let bound = monotonicity_bound(&space, prob, cfg.coefficient_cap);
        let target = cfg.dt_override.unwrap_or(cfg.cfl_safety * bound);
        if target > bound * (1.0 + 1e-12) {
            return Err(SolverError::NonMonotone { dt: target, bound });
        }
        let grid = match cfg.dt_override {
            Some(dt) => HalfCylinderGrid::new(space.clone(), prob.t_start, prob.horizon, dt)?,
            None => HalfCylinderGrid::fitted(space.clone(), prob.t_start, prob.horizon, target)?,
        };
        let st = Stencil::new(&space, prob.gamma, cfg.coefficient_cap);
        let mut boundary_sup: f64 = 0.0;
        let mut cur = vec![0.0; space.len()];
        for (idx, v) in cur.iter_mut().enumerate() {
            let g = (prob.boundary)(&st.coords[idx][..space.dim], grid.t_start);
            if !g.is_finite() {
                return Err(SolverError::BadData { node: idx, t: grid.t_start });
            }
            boundary_sup = boundary_sup.max(g.abs());
            *v = g;
        }
        let next = cur.clone();
        Ok(Marcher { prob, grid, st, cur, next, step: 0, bound, forcing_sup: 0.0, boundary_sup })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.grid.time(self.step)
    }

    pub fn state(&self) -> &[f64] {
        &self.cur
    }

    pub fn done(&self) -> bool {
        self.step == self.grid.steps
    }

    /// Monotonicity bound of the grid (without safety factor).
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Sup norms of `f` and `g` seen so far.
    pub fn envelope(&self) -> PerronEnvelope {
        PerronEnvelope::from_norms(self.forcing_sup, self.boundary_sup)
    }

    /// Advances one step; returns `false` once the horizon is reached.
    pub fn advance(&mut self) -> Result<bool, SolverError> {
        if self.done() {
            return Ok(false);
        }
        let space = &self.grid.space;
        let t = self.grid.time(self.step);
        let t_next = self.grid.time(self.step + 1);
        apply_step(space, &self.st, self.prob, &self.cur, &mut self.next, t, self.grid.dt, &mut self.forcing_sup);
        write_boundary(&self.st, self.prob, space.dim, &mut self.next, t_next, &mut self.boundary_sup)?;
        if let Some(bad) = self.st.interior.iter().copied().find(|&i| !self.next[i].is_finite()) {
            return Err(SolverError::NonFinite { node: bad, x: self.st.coords[bad][..space.dim].to_vec(), step: self.step + 1 });
        }
        std::mem::swap(&mut self.cur, &mut self.next);
        self.step += 1;
        Ok(true)
    }
}

/// Marches from `t_start` to `t_start + horizon`.
pub fn solve_cauchy_dirichlet(prob: &Problem, cfg: &SchemeConfig) -> Result<SolveResult, SolverError> {
    let started = Instant::now();
    let mut m = Marcher::new(prob, cfg)?;
    let stride = cfg.snapshot_stride.unwrap_or_else(|| m.grid.steps.div_ceil(256)).max(1);
    let mut times = vec![m.time()];
    let mut values = m.state().to_vec();
    while m.advance()? {
        if m.step_index() % stride == 0 || m.done() {
            times.push(m.time());
            values.extend_from_slice(m.state());
        }
    }
    let field = SampledField::new(m.grid.space.clone(), times, values)?;
    Ok(SolveResult {
        field,
        dt: m.grid.dt,
        stability_margin: 1.0 - m.grid.dt / m.bound,
        envelope: m.envelope(),
        grid: m.grid.clone(),
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorSpec;

    fn lap() -> OperatorSpec {
        OperatorSpec::laplacian(EllipticityPair::new(1.0, 1.0).unwrap()).unwrap()
    }

    fn gm(v: f64) -> Gamma {
        Gamma::new(v).unwrap()
    }

    #[test]
    fn cfl_examples() {
        let e = EllipticityPair::new(1.0, 1.0).unwrap();
        let s = SpatialGrid::new(2, 1.0 / 16.0, 1.0).unwrap();
        let h: f64 = 1.0 / 16.0;
        assert!((cfl_dt(&s, gm(0.0), e, 1.0) - 1.0 / 1024.0).abs() < 1e-18);
        assert!((cfl_dt(&s, gm(-1.0), e, 1.0) - h.powi(3) / 4.0).abs() < 1e-18);
        assert!((cfl_dt(&s, gm(0.5), e, 1.0) - h * h / 4.0).abs() < 1e-18);
        // a cap on the singular weight relaxes the step
        assert!(cfl_dt_capped(&s, gm(-1.0), e, 1.0, Some(4.0)) > cfl_dt(&s, gm(-1.0), e, 1.0));
    }

    #[test]
    fn constants_are_fixed_points() {
        for key in ["laplacian", "pucci+", "pucci-"] {
            let op = OperatorSpec::from_key(key, EllipticityPair::new(0.5, 2.0).unwrap()).unwrap();
            let prob = Problem::new(gm(0.5), op, 2, |_, _| 0.0, |_, _| 2.5);
            let s = SpatialGrid::new(2, 0.125, 1.0).unwrap();
            let state = vec![2.5; s.len()];
            let dt = cfl_dt(&s, prob.gamma, prob.op.ellipticity, 1.0);
            let next = step(&s, &state, &prob, 0.0, dt, None).unwrap();
            assert!(next.iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn step_refuses_non_monotone_dt() {
        let prob = Problem::new(gm(0.0), lap(), 2, |_, _| 0.0, |_, _| 0.0);
        let s = SpatialGrid::new(2, 0.125, 1.0).unwrap();
        let dt = 4.0 * cfl_dt(&s, prob.gamma, prob.op.ellipticity, 1.0);
        let r = step(&s, &vec![0.0; s.len()], &prob, 0.0, dt, None);
        assert!(matches!(r, Err(SolverError::NonMonotone { .. })));
        let r = solve_cauchy_dirichlet(&prob, &SchemeConfig::new(0.125).with_safety(4.0));
        assert!(matches!(r, Err(SolverError::NonMonotone { .. })));
    }

    #[test]
    fn step_is_monotone_in_neighbours() {
        let op = OperatorSpec::from_key("pucci+", EllipticityPair::new(0.5, 2.0).unwrap()).unwrap();
        let prob = Problem::new(gm(-1.0), op, 2, |x, _| x[0], |_, _| 0.0);
        let s = SpatialGrid::new(2, 0.125, 1.0).unwrap();
        let u: Vec<f64> = (0..s.len()).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
        let mut v = u.clone();
        for (i, x) in v.iter_mut().enumerate() {
            if !s.is_boundary(i) {
                *x += ((i * 31) % 5) as f64 * 0.01;
            }
        }
        let dt = cfl_dt(&s, prob.gamma, prob.op.ellipticity, 1.0);
        let a = step(&s, &u, &prob, 0.0, dt, None).unwrap();
        let b = step(&s, &v, &prob, 0.0, dt, None).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
    }

    #[test]
    fn zero_data_gives_zero() {
        let prob = Problem::new(gm(0.5), lap(), 2, |_, _| 0.0, |_, _| 0.0).with_window(-0.25, 0.25);
        let r = solve_cauchy_dirichlet(&prob, &SchemeConfig::new(0.125)).unwrap();
        assert!(r.field.values().iter().all(|&v| v == 0.0));
        assert!(r.stability_margin >= 0.0);
    }

    #[test]
    fn boundary_matches_data_bit_for_bit() {
        let prob = Problem::new(gm(0.5), lap(), 2, |_, _| 1.0, |x, t| (x[0] + 2.0 * x[1]).sin() + t * t).with_window(-0.5, 0.5);
        let r = solve_cauchy_dirichlet(&prob, &SchemeConfig::new(0.125).with_stride(3)).unwrap();
        let f = &r.field;
        for (k, idx, p, v) in f.samples() {
            if k == 0 || f.space.is_boundary(idx) {
                assert_eq!(v, (prob.boundary)(p.space(), p.t));
            }
        }
        assert_eq!(f.final_time(), 0.0);
    }

    #[test]
    fn perron_examples() {
        let env = PerronEnvelope::from_norms(0.0, 0.0);
        assert_eq!(env.upper(0.3), 0.0);
        let env = PerronEnvelope::from_norms(0.5, 0.5);
        assert!((env.upper(0.0) - std::f64::consts::E).abs() < 1e-15);
        let env = PerronEnvelope::from_norms(1.0, 1.0);
        assert_eq!(env.upper(-1.0), 2.0);
        assert_eq!(env.lower(-1.0), -2.0);
    }

    #[test]
    fn perron_bounds_agree_with_march_norms() {
        let prob = Problem::new(gm(0.5), lap(), 2, |x, _| x[1] - 0.3, |x, t| x[0] * (1.0 + t)).with_window(-1.0, 0.5);
        let r = solve_cauchy_dirichlet(&prob, &SchemeConfig::new(0.25)).unwrap();
        let env = perron_bounds(&prob, &r.grid);
        assert!((env.forcing_sup - r.envelope.forcing_sup).abs() < 1e-15);
        assert!((env.boundary_sup - r.envelope.boundary_sup).abs() < 1e-15);
        assert_eq!(env.violations(&r.field), 0);
        let (lo, hi) = env.fields(&r.field).unwrap();
        assert!(lo.values().iter().zip(r.field.values()).all(|(a, b)| a <= b));
        assert!(hi.values().iter().zip(r.field.values()).all(|(a, b)| a >= b));
    }

    #[test]
    fn non_finite_data_aborts() {
        let prob = Problem::new(gm(0.5), lap(), 1, |x, _| if x[0] > 0.4 { f64::INFINITY } else { 0.0 }, |_, _| 0.0);
        let r = solve_cauchy_dirichlet(&prob, &SchemeConfig::new(0.125));
        assert!(matches!(r, Err(SolverError::NonFinite { step: 1, .. })), "{r:?}");
    }
}
