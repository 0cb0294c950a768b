//! State vectors, time grids, and fixed-step integrators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::PhysicsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("state dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in component {component}")]
    NonFinite { component: usize },
    #[error("integration failed at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<DynamicsError>,
    },
    #[error(transparent)]
    Field(#[from] PhysicsError),
}

/// Positions and momenta for `n_agents` agents, stored agent-major with each
/// agent's `q` block followed by its `p` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    n_agents: usize,
    q_dim: usize,
    p_dim: usize,
    data: Vec<f64>,
}

impl StateVector {
    pub fn new(n_agents: usize, q_dim: usize, p_dim: usize, data: Vec<f64>) -> Result<Self, DynamicsError> {
        let expected = n_agents * (q_dim + p_dim);
        if n_agents == 0 || q_dim + p_dim == 0 {
            return Err(DynamicsError::DimensionMismatch { expected: 1, actual: 0 });
        }
        if data.len() != expected {
            return Err(DynamicsError::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            n_agents,
            q_dim,
            p_dim,
            data,
        })
    }

    pub fn zeros(n_agents: usize, q_dim: usize, p_dim: usize) -> Self {
        Self {
            n_agents,
            q_dim,
            p_dim,
            data: vec![0.0; n_agents * (q_dim + p_dim)],
        }
    }

    /// Builds a state from separate position and momentum arrays, each laid
    /// out agent by agent.
    pub fn from_qp(n_agents: usize, q: &[f64], p: &[f64]) -> Result<Self, DynamicsError> {
        if n_agents == 0 || q.len() % n_agents != 0 || p.len() % n_agents != 0 {
            return Err(DynamicsError::DimensionMismatch {
                expected: n_agents,
                actual: q.len() + p.len(),
            });
        }
        let (qd, pd) = (q.len() / n_agents, p.len() / n_agents);
        let mut data = Vec::with_capacity(q.len() + p.len());
        for i in 0..n_agents {
            data.extend_from_slice(&q[i * qd..(i + 1) * qd]);
            data.extend_from_slice(&p[i * pd..(i + 1) * pd]);
        }
        Self::new(n_agents, qd, pd, data)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn q_dim(&self) -> usize {
        self.q_dim
    }

    pub fn p_dim(&self) -> usize {
        self.p_dim
    }

    /// Features per agent.
    pub fn agent_dim(&self) -> usize {
        self.q_dim + self.p_dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        let d = self.agent_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn q(&self, i: usize) -> &[f64] {
        let d = self.agent_dim();
        &self.data[i * d..i * d + self.q_dim]
    }

    pub fn p(&self, i: usize) -> &[f64] {
        let d = self.agent_dim();
        &self.data[i * d + self.q_dim..(i + 1) * d]
    }

    pub fn q_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.agent_dim();
        let q = self.q_dim;
        &mut self.data[i * d..i * d + q]
    }

    pub fn p_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.agent_dim();
        let q = self.q_dim;
        &mut self.data[i * d + q..(i + 1) * d]
    }

    /// A zero state with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_agents, self.q_dim, self.p_dim)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.n_agents == other.n_agents && self.q_dim == other.q_dim && self.p_dim == other.p_dim
    }

    fn check_layout(&self, other: &Self) -> Result<(), DynamicsError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(DynamicsError::DimensionMismatch {
                expected: self.len(),
                actual: other.len(),
            })
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self, DynamicsError> {
        self.check_layout(other)?;
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o += a * v;
        }
        Ok(out)
    }

    /// Index of the first NaN or infinite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Euclidean distance over all components.
    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Momentum flip `(q, p) -> (q, -p)`.
pub fn reverse_state(state: &StateVector) -> StateVector {
    let mut out = state.clone();
    for i in 0..out.n_agents {
        for v in out.p_mut(i) {
            *v = -*v;
        }
    }
    out
}

/// Uniform grid `t_k = t0 + k * dt` for `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self, DynamicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidStep(dt));
        }
        if !t0.is_finite() {
            return Err(DynamicsError::InvalidGrid(format!("start time {t0} is not finite")));
        }
        if n_steps == 0 {
            return Err(DynamicsError::InvalidGrid("at least one step is required".into()));
        }
        Ok(Self { t0, dt, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Total span `n_steps * dt`.
    pub fn span(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Time coordinate of reverse index `j`. It starts at 0 and satisfies
    /// `reverse_time(K - k) == time(K) - time(k)`.
    pub fn reverse_time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Heun,
    #[default]
    Rk4,
}

impl Scheme {
    /// Global order of accuracy.
    pub fn order(self) -> u32 {
        match self {
            Scheme::Euler => 1,
            Scheme::Heun => 2,
            Scheme::Rk4 => 4,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Heun => "heun",
            Scheme::Rk4 => "rk4",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "heun" => Ok(Scheme::Heun),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(format!("unknown scheme `{other}` (expected euler, heun or rk4)")),
        }
    }
}

/// Time derivative of a state.
pub trait VectorField {
    fn eval(&self, state: &StateVector, t: f64) -> Result<StateVector, DynamicsError>;
}

impl<F> VectorField for F
where
    F: Fn(&StateVector, f64) -> Result<StateVector, DynamicsError>,
{
    fn eval(&self, state: &StateVector, t: f64) -> Result<StateVector, DynamicsError> {
        self(state, t)
    }
}

fn check_dt(dt: f64) -> Result<(), DynamicsError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidStep(dt))
    }
}

fn eval_checked<F: VectorField + ?Sized>(f: &F, s: &StateVector, t: f64) -> Result<StateVector, DynamicsError> {
    let d = f.eval(s, t)?;
    if !s.same_layout(&d) {
        return Err(DynamicsError::DimensionMismatch {
            expected: s.len(),
            actual: d.len(),
        });
    }
    match d.first_non_finite() {
        Some(component) => Err(DynamicsError::NonFinite { component }),
        None => Ok(d),
    }
}

fn finite(s: StateVector) -> Result<StateVector, DynamicsError> {
    match s.first_non_finite() {
        Some(component) => Err(DynamicsError::NonFinite { component }),
        None => Ok(s),
    }
}

pub fn euler_step<F: VectorField + ?Sized>(f: &F, s: &StateVector, t: f64, dt: f64) -> Result<StateVector, DynamicsError> {
    check_dt(dt)?;
    let k1 = eval_checked(f, s, t)?;
    finite(s.axpy(dt, &k1)?)
}

/// Explicit trapezoid (Heun) step.
pub fn heun_step<F: VectorField + ?Sized>(f: &F, s: &StateVector, t: f64, dt: f64) -> Result<StateVector, DynamicsError> {
    check_dt(dt)?;
    let k1 = eval_checked(f, s, t)?;
    let k2 = eval_checked(f, &s.axpy(dt, &k1)?, t + dt)?;
    let mut out = s.clone();
    for ((o, a), b) in out.data.iter_mut().zip(&k1.data).zip(&k2.data) {
        *o += 0.5 * dt * (a + b);
    }
    finite(out)
}

pub fn rk4_step<F: VectorField + ?Sized>(f: &F, s: &StateVector, t: f64, dt: f64) -> Result<StateVector, DynamicsError> {
    check_dt(dt)?;
    let h = 0.5 * dt;
    let k1 = eval_checked(f, s, t)?;
    let k2 = eval_checked(f, &s.axpy(h, &k1)?, t + h)?;
    let k3 = eval_checked(f, &s.axpy(h, &k2)?, t + h)?;
    let k4 = eval_checked(f, &s.axpy(dt, &k3)?, t + dt)?;
    let mut out = s.clone();
    let w = dt / 6.0;
    for i in 0..out.data.len() {
        out.data[i] += w * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
    }
    finite(out)
}

pub fn step<F: VectorField + ?Sized>(
    scheme: Scheme,
    f: &F,
    s: &StateVector,
    t: f64,
    dt: f64,
) -> Result<StateVector, DynamicsError> {
    match scheme {
        Scheme::Euler => euler_step(f, s, t, dt),
        Scheme::Heun => heun_step(f, s, t, dt),
        Scheme::Rk4 => rk4_step(f, s, t, dt),
    }
}

/// Timestamps and the states at those times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Integrates over `grid`, returning all `n_steps + 1` states.
pub fn integrate<F: VectorField + ?Sized>(
    f: &F,
    state0: &StateVector,
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<Trajectory, DynamicsError> {
    integrate_subsampled(f, state0, grid, scheme, 1)
}

/// Integrates over `grid` and keeps every `every`-th state. `n_steps` must be
/// a multiple of `every`.
pub fn integrate_subsampled<F: VectorField + ?Sized>(
    f: &F,
    state0: &StateVector,
    grid: &TimeGrid,
    scheme: Scheme,
    every: usize,
) -> Result<Trajectory, DynamicsError> {
    if every == 0 || grid.n_steps() % every != 0 {
        return Err(DynamicsError::InvalidGrid(format!(
            "{} steps are not divisible by subsample factor {every}",
            grid.n_steps()
        )));
    }
    if let Some(component) = state0.first_non_finite() {
        return Err(DynamicsError::NonFinite { component });
    }
    let kept = grid.n_steps() / every + 1;
    let mut times = Vec::with_capacity(kept);
    let mut states = Vec::with_capacity(kept);
    times.push(grid.time(0));
    states.push(state0.clone());
    let mut s = state0.clone();
    for k in 0..grid.n_steps() {
        s = step(scheme, f, &s, grid.time(k), grid.dt()).map_err(|e| DynamicsError::AtStep {
            step: k,
            source: Box::new(e),
        })?;
        if (k + 1) % every == 0 {
            times.push(grid.time(k + 1));
            states.push(s.clone());
        }
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_field(s: &StateVector, _t: f64) -> Result<StateVector, DynamicsError> {
        Ok(s.zeros_like())
    }

    #[test]
    fn zero_field_is_a_fixed_point() {
        let s = StateVector::from_qp(2, &[1.0, -2.0], &[0.5, 3.0]).unwrap();
        for scheme in [Scheme::Euler, Scheme::Heun, Scheme::Rk4] {
            assert_eq!(step(scheme, &zero_field, &s, 0.0, 0.1).unwrap(), s);
        }
    }

    #[test]
    fn layout_is_agent_major() {
        let s = StateVector::from_qp(2, &[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0]).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(s.q(1), &[3.0, 4.0]);
        assert_eq!(s.p(1), &[6.0]);
    }

    #[test]
    fn reverse_flips_momenta_only() {
        let s = StateVector::from_qp(2, &[1.0, 2.0], &[3.0, -4.0]).unwrap();
        let r = reverse_state(&s);
        assert_eq!(r.as_slice(), &[1.0, -3.0, 2.0, 4.0]);
    }

    #[test]
    fn non_finite_derivative_names_component() {
        let bad = |s: &StateVector, _t: f64| {
            let mut d = s.zeros_like();
            d.as_mut_slice()[1] = f64::NAN;
            Ok(d)
        };
        let s = StateVector::from_qp(1, &[1.0], &[0.0]).unwrap();
        assert_eq!(euler_step(&bad, &s, 0.0, 0.1), Err(DynamicsError::NonFinite { component: 1 }));
    }

    #[test]
    fn integrate_reports_failing_step() {
        let blowup = |s: &StateVector, t: f64| {
            let mut d = s.zeros_like();
            d.as_mut_slice()[0] = if t > 0.25 { f64::INFINITY } else { 1.0 };
            Ok(d)
        };
        let s = StateVector::from_qp(1, &[0.0], &[0.0]).unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 10).unwrap();
        match integrate(&blowup, &s, &grid, Scheme::Euler) {
            Err(DynamicsError::AtStep { step, .. }) => assert_eq!(step, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_reverse_identity() {
        let grid = TimeGrid::new(0.0, 0.013, 77).unwrap();
        let t = grid.span();
        for k in 0..=grid.n_steps() {
            let sum = grid.reverse_time(grid.n_steps() - k) + grid.time(k);
            assert!((sum - t).abs() <= 4.0 * f64::EPSILON * t, "k={k}");
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, f64::NAN, 3).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 0).is_err());
    }
}
