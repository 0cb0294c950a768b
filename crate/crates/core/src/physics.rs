//! Equations of motion and energies for the simulated systems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, StateVector, VectorField};
use crate::graph::InteractionGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid system parameters: {0}")]
    InvalidSpec(String),
    #[error("state layout ({n_agents} agents, q {q_dim}, p {p_dim}) does not match {kind}")]
    Layout {
        kind: SystemKind,
        n_agents: usize,
        q_dim: usize,
        p_dim: usize,
    },
    #[error("pendulum mass matrix is singular (denominator {denominator:e})")]
    Singular { denominator: f64 },
    #[error("{op} is not defined for {kind}")]
    Unsupported { kind: SystemKind, op: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    SimpleSpring,
    ForcedSpring,
    DampedSpring,
    TriplePendulum,
    Attractor,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::SimpleSpring,
        SystemKind::ForcedSpring,
        SystemKind::DampedSpring,
        SystemKind::TriplePendulum,
        SystemKind::Attractor,
    ];

    pub fn is_spring(self) -> bool {
        matches!(
            self,
            SystemKind::SimpleSpring | SystemKind::ForcedSpring | SystemKind::DampedSpring
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::SimpleSpring => "simple_spring",
            SystemKind::ForcedSpring => "forced_spring",
            SystemKind::DampedSpring => "damped_spring",
            SystemKind::TriplePendulum => "triple_pendulum",
            SystemKind::Attractor => "attractor",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown system `{s}` (expected one of simple_spring, forced_spring, \
                     damped_spring, triple_pendulum, attractor)"
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reversibility {
    ConservativeReversible,
    NonconservativeReversible,
    NonconservativeIrreversible,
    Unknown,
}

pub fn classify_reversibility(kind: SystemKind) -> Reversibility {
    match kind {
        SystemKind::SimpleSpring | SystemKind::TriplePendulum => Reversibility::ConservativeReversible,
        SystemKind::ForcedSpring | SystemKind::Attractor => Reversibility::NonconservativeReversible,
        SystemKind::DampedSpring => Reversibility::NonconservativeIrreversible,
    }
}

/// How a spring system's potential is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpringPotential {
    /// Each mass tied to the origin: `-k q_i`.
    Anchored,
    /// Springs along graph edges: `-k (q_i - q_j)`.
    Pairwise,
}

fn default_dim() -> usize {
    2
}

/// A physical system and its parameters. Fields not used by `kind` are kept
/// so a spec round-trips unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub n_agents: usize,
    /// Spatial dimension of each spring mass.
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub mass: f64,
    pub spring_k: f64,
    pub friction: f64,
    pub force_k1: f64,
    pub force_omega: f64,
    pub stick_length: f64,
    pub gravity: f64,
    pub coupling: InteractionGraph,
}

impl SystemSpec {
    /// Default parameters for `kind`. Spring systems start fully coupled;
    /// the pendulum always has three links and the attractor one state.
    pub fn new(kind: SystemKind, n_agents: usize) -> Self {
        let n_agents = match kind {
            SystemKind::TriplePendulum => 3,
            SystemKind::Attractor => 1,
            _ => n_agents,
        };
        Self {
            kind,
            n_agents,
            dim: 2,
            mass: 1.0,
            spring_k: 0.1,
            friction: 10.0,
            force_k1: 10.0,
            force_omega: 1.0,
            stick_length: 1.0,
            gravity: 9.8,
            coupling: InteractionGraph::complete(n_agents),
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_coupling(mut self, coupling: InteractionGraph) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |msg: String| Err(PhysicsError::InvalidSpec(msg));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        match self.kind {
            SystemKind::TriplePendulum if self.n_agents != 3 => {
                return bad(format!("triple_pendulum has 3 links, got n_agents = {}", self.n_agents));
            }
            SystemKind::Attractor if self.n_agents != 1 => {
                return bad(format!("attractor has a single state, got n_agents = {}", self.n_agents));
            }
            _ => {}
        }
        if self.kind.is_spring() && self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        let fields = [
            ("mass", self.mass),
            ("spring_k", self.spring_k),
            ("friction", self.friction),
            ("force_k1", self.force_k1),
            ("force_omega", self.force_omega),
            ("stick_length", self.stick_length),
            ("gravity", self.gravity),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if self.mass <= 0.0 {
            return bad(format!("mass must be positive, got {}", self.mass));
        }
        if self.spring_k < 0.0 {
            return bad(format!("spring_k must be nonnegative, got {}", self.spring_k));
        }
        if self.friction < 0.0 {
            return bad(format!("friction must be nonnegative, got {}", self.friction));
        }
        if self.kind == SystemKind::TriplePendulum && (self.stick_length <= 0.0 || self.gravity <= 0.0) {
            return bad("stick_length and gravity must be positive".into());
        }
        if self.kind.is_spring() && self.coupling.n() != self.n_agents {
            return bad(format!(
                "coupling graph has {} nodes but n_agents = {}",
                self.coupling.n(),
                self.n_agents
            ));
        }
        Ok(())
    }

    /// `(n_agents, q_dim, p_dim)` of this system's states.
    pub fn layout(&self) -> (usize, usize, usize) {
        match self.kind {
            SystemKind::TriplePendulum => (3, 1, 1),
            SystemKind::Attractor => (1, 3, 0),
            _ => (self.n_agents, self.dim, self.dim),
        }
    }

    /// Features per agent in a stored trajectory.
    pub fn agent_dim(&self) -> usize {
        let (_, q, p) = self.layout();
        q + p
    }

    pub fn spring_potential(&self) -> Option<SpringPotential> {
        match (self.kind.is_spring(), self.n_agents) {
            (false, _) => None,
            (true, 1) => Some(SpringPotential::Anchored),
            (true, _) => Some(SpringPotential::Pairwise),
        }
    }

    pub fn reversibility(&self) -> Reversibility {
        classify_reversibility(self.kind)
    }

    fn check_layout(&self, state: &StateVector) -> Result<(), PhysicsError> {
        let (n, q, p) = self.layout();
        if state.n_agents() != n || state.q_dim() != q || state.p_dim() != p {
            return Err(PhysicsError::Layout {
                kind: self.kind,
                n_agents: state.n_agents(),
                q_dim: state.q_dim(),
                p_dim: state.p_dim(),
            });
        }
        Ok(())
    }

    /// Time derivative `(dq/dt, dp/dt)` at `state`.
    pub fn derivative(&self, state: &StateVector, t: f64) -> Result<StateVector, PhysicsError> {
        self.check_layout(state)?;
        match self.kind {
            SystemKind::TriplePendulum => pendulum_derivative(self, state),
            SystemKind::Attractor => {
                let s = state.as_slice();
                let (x, y, z) = (s[0], s[1], s[2]);
                let d = vec![1.0 + y * z, -x * z, y * y + 2.0 * y * z];
                Ok(StateVector::new(1, 3, 0, d).expect("attractor layout"))
            }
            _ => Ok(self.spring_derivative(state, t)),
        }
    }

    fn spring_derivative(&self, state: &StateVector, t: f64) -> StateVector {
        let mut d = state.zeros_like();
        let (m, k) = (self.mass, self.spring_k);
        let anchored = self.n_agents == 1;
        let forcing = match self.kind {
            SystemKind::ForcedSpring => self.force_k1 * (self.force_omega * t).cos(),
            _ => 0.0,
        };
        let gamma = match self.kind {
            SystemKind::DampedSpring => self.friction,
            _ => 0.0,
        };
        for i in 0..self.n_agents {
            for (dq, p) in d.q_mut(i).iter_mut().zip(state.p(i)) {
                *dq = p / m;
            }
            let qi = state.q(i);
            let pi = state.p(i);
            let mut force: Vec<f64> = if anchored {
                qi.iter().map(|q| -k * q).collect()
            } else {
                vec![0.0; self.dim]
            };
            if !anchored {
                for j in self.coupling.neighbors(i) {
                    for (f, (a, b)) in force.iter_mut().zip(qi.iter().zip(state.q(j))) {
                        *f -= k * (a - b);
                    }
                }
            }
            for ((dp, f), p) in d.p_mut(i).iter_mut().zip(&force).zip(pi) {
                *dp = f - gamma * p / m - forcing;
            }
        }
        d
    }

    /// Energy split into the mechanical part and the explicitly
    /// time-dependent part. For the damped spring `dissipated` is the
    /// caller's running integral of `(γ/m) Σ p²/m dt`; it is ignored for
    /// other kinds.
    pub fn hamiltonian(&self, state: &StateVector, t: f64, dissipated: f64) -> Result<Energy, PhysicsError> {
        if !self.kind.is_spring() {
            return Err(PhysicsError::Unsupported {
                kind: self.kind,
                op: "hamiltonian",
            });
        }
        self.check_layout(state)?;
        let mechanical = self.mechanical_energy(state);
        let time_dependent = match self.kind {
            SystemKind::ForcedSpring => {
                let c = self.force_k1 * (self.force_omega * t).cos();
                (0..self.n_agents).map(|i| state.q(i).iter().sum::<f64>() * c).sum()
            }
            SystemKind::DampedSpring => dissipated,
            _ => 0.0,
        };
        Ok(Energy {
            mechanical,
            time_dependent,
            total: mechanical + time_dependent,
        })
    }

    /// Kinetic plus spring potential energy of a spring system.
    pub fn mechanical_energy(&self, state: &StateVector) -> f64 {
        let m = self.mass;
        let k = self.spring_k;
        let kinetic: f64 = (0..self.n_agents)
            .map(|i| state.p(i).iter().map(|p| p * p).sum::<f64>() / (2.0 * m))
            .sum();
        let potential: f64 = if self.n_agents == 1 {
            0.5 * k * state.q(0).iter().map(|q| q * q).sum::<f64>()
        } else {
            self.coupling
                .edges()
                .iter()
                .map(|&(i, j)| {
                    let d2: f64 = state.q(i).iter().zip(state.q(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    0.5 * k * d2
                })
                .sum()
        };
        kinetic + potential
    }
}

impl VectorField for SystemSpec {
    fn eval(&self, state: &StateVector, t: f64) -> Result<StateVector, DynamicsError> {
        Ok(self.derivative(state, t)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub mechanical: f64,
    pub time_dependent: f64,
    pub total: f64,
}

/// Below this magnitude the pendulum's closed-form denominator is treated
/// as singular.
pub const PENDULUM_SINGULAR_EPS: f64 = 1e-12;

fn pendulum_angles(state: &StateVector) -> ([f64; 3], [f64; 3]) {
    let s = state.as_slice();
    ([s[0], s[2], s[4]], [s[1], s[3], s[5]])
}

/// Angular velocities from angles and conjugate momenta, in closed form.
fn pendulum_velocities(spec: &SystemSpec, th: [f64; 3], p: [f64; 3]) -> Result<[f64; 3], PhysicsError> {
    let (m, l) = (spec.mass, spec.stick_length);
    let [t1, t2, t3] = th;
    let [p1, p2, p3] = p;
    let core = 81.0 * (2.0 * (t1 - t2)).cos() - 9.0 * (2.0 * (t1 - t3)).cos() + 45.0 * (2.0 * (t2 - t3)).cos() - 169.0;
    if core.abs() < PENDULUM_SINGULAR_EPS {
        return Err(PhysicsError::Singular { denominator: core });
    }
    let den = m * l * l * core;
    let w1 = 6.0
        * (9.0 * p1 * (2.0 * (t2 - t3)).cos() + 27.0 * p2 * (t1 - t2).cos()
            - 9.0 * p2 * (t1 + t2 - 2.0 * t3).cos()
            + 21.0 * p3 * (t1 - t3).cos()
            - 27.0 * p3 * (t1 - 2.0 * t2 + t3).cos()
            - 23.0 * p1)
        / den;
    let w2 = 6.0
        * (27.0 * p1 * (t1 - t2).cos() - 9.0 * p1 * (t1 + t2 - 2.0 * t3).cos()
            + 9.0 * p2 * (2.0 * (t1 - t3)).cos()
            - 27.0 * p3 * (2.0 * t1 - t2 - t3).cos()
            + 57.0 * p3 * (t2 - t3).cos()
            - 47.0 * p2)
        / den;
    let w3 = 6.0
        * (21.0 * p1 * (t1 - t3).cos() - 27.0 * p1 * (t1 - 2.0 * t2 + t3).cos()
            - 27.0 * p2 * (2.0 * t1 - t2 - t3).cos()
            + 57.0 * p2 * (t2 - t3).cos()
            + 81.0 * p3 * (2.0 * (t1 - t2)).cos()
            - 143.0 * p3)
        / den;
    Ok([w1, w2, w3])
}

fn pendulum_derivative(spec: &SystemSpec, state: &StateVector) -> Result<StateVector, PhysicsError> {
    let (m, l, g) = (spec.mass, spec.stick_length, spec.gravity);
    let (th, p) = pendulum_angles(state);
    let [t1, t2, t3] = th;
    let [w1, w2, w3] = pendulum_velocities(spec, th, p)?;
    let dp1 = -0.5 * m * l * (3.0 * w1 * w2 * l * (t1 - t2).sin() + w1 * w3 * l * (t1 - t3).sin() + 5.0 * g * t1.sin());
    let dp2 = -0.5 * m * l * (-3.0 * w1 * w2 * l * (t1 - t2).sin() + w2 * w3 * l * (t2 - t3).sin() + 3.0 * g * t2.sin());
    // Signs follow from dL/dθ3 of the pendulum Lagrangian.
    let dp3 = -0.5 * m * l * (-w1 * w3 * l * (t1 - t3).sin() - w2 * w3 * l * (t2 - t3).sin() + g * t3.sin());
    Ok(StateVector::new(3, 1, 1, vec![w1, dp1, w2, dp2, w3, dp3]).expect("pendulum layout"))
}

/// Mass matrix of the three uniform rods, `p = M θ̇`.
fn pendulum_mass_matrix(spec: &SystemSpec, th: [f64; 3]) -> [[f64; 3]; 3] {
    let s = spec.mass * spec.stick_length * spec.stick_length / 6.0;
    let c12 = (th[0] - th[1]).cos();
    let c13 = (th[0] - th[2]).cos();
    let c23 = (th[1] - th[2]).cos();
    [
        [14.0 * s, 9.0 * c12 * s, 3.0 * c13 * s],
        [9.0 * c12 * s, 8.0 * s, 3.0 * c23 * s],
        [3.0 * c13 * s, 3.0 * c23 * s, 2.0 * s],
    ]
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Kinetic plus gravitational energy of the triple pendulum. Velocities are
/// recovered by solving the mass-matrix system directly rather than through
/// the closed-form expressions used by the integrator.
pub fn pendulum_energy(spec: &SystemSpec, state: &StateVector) -> Result<f64, PhysicsError> {
    if spec.kind != SystemKind::TriplePendulum {
        return Err(PhysicsError::Unsupported {
            kind: spec.kind,
            op: "pendulum_energy",
        });
    }
    spec.check_layout(state)?;
    let (th, p) = pendulum_angles(state);
    let mm = pendulum_mass_matrix(spec, th);
    let w = solve3(mm, p).ok_or(PhysicsError::Singular { denominator: 0.0 })?;
    let mut kinetic = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            kinetic += 0.5 * w[i] * mm[i][j] * w[j];
        }
    }
    let (m, l, g) = (spec.mass, spec.stick_length, spec.gravity);
    let potential = -m * g * l * (2.5 * th[0].cos() + 1.5 * th[1].cos() + 0.5 * th[2].cos());
    Ok(kinetic + potential)
}

/// Exact state of a single anchored mass, `dp/dt = -k q`.
pub fn analytic_solution_simple_spring_1d(q0: f64, p0: f64, k: f64, m: f64, t: f64) -> (f64, f64) {
    let w = (k / m).sqrt();
    let (s, c) = (w * t).sin_cos();
    let q = q0 * c + p0 / (m * w) * s;
    let p = m * (-q0 * w * s + p0 / m * c);
    (q, p)
}
