//! Trajectory generation, irregular observation sampling, noise, and
//! normalization.

mod io;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_dataset, write_dataset, DatasetHeader, DATASET_FORMAT, SCHEMA_VERSION};

use crate::dynamics::{integrate_subsampled, DynamicsError, Scheme, StateVector, TimeGrid, Trajectory};
use crate::graph::{sample_graph, GraphError, InteractionGraph};
use crate::physics::{SpringPotential, SystemKind, SystemSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error("trajectory {index}: {source}")]
    Simulation {
        index: usize,
        #[source]
        source: DynamicsError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: schema version {found} is not supported (expected {expected})")]
    Version { line: usize, found: u32, expected: u32 },
    #[error("line {line}: timestamps are not strictly increasing at index {index}")]
    NonMonotone { line: usize, index: usize },
    #[error("sample {index}: {message}")]
    Sample { index: usize, message: String },
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub system: SystemSpec,
    pub scheme: Scheme,
    pub dt: f64,
    pub raw_steps: usize,
    pub subsample: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Number of leading stored points that form the observation window.
    pub condition_len: usize,
    pub obs_min: usize,
    pub obs_max: usize,
    /// Standard deviation of spring initial positions and momenta.
    pub init_scale: f64,
    /// Pendulum initial angles are drawn from `[-angle_range, angle_range]`.
    pub angle_range: f64,
    /// When set, each multi-agent spring trajectory gets its own coupling
    /// graph with this edge probability.
    pub edge_prob: Option<f64>,
    /// Standard deviation of additive observation noise, in raw units.
    pub noise: f64,
    pub seed: u64,
}

impl DatasetConfig {
    /// Small spring dataset used by the acceptance runs: 200/50 split,
    /// 30 conditioning points and room for 60 predicted points.
    pub fn desk_scale(kind: SystemKind, n_agents: usize) -> Self {
        let system = SystemSpec::new(kind, n_agents);
        let (scheme, dt, raw_steps, subsample) = match kind {
            SystemKind::TriplePendulum => (Scheme::Rk4, 1e-4, 9000, 100),
            SystemKind::Attractor => (Scheme::Rk4, 0.03, 900, 10),
            _ => (Scheme::Euler, 1e-3, 9000, 100),
        };
        Self {
            system,
            scheme,
            dt,
            raw_steps,
            subsample,
            n_train: 200,
            n_test: 50,
            condition_len: 30,
            obs_min: 20,
            obs_max: 26,
            init_scale: 1.0,
            angle_range: 1.0,
            edge_prob: (kind.is_spring() && n_agents > 1).then_some(0.5),
            noise: if kind == SystemKind::Attractor { 0.05 } else { 0.0 },
            seed: 0,
        }
    }

    /// Stored points per trajectory.
    pub fn n_points(&self) -> usize {
        self.raw_steps / self.subsample.max(1) + 1
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        self.system
            .validate()
            .map_err(|e| DataError::Config(e.to_string()))?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.subsample == 0 || self.raw_steps == 0 || self.raw_steps % self.subsample != 0 {
            return bad(format!(
                "raw_steps ({}) must be a positive multiple of subsample ({})",
                self.raw_steps, self.subsample
            ));
        }
        if self.n_train + self.n_test == 0 {
            return bad("at least one trajectory is required".into());
        }
        if self.condition_len == 0 || self.condition_len >= self.n_points() {
            return bad(format!(
                "condition_len ({}) must be between 1 and {} (the number of stored points minus one)",
                self.condition_len,
                self.n_points() - 1
            ));
        }
        if self.obs_min == 0 || self.obs_min > self.obs_max || self.obs_max > self.condition_len {
            return bad(format!(
                "observation counts need 1 <= obs_min ({}) <= obs_max ({}) <= condition_len ({})",
                self.obs_min, self.obs_max, self.condition_len
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be nonnegative, got {}", self.noise));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be nonnegative, got {}", self.init_scale));
        }
        if !(self.angle_range >= 0.0 && self.angle_range.is_finite()) {
            return bad(format!("angle_range must be nonnegative, got {}", self.angle_range));
        }
        if let Some(p) = self.edge_prob {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("edge_prob must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One stored trajectory. `states` are in raw system units; divide by the
/// dataset scale to obtain model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub schema_version: u32,
    pub split: Split,
    pub system: SystemKind,
    pub params: SystemSpec,
    pub seed: u64,
    /// Index of this trajectory's random streams under `seed`.
    pub stream: u64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub scale: f64,
    /// Per agent, sorted indices into the observation window.
    pub observed: Vec<Vec<usize>>,
}

impl TrajectoryRecord {
    pub fn n_agents(&self) -> usize {
        self.params.layout().0
    }

    pub fn agent_dim(&self) -> usize {
        self.params.agent_dim()
    }

    /// Normalized per-agent observations at the recorded indices.
    pub fn observation_set(&self) -> ObservationSet {
        let d = self.agent_dim();
        let agents = self
            .observed
            .iter()
            .enumerate()
            .map(|(a, idx)| {
                idx.iter()
                    .map(|&k| Observation {
                        time: self.times[k],
                        features: self.states[k][a * d..(a + 1) * d]
                            .iter()
                            .map(|v| v / self.scale)
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        ObservationSet { agents }
    }

    /// Builds a model sample that conditions on the observation window and
    /// predicts `predict_len` points starting at index `condition_len`.
    pub fn to_sample(&self, condition_len: usize, predict_len: usize) -> Result<Sample, String> {
        let end = condition_len + predict_len;
        if predict_len == 0 || end > self.times.len() {
            return Err(format!(
                "needs {end} points for {predict_len} predictions but the trajectory has {}",
                self.times.len()
            ));
        }
        let targets = self.states[condition_len..end]
            .iter()
            .map(|s| s.iter().map(|v| v / self.scale).collect())
            .collect();
        Ok(Sample {
            n_agents: self.n_agents(),
            feat_dim: self.agent_dim(),
            graph: self.model_graph(),
            obs: self.observation_set(),
            times: self.times[condition_len..end].to_vec(),
            targets,
        })
    }

    fn model_graph(&self) -> InteractionGraph {
        let n = self.n_agents();
        if self.params.kind.is_spring() {
            self.params.coupling.clone()
        } else {
            InteractionGraph::complete(n)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub features: Vec<f64>,
}

/// Irregular per-agent observations of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub agents: Vec<Vec<Observation>>,
}

/// Model-ready view of a trajectory: normalized observations plus the
/// normalized targets on a uniform prediction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub n_agents: usize,
    pub feat_dim: usize,
    pub graph: InteractionGraph,
    pub obs: ObservationSet,
    /// Prediction times; `times[0]` is where the latent state is anchored.
    pub times: Vec<f64>,
    /// Flat `n_agents * feat_dim` target per prediction time.
    pub targets: Vec<Vec<f64>>,
}

impl Sample {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            return 0.0;
        }
        (self.times[self.times.len() - 1] - self.times[0]) / self.n_steps() as f64
    }

    /// The same sample with only the first `len` prediction points.
    pub fn truncated(&self, len: usize) -> Sample {
        let len = len.min(self.times.len());
        Sample {
            times: self.times[..len].to_vec(),
            targets: self.targets[..len].to_vec(),
            ..self.clone()
        }
    }
}

/// A header plus its records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TrajectoryRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn samples(&self, split: Split, predict_len: usize) -> Result<Vec<Sample>, DataError> {
        let c = self.header.condition_len;
        self.split(split)
            .enumerate()
            .map(|(index, r)| r.to_sample(c, predict_len).map_err(|message| DataError::Sample { index, message }))
            .collect()
    }
}

/// Purposes that each get an independent random stream per trajectory.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Initial = 0,
    Graph = 1,
    Observed = 2,
    Noise = 3,
}

fn rng(seed: u64, trajectory: u64, purpose: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(trajectory * 4 + purpose as u64);
    r
}

/// Samples an initial state for `spec`.
pub fn sample_initial_state(
    spec: &SystemSpec,
    init_scale: f64,
    angle_range: f64,
    rng: &mut impl Rng,
) -> StateVector {
    let (n, qd, pd) = spec.layout();
    match spec.kind {
        SystemKind::TriplePendulum => {
            let angles: Vec<f64> = (0..3)
                .map(|_| if angle_range > 0.0 { rng.random_range(-angle_range..=angle_range) } else { 0.0 })
                .collect();
            StateVector::from_qp(3, &angles, &[0.0; 3]).expect("pendulum layout")
        }
        SystemKind::Attractor => {
            let z = Uniform::new_inclusive(1.0, 3.0).expect("valid range").sample(rng);
            StateVector::new(1, 3, 0, vec![0.0, 0.0, z]).expect("attractor layout")
        }
        _ => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let data = (0..n * (qd + pd)).map(|_| init_scale * normal.sample(rng)).collect();
            StateVector::new(n, qd, pd, data).expect("spring layout")
        }
    }
}

/// Integrates `spec` from `initial` and keeps every `subsample_every`-th
/// state.
pub fn generate_trajectory(
    spec: &SystemSpec,
    initial: &StateVector,
    scheme: Scheme,
    dt: f64,
    raw_steps: usize,
    subsample_every: usize,
) -> Result<Trajectory, DynamicsError> {
    let grid = TimeGrid::new(0.0, dt, raw_steps)?;
    integrate_subsampled(spec, initial, &grid, scheme, subsample_every)
}

/// Per agent: draws a count uniformly from `[min, max]`, then that many
/// distinct indices from `0..window`, sorted.
pub fn irregular_subsample(
    n_agents: usize,
    window: usize,
    min: usize,
    max: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>, DataError> {
    if min == 0 || min > max || max > window {
        return Err(DataError::Config(format!(
            "cannot draw between {min} and {max} observations from a window of {window}"
        )));
    }
    Ok((0..n_agents)
        .map(|_| {
            let count = rng.random_range(min..=max);
            let mut idx = index::sample(rng, window, count).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every state component. `sigma = 0`
/// returns the input unchanged.
pub fn add_gaussian_noise(traj: &Trajectory, sigma: f64, rng: &mut impl Rng) -> Trajectory {
    if sigma == 0.0 {
        return traj.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and nonnegative");
    let states = traj
        .states
        .iter()
        .map(|s| {
            let mut out = s.clone();
            for v in out.as_mut_slice() {
                *v += normal.sample(rng);
            }
            out
        })
        .collect();
    Trajectory {
        times: traj.times.clone(),
        states,
    }
}

/// Largest absolute feature over all records, so that normalized features
/// lie in `[-1, 1]`. An all-zero dataset gets scale 1.
pub fn normalization_scale<'a>(states: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let m = states
        .into_iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

struct Generated {
    spec: SystemSpec,
    traj: Trajectory,
    observed: Vec<Vec<usize>>,
}

fn generate_one(cfg: &DatasetConfig, i: usize) -> Result<Generated, DataError> {
    let stream = i as u64;
    let mut spec = cfg.system.clone();
    if let (Some(p), Some(SpringPotential::Pairwise)) = (cfg.edge_prob, spec.spring_potential()) {
        let mut g = rng(cfg.seed, stream, Stream::Graph);
        spec.coupling = sample_graph(spec.n_agents, p, g.random())?;
    }
    let x0 = sample_initial_state(
        &spec,
        cfg.init_scale,
        cfg.angle_range,
        &mut rng(cfg.seed, stream, Stream::Initial),
    );
    let traj = generate_trajectory(&spec, &x0, cfg.scheme, cfg.dt, cfg.raw_steps, cfg.subsample)
        .map_err(|source| DataError::Simulation { index: i, source })?;
    let traj = add_gaussian_noise(&traj, cfg.noise, &mut rng(cfg.seed, stream, Stream::Noise));
    let observed = irregular_subsample(
        spec.layout().0,
        cfg.condition_len,
        cfg.obs_min,
        cfg.obs_max,
        &mut rng(cfg.seed, stream, Stream::Observed),
    )?;
    Ok(Generated { spec, traj, observed })
}

/// Generates the train and test splits. Work is spread over the current
/// rayon pool; every trajectory owns its random streams so the output does
/// not depend on the number of threads.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let total = cfg.n_train + cfg.n_test;
    let generated: Vec<Generated> = (0..total)
        .into_par_iter()
        .map(|i| generate_one(cfg, i))
        .collect::<Result<_, _>>()?;
    let scale = normalization_scale(
        generated
            .iter()
            .flat_map(|g| g.traj.states.iter().map(|s| s.as_slice())),
    );
    let records = generated
        .into_iter()
        .enumerate()
        .map(|(i, g)| TrajectoryRecord {
            schema_version: SCHEMA_VERSION,
            split: if i < cfg.n_train { Split::Train } else { Split::Test },
            system: g.spec.kind,
            seed: cfg.seed,
            stream: i as u64,
            times: g.traj.times,
            states: g.traj.states.into_iter().map(StateVector::into_vec).collect(),
            scale,
            observed: g.observed,
            params: g.spec,
        })
        .collect::<Vec<_>>();
    Ok(Dataset {
        header: DatasetHeader::new(cfg, records.len(), scale),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_window_observes_everything() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let idx = irregular_subsample(3, 7, 7, 7, &mut r).unwrap();
        for a in idx {
            assert_eq!(a, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = StateVector::from_qp(1, &[0.3], &[-0.1]).unwrap();
        let t = Trajectory {
            times: vec![0.0],
            states: vec![s],
        };
        let mut r = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(add_gaussian_noise(&t, 0.0, &mut r), t);
    }

    #[test]
    fn desk_config_is_valid() {
        for kind in SystemKind::ALL {
            DatasetConfig::desk_scale(kind, 5).validate().unwrap();
        }
    }
}
