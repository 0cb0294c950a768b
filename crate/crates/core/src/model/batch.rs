use std::sync::Arc;

use treat_autodiff::Tensor;

use super::{encoder::temporal_encoding, EncoderKind, ModelConfig, ModelError};
use crate::data::Sample;

/// Several samples flattened into one disjoint graph. Agents of sample `s`
/// occupy rows `agent_offsets[s]..agent_offsets[s + 1]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n_samples: usize,
    pub n_agents: usize,
    pub agent_offsets: Vec<usize>,
    pub feat_dim: usize,
    /// `[observations, feat_dim]`.
    pub(crate) obs_x: Tensor,
    /// Owning agent of each observation.
    pub(crate) obs_agent: Arc<[usize]>,
    /// `1 / count` per agent, repeated across `enc_hidden` columns.
    pub(crate) inv_counts: Tensor,
    /// Temporal encoding of each observation's time relative to the anchor.
    pub(crate) obs_te: Tensor,
    pub(crate) attn_src: Arc<[usize]>,
    pub(crate) attn_dst: Arc<[usize]>,
    /// Temporal encoding of `t_src - t_dst` per attention edge.
    pub(crate) edge_te: Tensor,
    pub(crate) ode_src: Arc<[usize]>,
    pub(crate) ode_dst: Arc<[usize]>,
    pub dt: f64,
    pub n_steps: usize,
    /// Normalized targets per prediction time, `[n_agents, feat_dim]`.
    pub targets: Vec<Tensor>,
}

const DT_RTOL: f64 = 1e-9;

impl Batch {
    pub fn new(samples: &[&Sample], config: &ModelConfig) -> Result<Self, ModelError> {
        let first = samples.first().ok_or_else(|| ModelError::Batch("no samples".into()))?;
        let feat_dim = first.feat_dim;
        if feat_dim != config.input_dim || feat_dim != config.output_dim {
            return Err(ModelError::Mismatch(format!(
                "samples have {feat_dim} features per agent but the model expects input {} / output {}",
                config.input_dim, config.output_dim
            )));
        }
        let n_times = first.times.len();
        if n_times == 0 {
            return Err(ModelError::Batch("sample has no prediction times".into()));
        }
        let dt = first.dt();
        let h = config.enc_hidden;

        let mut agent_offsets = vec![0];
        let mut obs_x = Vec::new();
        let mut obs_agent = Vec::new();
        let mut obs_time = Vec::new();
        let mut counts = Vec::new();
        let mut attn_src = Vec::new();
        let mut attn_dst = Vec::new();
        let mut ode_src = Vec::new();
        let mut ode_dst = Vec::new();
        let mut targets = vec![Vec::new(); n_times];

        for (si, s) in samples.iter().enumerate() {
            if s.feat_dim != feat_dim || s.times.len() != n_times {
                return Err(ModelError::Batch(format!(
                    "sample {si} has {} features and {} prediction times, expected {feat_dim} and {n_times}",
                    s.feat_dim,
                    s.times.len()
                )));
            }
            if n_times > 1 && ((s.dt() - dt).abs() > DT_RTOL * dt.abs()) {
                return Err(ModelError::Batch(format!("sample {si} has step {} but the batch uses {dt}", s.dt())));
            }
            if s.obs.agents.len() != s.n_agents || s.graph.n() != s.n_agents {
                return Err(ModelError::Batch(format!("sample {si} has inconsistent agent counts")));
            }
            let base = *agent_offsets.last().unwrap();
            let anchor = s.times[0];
            // Observation rows of each agent in this sample, with their times.
            let mut rows_of_agent: Vec<Vec<(usize, f64)>> = Vec::with_capacity(s.n_agents);
            for (a, obs) in s.obs.agents.iter().enumerate() {
                if obs.is_empty() {
                    return Err(ModelError::NoObservations { sample: si, agent: a });
                }
                let mut rows = Vec::with_capacity(obs.len());
                for o in obs {
                    if o.features.len() != feat_dim {
                        return Err(ModelError::Batch(format!(
                            "sample {si} agent {a}: observation has {} features, expected {feat_dim}",
                            o.features.len()
                        )));
                    }
                    rows.push((obs_agent.len(), o.time));
                    obs_x.extend_from_slice(&o.features);
                    obs_agent.push(base + a);
                    obs_time.push(o.time - anchor);
                }
                counts.push(obs.len());
                rows_of_agent.push(rows);
            }
            for rows in &rows_of_agent {
                for &(dst, _) in rows {
                    for &(src, _) in rows {
                        attn_src.push(src);
                        attn_dst.push(dst);
                    }
                }
            }
            if config.encoder == EncoderKind::SpatioTemporal {
                for &(i, j) in s.graph.directed_edges().iter() {
                    for &(src, ts) in &rows_of_agent[i] {
                        for &(dst, td) in &rows_of_agent[j] {
                            if ts == td {
                                attn_src.push(src);
                                attn_dst.push(dst);
                            }
                        }
                    }
                }
            }
            if s.n_agents == 1 {
                ode_src.push(base);
                ode_dst.push(base);
            } else {
                for (i, j) in s.graph.directed_edges() {
                    ode_src.push(base + i);
                    ode_dst.push(base + j);
                }
            }
            for (k, t) in s.targets.iter().enumerate() {
                if t.len() != s.n_agents * feat_dim {
                    return Err(ModelError::Batch(format!(
                        "sample {si} target {k} has {} values, expected {}",
                        t.len(),
                        s.n_agents * feat_dim
                    )));
                }
                targets[k].extend_from_slice(t);
            }
            agent_offsets.push(base + s.n_agents);
        }

        let n_agents = *agent_offsets.last().unwrap();
        let n_obs = obs_agent.len();
        let inv_counts = counts
            .iter()
            .flat_map(|&c| std::iter::repeat_n(1.0 / c as f64, h))
            .collect();
        let obs_te = obs_time.iter().flat_map(|&t| temporal_encoding(t, h)).collect();
        let edge_te = attn_src
            .iter()
            .zip(&attn_dst)
            .flat_map(|(&s, &d)| temporal_encoding(obs_time[s] - obs_time[d], h))
            .collect();
        let n_edges = attn_src.len();
        let targets = targets
            .into_iter()
            .map(|t| Tensor::from_vec(vec![n_agents, feat_dim], t))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            n_samples: samples.len(),
            n_agents,
            agent_offsets,
            feat_dim,
            obs_x: Tensor::from_vec(vec![n_obs, feat_dim], obs_x)?,
            obs_agent: obs_agent.into(),
            inv_counts: Tensor::from_vec(vec![n_agents, h], inv_counts)?,
            obs_te: Tensor::from_vec(vec![n_obs, h], obs_te)?,
            attn_src: attn_src.into(),
            attn_dst: attn_dst.into(),
            edge_te: Tensor::from_vec(vec![n_edges, h], edge_te)?,
            ode_src: ode_src.into(),
            ode_dst: ode_dst.into(),
            dt,
            n_steps: n_times - 1,
            targets,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.obs_agent.len()
    }

    pub fn n_times(&self) -> usize {
        self.targets.len()
    }
}
