//! Graph neural ODE: attention encoder for initial latent states, a
//! message-passing vector field, and a decoder back to observed features.

mod batch;
mod checkpoint;
mod encoder;
mod ode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use treat_autodiff::{AutodiffError, Tape, Tensor, Var};

pub use batch::Batch;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::temporal_encoding;
pub use ode::{Direction, Rollout};

use crate::dynamics::Scheme;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("agent {agent} of sample {sample} has no observations")]
    NoObservations { sample: usize, agent: usize },
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("{direction} rollout diverged at step {step}")]
    Diverged { direction: Direction, step: usize },
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// One attention layer over each agent's own observations.
    #[default]
    Temporal,
    /// Two attention layers that also pass messages between coupled agents
    /// observed at the same time.
    SpatioTemporal,
}

impl EncoderKind {
    pub fn layers(self) -> usize {
        match self {
            EncoderKind::Temporal => 1,
            EncoderKind::SpatioTemporal => 2,
        }
    }
}

fn default_enc_dim() -> usize {
    16
}
fn default_aug_dim() -> usize {
    16
}
fn default_hidden() -> usize {
    64
}
fn default_substeps() -> usize {
    1
}

/// Upper limit on every configured size, far above anything trainable here.
pub const MAX_WIDTH: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Features per agent observation.
    pub input_dim: usize,
    /// Features per agent prediction.
    pub output_dim: usize,
    #[serde(default = "default_enc_dim")]
    pub enc_dim: usize,
    /// Zero-initialized latent coordinates appended to the encoder output.
    #[serde(default = "default_aug_dim")]
    pub aug_dim: usize,
    /// Width of the encoder's attention layers; must be even for the
    /// temporal encoding.
    #[serde(default = "default_hidden")]
    pub enc_hidden: usize,
    #[serde(default = "default_hidden")]
    pub ode_hidden: usize,
    /// Hidden width of the decoder; `None` decodes with a single affine map.
    #[serde(default)]
    pub dec_hidden: Option<usize>,
    #[serde(default)]
    pub encoder: EncoderKind,
    #[serde(default)]
    pub scheme: Scheme,
    /// Solver steps between consecutive prediction times.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            enc_dim: default_enc_dim(),
            aug_dim: default_aug_dim(),
            enc_hidden: default_hidden(),
            ode_hidden: default_hidden(),
            dec_hidden: None,
            encoder: EncoderKind::default(),
            scheme: Scheme::default(),
            substeps: default_substeps(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.enc_dim + self.aug_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("enc_dim", self.enc_dim),
            ("enc_hidden", self.enc_hidden),
            ("ode_hidden", self.ode_hidden),
            ("substeps", self.substeps),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
            if v > MAX_WIDTH {
                return bad(format!("{name} ({v}) exceeds {MAX_WIDTH}"));
            }
        }
        if self.aug_dim > MAX_WIDTH || self.dec_hidden.is_some_and(|d| d > MAX_WIDTH) {
            return bad(format!("aug_dim and dec_hidden must not exceed {MAX_WIDTH}"));
        }
        if self.enc_hidden % 2 != 0 {
            return bad(format!("enc_hidden must be even, got {}", self.enc_hidden));
        }
        if self.dec_hidden == Some(0) {
            return bad("dec_hidden must be positive when set".into());
        }
        Ok(())
    }
}

/// Index of an affine map's weight `[in, out]` and bias `[1, out]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Affine {
    pub w: usize,
    pub b: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionLayer {
    pub query: usize,
    pub key: usize,
    pub value: usize,
}

/// Where each parameter tensor lives in [`ModelParams`].
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub enc_input: Affine,
    pub enc_layers: Vec<AttentionLayer>,
    pub enc_pool: usize,
    pub enc_output: Affine,
    pub edge1: Affine,
    pub edge2: Affine,
    pub node1: Affine,
    pub node2: Affine,
    pub dec_hidden: Option<Affine>,
    pub dec_output: Affine,
}

struct LayoutBuilder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    /// Extra factor on the initialization range.
    gains: Vec<f64>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, gain: f64) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.gains.push(gain);
        self.names.len() - 1
    }

    fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool, gain: f64) -> Affine {
        let w = self.add(format!("{name}.weight"), vec![fan_in, fan_out], gain);
        let b = bias.then(|| self.add(format!("{name}.bias"), vec![1, fan_out], 0.0));
        Affine { w, b }
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, LayoutBuilder) {
    let mut lb = LayoutBuilder {
        names: Vec::new(),
        shapes: Vec::new(),
        gains: Vec::new(),
    };
    let h = c.enc_hidden;
    let dz = c.latent_dim();
    let ho = c.ode_hidden;
    let enc_input = lb.affine("encoder.input", c.input_dim, h, true, 1.0);
    let enc_layers = (0..c.encoder.layers())
        .map(|l| AttentionLayer {
            query: lb.add(format!("encoder.layer{l}.query.weight"), vec![h, h], 1.0),
            key: lb.add(format!("encoder.layer{l}.key.weight"), vec![h, h], 1.0),
            value: lb.add(format!("encoder.layer{l}.value.weight"), vec![h, h], 1.0),
        })
        .collect();
    let enc_pool = lb.add("encoder.pool.weight".into(), vec![h, h], 1.0);
    let enc_output = lb.affine("encoder.output", h, c.enc_dim, true, 1.0);
    let edge1 = lb.affine("ode.edge1", 2 * dz, ho, true, 1.0);
    let edge2 = lb.affine("ode.edge2", ho, ho, true, 1.0);
    let node1 = lb.affine("ode.node1", dz + ho, ho, true, 1.0);
    // A small output layer keeps the initial vector field gentle.
    let node2 = lb.affine("ode.node2", ho, dz, true, 0.1);
    let (dec_hidden, dec_in) = match c.dec_hidden {
        Some(w) => (Some(lb.affine("decoder.hidden", dz, w, true, 1.0)), w),
        None => (None, dz),
    };
    let dec_output = lb.affine("decoder.output", dec_in, c.output_dim, true, 1.0);
    (
        Layout {
            enc_input,
            enc_layers,
            enc_pool,
            enc_output,
            edge1,
            edge2,
            node1,
            node2,
            dec_hidden,
            dec_output,
        },
        lb,
    )
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub(crate) layout: Layout,
}

/// Parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub(crate) fn at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

impl Model {
    /// Glorot-uniform weights from a seeded stream; biases start at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, lb) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = lb
            .shapes
            .iter()
            .zip(&lb.gains)
            .map(|(shape, &gain)| {
                if gain == 0.0 {
                    return Tensor::zeros(shape.clone());
                }
                let a = gain * (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let u = Uniform::new_inclusive(-a, a).expect("finite range");
                let data = (0..shape[0] * shape[1]).map(|_| u.sample(&mut rng)).collect();
                Tensor::from_vec(shape.clone(), data).expect("shape matches")
            })
            .collect();
        Ok(Self {
            config,
            params: ModelParams {
                names: lb.names,
                tensors,
            },
            layout,
        })
    }

    /// Builds a model around existing parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, lb) = build_layout(&config);
        if params.names.len() != lb.names.len() || params.tensors.len() != lb.names.len() {
            return Err(ModelError::Mismatch(format!(
                "expected {} parameter tensors, found {}",
                lb.names.len(),
                params.tensors.len()
            )));
        }
        for ((name, shape), (pname, t)) in lb.names.iter().zip(&lb.shapes).zip(params.names.iter().zip(&params.tensors)) {
            if name != pname {
                return Err(ModelError::Mismatch(format!("expected parameter `{name}`, found `{pname}`")));
            }
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Mismatch(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::Mismatch(format!("parameter `{name}` holds non-finite values")));
            }
        }
        Ok(Self { config, params, layout })
    }

    /// Places the parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    /// `x W + b` for a `[rows, in]` input.
    pub(crate) fn affine(&self, tape: &mut Tape, p: &Bound, a: Affine, x: Var) -> Result<Var, AutodiffError> {
        let y = tape.matmul(x, p.at(a.w))?;
        match a.b {
            Some(b) => {
                let rows = tape.shape(x)[0];
                let bias = tape.repeat_rows(p.at(b), rows)?;
                tape.add(y, bias)
            }
            None => Ok(y),
        }
    }

    /// Maps `[agents, latent]` to `[agents, output_dim]`.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var, AutodiffError> {
        let h = match self.layout.dec_hidden {
            Some(a) => {
                let h = self.affine(tape, p, a, z)?;
                tape.tanh(h)?
            }
            None => z,
        };
        self.affine(tape, p, self.layout.dec_output, h)
    }
}
