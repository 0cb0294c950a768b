use std::fmt;

use treat_autodiff::{AutodiffError, Tape, Tensor, Var};

use super::{Batch, Bound, Model, ModelError};
use crate::dynamics::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Integrates `g`.
    Forward,
    /// Integrates `-g`.
    Reverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        })
    }
}

/// Latent states at each prediction time of a rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub direction: Direction,
    pub latents: Vec<Var>,
}

impl Model {
    /// Message-passing vector field: edge messages from the concatenated
    /// target and source latents are summed per target, then combined with
    /// the target's own latent.
    pub fn ode_func(&self, tape: &mut Tape, p: &Bound, batch: &Batch, z: Var) -> Result<Var, AutodiffError> {
        let l = &self.layout;
        let agg = if batch.ode_src.is_empty() {
            tape.constant(Tensor::zeros(vec![batch.n_agents, self.config.ode_hidden]))
        } else {
            let zd = tape.gather_rows(z, &batch.ode_dst)?;
            let zs = tape.gather_rows(z, &batch.ode_src)?;
            let e = tape.concat_cols(&[zd, zs])?;
            let e = self.affine(tape, p, l.edge1, e)?;
            let e = tape.tanh(e)?;
            let e = self.affine(tape, p, l.edge2, e)?;
            let e = tape.tanh(e)?;
            tape.scatter_add_rows(e, &batch.ode_dst, batch.n_agents)?
        };
        let n = tape.concat_cols(&[z, agg])?;
        let n = self.affine(tape, p, l.node1, n)?;
        let n = tape.tanh(n)?;
        self.affine(tape, p, l.node2, n)
    }

    fn solver_step(&self, tape: &mut Tape, p: &Bound, batch: &Batch, z: Var, h: f64) -> Result<Var, AutodiffError> {
        match self.config.scheme {
            Scheme::Euler => {
                let k1 = self.ode_func(tape, p, batch, z)?;
                let dz = tape.scale(k1, h)?;
                tape.add(z, dz)
            }
            Scheme::Heun => {
                let k1 = self.ode_func(tape, p, batch, z)?;
                let d1 = tape.scale(k1, h)?;
                let z1 = tape.add(z, d1)?;
                let k2 = self.ode_func(tape, p, batch, z1)?;
                let s = tape.add(k1, k2)?;
                let dz = tape.scale(s, 0.5 * h)?;
                tape.add(z, dz)
            }
            Scheme::Rk4 => {
                let k1 = self.ode_func(tape, p, batch, z)?;
                let d = tape.scale(k1, 0.5 * h)?;
                let z2 = tape.add(z, d)?;
                let k2 = self.ode_func(tape, p, batch, z2)?;
                let d = tape.scale(k2, 0.5 * h)?;
                let z3 = tape.add(z, d)?;
                let k3 = self.ode_func(tape, p, batch, z3)?;
                let d = tape.scale(k3, h)?;
                let z4 = tape.add(z, d)?;
                let k4 = self.ode_func(tape, p, batch, z4)?;
                let k23 = tape.add(k2, k3)?;
                let k23 = tape.scale(k23, 2.0)?;
                let s = tape.add(k1, k23)?;
                let s = tape.add(s, k4)?;
                let dz = tape.scale(s, h / 6.0)?;
                tape.add(z, dz)
            }
        }
    }

    /// Integrates from `z0` for `n_steps` prediction intervals of length
    /// `dt`, returning `n_steps + 1` latents. A reverse rollout integrates
    /// `-g` over the same grid, so its index `k` pairs with forward index
    /// `n_steps - k`.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &Batch,
        z0: Var,
        n_steps: usize,
        dt: f64,
        direction: Direction,
    ) -> Result<Rollout, ModelError> {
        let sub = self.config.substeps;
        let h = direction.sign() * dt / sub as f64;
        let mut latents = Vec::with_capacity(n_steps + 1);
        latents.push(z0);
        let mut z = z0;
        for step in 0..n_steps {
            for _ in 0..sub {
                z = self.solver_step(tape, p, batch, z, h).map_err(|e| match e {
                    AutodiffError::NonFinite { .. } => ModelError::Diverged { direction, step },
                    other => ModelError::Autodiff(other),
                })?;
            }
            latents.push(z);
        }
        Ok(Rollout { direction, latents })
    }

    /// Decodes every latent of a rollout.
    pub fn decode_all(&self, tape: &mut Tape, p: &Bound, rollout: &Rollout) -> Result<Vec<Var>, AutodiffError> {
        rollout.latents.iter().map(|&z| self.decode(tape, p, z)).collect()
    }
}
