use treat_autodiff::{AutodiffError, Tape, Tensor, Var};

use super::{Batch, Bound, Model};

/// Interleaved sinusoidal encoding: entry `2i` is `sin(Δt / 10000^(2i/d))`
/// and entry `2i + 1` the matching cosine. `d` must be even.
pub fn temporal_encoding(dt: f64, d: usize) -> Vec<f64> {
    debug_assert!(d % 2 == 0);
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / d as f64);
        let (s, c) = (dt / freq).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

impl Model {
    /// Initial latent state of every agent in the batch, `[agents, latent]`.
    /// The augmented columns are exact zeros.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<Var, AutodiffError> {
        let h_dim = self.config.enc_hidden;
        let n_obs = batch.n_obs();
        let x = tape.constant(batch.obs_x.clone());
        let mut h = self.affine(tape, p, self.layout.enc_input, x)?;

        let edge_te = tape.constant(batch.edge_te.clone());
        let scale = 1.0 / (h_dim as f64).sqrt();
        for layer in &self.layout.enc_layers {
            let src_h = tape.gather_rows(h, &batch.attn_src)?;
            let src_h = tape.add(src_h, edge_te)?;
            let keys = tape.matmul(src_h, p.at(layer.key))?;
            let values = tape.matmul(src_h, p.at(layer.value))?;
            let q_all = tape.matmul(h, p.at(layer.query))?;
            let queries = tape.gather_rows(q_all, &batch.attn_dst)?;
            let kq = tape.mul(keys, queries)?;
            let scores = tape.row_sums(kq)?;
            let scores = tape.scale(scores, scale)?;
            let alpha = self.segment_softmax(tape, scores, batch, n_obs)?;
            let alpha = tape.repeat_cols(alpha, h_dim)?;
            let msgs = tape.mul(values, alpha)?;
            let agg = tape.scatter_add_rows(msgs, &batch.attn_dst, n_obs)?;
            let agg = tape.relu(agg)?;
            h = tape.add(h, agg)?;
        }

        // Self-attention pooling over each agent's observations.
        let te = tape.constant(batch.obs_te.clone());
        let h_hat = tape.add(h, te)?;
        let inv = tape.constant(batch.inv_counts.clone());
        let mean = tape.scatter_add_rows(h_hat, &batch.obs_agent, batch.n_agents)?;
        let mean = tape.mul(mean, inv)?;
        let a = tape.matmul(mean, p.at(self.layout.enc_pool))?;
        let a = tape.tanh(a)?;
        let a_obs = tape.gather_rows(a, &batch.obs_agent)?;
        let weights = tape.mul(a_obs, h_hat)?;
        let weights = tape.row_sums(weights)?;
        let weights = tape.repeat_cols(weights, h_dim)?;
        let pooled = tape.mul(weights, h_hat)?;
        let pooled = tape.relu(pooled)?;
        let u = tape.scatter_add_rows(pooled, &batch.obs_agent, batch.n_agents)?;
        let u = tape.mul(u, inv)?;
        let z = self.affine(tape, p, self.layout.enc_output, u)?;
        if self.config.aug_dim == 0 {
            return Ok(z);
        }
        let aug = tape.constant(Tensor::zeros(vec![batch.n_agents, self.config.aug_dim]));
        tape.concat_cols(&[z, aug])
    }

    /// Softmax of edge scores `[edges, 1]` over the edges sharing a target.
    fn segment_softmax(&self, tape: &mut Tape, scores: Var, batch: &Batch, n_nodes: usize) -> Result<Var, AutodiffError> {
        // Shifting by a per-target constant leaves the softmax unchanged and
        // keeps exp in range.
        let mut max = vec![f64::NEG_INFINITY; n_nodes];
        for (&d, &s) in batch.attn_dst.iter().zip(tape.value(scores).data()) {
            max[d] = max[d].max(s);
        }
        let shift: Vec<f64> = batch.attn_dst.iter().map(|&d| -max[d]).collect();
        let shift = tape.constant(Tensor::from_vec(vec![shift.len(), 1], shift)?);
        let shifted = tape.add(scores, shift)?;
        let e = tape.exp(shifted)?;
        let denom = tape.scatter_add_rows(e, &batch.attn_dst, n_nodes)?;
        let denom = tape.gather_rows(denom, &batch.attn_dst)?;
        tape.div(e, denom)
    }
}
