//! Toy flow-matching policy over the synthetic world.
//!
//! Blocks: an observation encoder (whose EMA copy serves as the target
//! teacher), a trunk mapping [encoded obs; instruction embedding; belief
//! tokens] to a context vector h, an affine action-channel projector
//! producing per-step action tokens E, a state projector, a velocity head
//! for flow matching, and the two-layer query head used by the scorer.
//!
//! The belief tokenizer consumes the context stream C (h broadcast across
//! the L action positions; per-position variation enters through E) and
//! the action stream E. Action chunks are normalized by `action_scale` on
//! entry so the flow bridge mixes O(1) data with unit noise.

use crate::bench::world::{SampleRecord, ACTION_DIM, OBS_DIM, STATE_DIM};
use crate::error::{PtrError, Result};
use crate::numerics::rng::phase;
use crate::numerics::{DenseMatrix, Mlp, MlpCache, SeededRng};
use crate::tokenizer::{BeliefTokenizer, TokenizerCache, TokenizerConfig, TokenizerStep};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden width of the observation encoder.
    pub enc_hidden: usize,
    /// Embedding dim shared by encoder output, targets, and queries.
    pub d_y: usize,
    pub trunk_hidden: usize,
    /// Trunk output width; must equal the tokenizer token_dim.
    pub h_dim: usize,
    pub instr_dim: usize,
    pub state_emb: usize,
    pub flow_hidden: usize,
    pub query_hidden: usize,
    /// Divisor mapping raw action units into the policy's O(1) range.
    pub action_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_hidden: 24,
            d_y: 24,
            trunk_hidden: 32,
            h_dim: 24,
            instr_dim: 8,
            state_emb: 8,
            flow_hidden: 48,
            query_hidden: 32,
            action_scale: 0.08,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("enc_hidden", self.enc_hidden),
            ("d_y", self.d_y),
            ("trunk_hidden", self.trunk_hidden),
            ("h_dim", self.h_dim),
            ("instr_dim", self.instr_dim),
            ("state_emb", self.state_emb),
            ("flow_hidden", self.flow_hidden),
            ("query_hidden", self.query_hidden),
        ] {
            if v == 0 {
                return Err(PtrError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if !(self.action_scale.is_finite() && self.action_scale > 0.0) {
            return Err(PtrError::InvalidConfig(
                "action_scale must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// All trainable blocks plus gradient buffers, flattened in a fixed block
/// order for the optimizer and for checkpoints.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub cfg: ModelConfig,
    pub chunk_len: usize,
    pub n_tasks: usize,
    pub obs_encoder: Mlp,
    pub trunk: Mlp,
    pub g_phi: Mlp,
    pub state_proj: Mlp,
    pub flow: Mlp,
    pub query: Mlp,
    pub instr: DenseMatrix,
    pub instr_grad: DenseMatrix,
    pub tokenizer: BeliefTokenizer,
}

impl PolicyBundle {
    pub fn new(
        cfg: ModelConfig,
        tok_cfg: TokenizerConfig,
        chunk_len: usize,
        n_tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        tok_cfg.validate()?;
        if tok_cfg.token_dim != cfg.h_dim {
            return Err(PtrError::InvalidConfig(format!(
                "tokenizer token_dim {} must equal h_dim {}",
                tok_cfg.token_dim, cfg.h_dim
            )));
        }
        if n_tasks == 0 || chunk_len == 0 {
            return Err(PtrError::InvalidConfig(
                "policy needs n_tasks > 0 and chunk_len > 0".into(),
            ));
        }
        let z_len = tok_cfg.n_tokens * tok_cfg.token_dim;
        let flat = chunk_len * ACTION_DIM;
        let obs_encoder = Mlp::new(
            &[OBS_DIM, cfg.enc_hidden, cfg.d_y],
            &mut SeededRng::stream(seed, phase::INIT, 10),
        )?;
        let trunk = Mlp::new(
            &[cfg.d_y + cfg.instr_dim + z_len, cfg.trunk_hidden, cfg.h_dim],
            &mut SeededRng::stream(seed, phase::INIT, 11),
        )?;
        let g_phi = Mlp::new(
            &[cfg.h_dim + STATE_DIM + ACTION_DIM, tok_cfg.token_dim],
            &mut SeededRng::stream(seed, phase::INIT, 12),
        )?;
        let state_proj = Mlp::new(
            &[STATE_DIM, cfg.state_emb],
            &mut SeededRng::stream(seed, phase::INIT, 13),
        )?;
        let flow = Mlp::new(
            &[
                flat + 1 + cfg.h_dim + cfg.state_emb,
                cfg.flow_hidden,
                cfg.flow_hidden,
                flat,
            ],
            &mut SeededRng::stream(seed, phase::INIT, 14),
        )?;
        let query = Mlp::new(
            &[cfg.h_dim + tok_cfg.token_dim, cfg.query_hidden, cfg.d_y],
            &mut SeededRng::stream(seed, phase::INIT, 15),
        )?;
        let mut init_rng = SeededRng::stream(seed, phase::INIT, 16);
        let lim = (6.0 / (n_tasks + cfg.instr_dim) as f64).sqrt();
        let instr = DenseMatrix::from_vec(
            n_tasks,
            cfg.instr_dim,
            (0..n_tasks * cfg.instr_dim)
                .map(|_| init_rng.uniform_in(-lim, lim))
                .collect(),
        )?;
        let tokenizer =
            BeliefTokenizer::new(tok_cfg, &mut SeededRng::stream(seed, phase::INIT, 17))?;
        Ok(Self {
            instr_grad: DenseMatrix::zeros(n_tasks, cfg.instr_dim),
            cfg,
            chunk_len,
            n_tasks,
            obs_encoder,
            trunk,
            g_phi,
            state_proj,
            flow,
            query,
            instr,
            tokenizer,
        })
    }

    pub fn z_len(&self) -> usize {
        self.tokenizer.config().n_tokens * self.tokenizer.config().token_dim
    }

    pub fn flat_action_len(&self) -> usize {
        self.chunk_len * ACTION_DIM
    }

    pub fn param_count(&self) -> usize {
        self.obs_encoder.param_count()
            + self.trunk.param_count()
            + self.g_phi.param_count()
            + self.state_proj.param_count()
            + self.flow.param_count()
            + self.query.param_count()
            + self.instr.data().len()
            + self.tokenizer.param_count()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        self.obs_encoder.append_params(out);
        self.trunk.append_params(out);
        self.g_phi.append_params(out);
        self.state_proj.append_params(out);
        self.flow.append_params(out);
        self.query.append_params(out);
        out.extend_from_slice(self.instr.data());
        self.tokenizer.append_params(out);
    }

    pub fn append_grads(&self, out: &mut Vec<f64>) {
        self.obs_encoder.append_grads(out);
        self.trunk.append_grads(out);
        self.g_phi.append_grads(out);
        self.state_proj.append_grads(out);
        self.flow.append_grads(out);
        self.query.append_grads(out);
        out.extend_from_slice(self.instr_grad.data());
        self.tokenizer.append_grads(out);
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.append_params(&mut out);
        out
    }

    pub fn grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.append_grads(&mut out);
        out
    }

    pub fn load_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(PtrError::ShapeMismatch(format!(
                "policy load: {} values for {} params",
                src.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        off += self.obs_encoder.load_params(&src[off..])?;
        off += self.trunk.load_params(&src[off..])?;
        off += self.g_phi.load_params(&src[off..])?;
        off += self.state_proj.load_params(&src[off..])?;
        off += self.flow.load_params(&src[off..])?;
        off += self.query.load_params(&src[off..])?;
        let n_instr = self.instr.data().len();
        self.instr
            .data_mut()
            .copy_from_slice(&src[off..off + n_instr]);
        off += n_instr;
        off += self.tokenizer.load_params(&src[off..])?;
        debug_assert_eq!(off, src.len());
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.obs_encoder.zero_grads();
        self.trunk.zero_grads();
        self.g_phi.zero_grads();
        self.state_proj.zero_grads();
        self.flow.zero_grads();
        self.query.zero_grads();
        self.instr_grad.fill(0.0);
        self.tokenizer.zero_grads();
    }

    fn normalized_chunk(&self, chunk: &DenseMatrix) -> Vec<Vec<f64>> {
        (0..chunk.rows())
            .map(|i| {
                chunk
                    .row(i)
                    .iter()
                    .map(|v| v / self.cfg.action_scale)
                    .collect()
            })
            .collect()
    }

    /// Trunk context for one record under the current belief state.
    fn context_forward(
        &self,
        record: &SampleRecord,
        z: &[f64],
    ) -> Result<(Vec<f64>, MlpCache, MlpCache)> {
        if record.task_id >= self.n_tasks {
            return Err(PtrError::InvalidArgument(format!(
                "task id {} outside the instruction table",
                record.task_id
            )));
        }
        if z.len() != self.z_len() {
            return Err(PtrError::ShapeMismatch(format!(
                "belief state length {} vs {}",
                z.len(),
                self.z_len()
            )));
        }
        let (enc, enc_cache) = self.obs_encoder.forward(&record.obs)?;
        let mut trunk_in = Vec::with_capacity(self.trunk.input_dim());
        trunk_in.extend_from_slice(&enc);
        trunk_in.extend_from_slice(self.instr.row(record.task_id));
        trunk_in.extend_from_slice(z);
        let (h, trunk_cache) = self.trunk.forward(&trunk_in)?;
        Ok((h, enc_cache, trunk_cache))
    }

    /// One chunk's full forward pass. The flow draws (sigma, eps) come
    /// from the caller so they can be recorded and replayed.
    pub fn forward_chunk(
        &self,
        record: &SampleRecord,
        z: &[f64],
        sigma: f64,
        eps: &[f64],
    ) -> Result<ChunkForward> {
        let flat = self.flat_action_len();
        if eps.len() != flat {
            return Err(PtrError::ShapeMismatch(format!(
                "flow noise length {} vs {}",
                eps.len(),
                flat
            )));
        }
        let (h, enc_cache, trunk_cache) = self.context_forward(record, z)?;

        let a_norm = self.normalized_chunk(&record.action_chunk);
        let mut e_rows = Vec::with_capacity(self.chunk_len);
        let mut g_caches = Vec::with_capacity(self.chunk_len);
        let mut e = vec![0.0; self.tokenizer.config().token_dim];
        for row in &a_norm {
            let mut g_in = Vec::with_capacity(self.g_phi.input_dim());
            g_in.extend_from_slice(&h);
            g_in.extend_from_slice(&record.state);
            g_in.extend_from_slice(row);
            let (e_row, g_cache) = self.g_phi.forward(&g_in)?;
            for (acc, v) in e.iter_mut().zip(&e_row) {
                *acc += v / self.chunk_len as f64;
            }
            e_rows.push(e_row);
            g_caches.push(g_cache);
        }

        let (s_emb, state_cache) = self.state_proj.forward(&record.state)?;

        let mut a_flat = Vec::with_capacity(flat);
        for row in &a_norm {
            a_flat.extend_from_slice(row);
        }
        let mut flow_in = Vec::with_capacity(self.flow.input_dim());
        for (a, n) in a_flat.iter().zip(eps) {
            flow_in.push(sigma * a + (1.0 - sigma) * n);
        }
        flow_in.push(sigma);
        flow_in.extend_from_slice(&h);
        flow_in.extend_from_slice(&s_emb);
        let (v, flow_cache) = self.flow.forward(&flow_in)?;
        let mut resid = Vec::with_capacity(flat);
        let mut flow_loss = 0.0;
        for i in 0..flat {
            let r = v[i] - (a_flat[i] - eps[i]);
            flow_loss += r * r;
            resid.push(r);
        }

        let context: Vec<Vec<f64>> = (0..self.chunk_len).map(|_| h.clone()).collect();
        let (tok_step, tok_cache) = self.tokenizer.step(&context, &e_rows)?;

        Ok(ChunkForward {
            enc_cache,
            trunk_cache,
            g_caches,
            state_cache,
            flow_cache,
            tok_cache,
            tok_step,
            h,
            e,
            e_rows,
            resid,
            flow_loss,
        })
    }

    /// Accumulates gradients for one chunk.
    ///
    /// `flow_scale` multiplies the flow-matching loss (the normalized
    /// sample weight times any outer coefficient). `dh_extra` / `de_extra`
    /// carry the scorer-side gradients on h and on the pooled action
    /// summary e. The belief input gradient reaches the learned initial
    /// tokens only when `first_chunk` is set; otherwise the recursion is
    /// cut, which is exactly the stop-gradient between chunks.
    pub fn backward_chunk(
        &mut self,
        record: &SampleRecord,
        cf: &ChunkForward,
        first_chunk: bool,
        flow_scale: f64,
        dh_extra: &[f64],
        de_extra: &[f64],
        ent_coeff: f64,
        div_coeff: f64,
    ) -> Result<()> {
        let flat = self.flat_action_len();
        let d = self.cfg.h_dim;
        if dh_extra.len() != d || de_extra.len() != self.tokenizer.config().token_dim {
            return Err(PtrError::ShapeMismatch(
                "backward_chunk: extra gradient widths".into(),
            ));
        }
        let mut dh = vec![0.0; d];

        // flow-matching branch
        if flow_scale != 0.0 {
            let dv: Vec<f64> = cf.resid.iter().map(|r| 2.0 * flow_scale * r).collect();
            let d_flow_in = self.flow.backward(&cf.flow_cache, &dv)?;
            for (acc, g) in dh.iter_mut().zip(&d_flow_in[flat + 1..flat + 1 + d]) {
                *acc += g;
            }
            let ds_emb = &d_flow_in[flat + 1 + d..];
            self.state_proj.backward(&cf.state_cache, ds_emb)?;
        }

        // tokenizer regularizers; the merged state itself is stop-gradded
        let dz_zero = vec![0.0; self.z_len()];
        let (dc_rows, mut da_rows) =
            self.tokenizer
                .backward(&cf.tok_cache, &dz_zero, ent_coeff, div_coeff)?;

        // scorer gradient on the pooled summary spreads over the mean
        let inv_l = 1.0 / self.chunk_len as f64;
        for row in da_rows.iter_mut() {
            for (acc, g) in row.iter_mut().zip(de_extra) {
                *acc += g * inv_l;
            }
        }
        for (cache, da) in cf.g_caches.iter().zip(&da_rows) {
            let d_g_in = self.g_phi.backward(cache, da)?;
            for (acc, g) in dh.iter_mut().zip(&d_g_in[..d]) {
                *acc += g;
            }
        }
        for row in &dc_rows {
            for (acc, g) in dh.iter_mut().zip(row) {
                *acc += g;
            }
        }
        for (acc, g) in dh.iter_mut().zip(dh_extra) {
            *acc += g;
        }

        let d_trunk_in = self.trunk.backward(&cf.trunk_cache, &dh)?;
        let d_y = self.cfg.d_y;
        self.obs_encoder
            .backward(&cf.enc_cache, &d_trunk_in[..d_y])?;
        let instr_slice = &d_trunk_in[d_y..d_y + self.cfg.instr_dim];
        for (acc, g) in self
            .instr_grad
            .row_mut(record.task_id)
            .iter_mut()
            .zip(instr_slice)
        {
            *acc += g;
        }
        if first_chunk {
            self.tokenizer
                .add_z_init_grad(&d_trunk_in[d_y + self.cfg.instr_dim..])?;
        }
        Ok(())
    }

    /// Closed-loop planning: denoise one action chunk by n-step Euler
    /// integration of the velocity field from pure noise, then advance the
    /// belief state on the chunk the policy just produced.
    pub fn plan(
        &self,
        obs: &[f64],
        state: &[f64],
        task_id: usize,
        z: &[f64],
        denoise_steps: usize,
        rng: &mut SeededRng,
    ) -> Result<(DenseMatrix, Vec<f64>)> {
        if denoise_steps == 0 {
            return Err(PtrError::InvalidArgument(
                "denoise_steps must be positive".into(),
            ));
        }
        let probe = SampleRecord {
            uid: u64::MAX,
            traj_id: 0,
            source_id: 0,
            task_id,
            chunk_index: 0,
            obs: obs.to_vec(),
            state: state.to_vec(),
            action_chunk: DenseMatrix::zeros(self.chunk_len, ACTION_DIM),
            future_obs: None,
            delta: 0,
            quality: crate::bench::world::Quality::Clean,
        };
        let (h, _, _) = self.context_forward(&probe, z)?;
        let s_emb = self.state_proj.infer(state)?;
        let flat = self.flat_action_len();
        let mut x: Vec<f64> = (0..flat).map(|_| rng.normal()).collect();
        let dt = 1.0 / denoise_steps as f64;
        for k in 0..denoise_steps {
            let sigma = k as f64 * dt;
            let mut flow_in = Vec::with_capacity(self.flow.input_dim());
            flow_in.extend_from_slice(&x);
            flow_in.push(sigma);
            flow_in.extend_from_slice(&h);
            flow_in.extend_from_slice(&s_emb);
            let v = self.flow.infer(&flow_in)?;
            for (xi, vi) in x.iter_mut().zip(&v) {
                *xi += dt * vi;
            }
        }

        // belief update on the produced chunk
        let mut e_rows = Vec::with_capacity(self.chunk_len);
        for i in 0..self.chunk_len {
            let mut g_in = Vec::with_capacity(self.g_phi.input_dim());
            g_in.extend_from_slice(&h);
            g_in.extend_from_slice(state);
            g_in.extend_from_slice(&x[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
            e_rows.push(self.g_phi.infer(&g_in)?);
        }
        let context: Vec<Vec<f64>> = (0..self.chunk_len).map(|_| h.clone()).collect();
        let (tok_step, _) = self.tokenizer.step(&context, &e_rows)?;

        let raw: Vec<f64> = x.iter().map(|v| v * self.cfg.action_scale).collect();
        Ok((
            DenseMatrix::from_vec(self.chunk_len, ACTION_DIM, raw)?,
            tok_step.z_next,
        ))
    }
}

/// Everything cached by one chunk's forward pass.
#[derive(Debug, Clone)]
pub struct ChunkForward {
    pub enc_cache: MlpCache,
    pub trunk_cache: MlpCache,
    pub g_caches: Vec<MlpCache>,
    pub state_cache: MlpCache,
    pub flow_cache: MlpCache,
    pub tok_cache: TokenizerCache,
    pub tok_step: TokenizerStep,
    pub h: Vec<f64>,
    /// Mean-pooled action summary.
    pub e: Vec<f64>,
    pub e_rows: Vec<Vec<f64>>,
    /// v - (a - eps), kept for the backward pass.
    pub resid: Vec<f64>,
    /// Sum of squared residuals.
    pub flow_loss: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::world::{generate_world, WorldConfig};
    use crate::numerics::finite_diff_grad;

    fn tiny_policy(seed: u64) -> (PolicyBundle, SampleRecord) {
        let world = WorldConfig {
            trajs_per_pair: 1,
            missing_future_frac: 0.0,
            ..WorldConfig::default()
        };
        let ds = generate_world(&world, seed).unwrap();
        let cfg = ModelConfig {
            enc_hidden: 6,
            d_y: 5,
            trunk_hidden: 7,
            h_dim: 4,
            instr_dim: 3,
            state_emb: 3,
            flow_hidden: 6,
            query_hidden: 5,
            action_scale: world.a_max,
        };
        let tok = TokenizerConfig {
            n_tokens: 2,
            token_dim: 4,
            ..TokenizerConfig::default()
        };
        let policy =
            PolicyBundle::new(cfg, tok, world.chunk_len, world.n_tasks, seed).unwrap();
        (policy, ds.records[3].clone())
    }

    #[test]
    fn token_dim_must_match_h_dim() {
        let cfg = ModelConfig {
            h_dim: 8,
            ..ModelConfig::default()
        };
        let tok = TokenizerConfig {
            token_dim: 4,
            ..TokenizerConfig::default()
        };
        assert!(PolicyBundle::new(cfg, tok, 16, 4, 0).is_err());
    }

    #[test]
    fn param_roundtrip_is_exact() {
        let (mut policy, _) = tiny_policy(31);
        let p = policy.params();
        assert_eq!(p.len(), policy.param_count());
        let mut shifted = p.clone();
        for v in shifted.iter_mut() {
            *v += 0.125;
        }
        policy.load_params(&shifted).unwrap();
        assert_eq!(policy.params(), shifted);
        policy.load_params(&p).unwrap();
        assert_eq!(policy.params(), p);
    }

    #[test]
    fn zero_flow_head_recovers_bridge_identity() {
        let (mut policy, record) = tiny_policy(32);
        // zero the flow block only: v = 0, loss = |a - eps|^2
        let mut params = policy.params();
        let mut off = policy.obs_encoder.param_count()
            + policy.trunk.param_count()
            + policy.g_phi.param_count()
            + policy.state_proj.param_count();
        for _ in 0..policy.flow.param_count() {
            params[off] = 0.0;
            off += 1;
        }
        policy.load_params(&params).unwrap();
        let z = policy.tokenizer.z_init().to_vec();
        let flat = policy.flat_action_len();
        let eps: Vec<f64> = (0..flat).map(|i| (i as f64 * 0.37).sin()).collect();
        let cf = policy.forward_chunk(&record, &z, 0.5, &eps).unwrap();
        let mut expect = 0.0;
        for (i, row) in (0..record.action_chunk.rows()).map(|r| (r, record.action_chunk.row(r))) {
            for (j, &a) in row.iter().enumerate() {
                let a_n = a / policy.cfg.action_scale;
                expect += (a_n - eps[i * ACTION_DIM + j]).powi(2);
            }
        }
        assert!((cf.flow_loss - expect).abs() < 1e-12);
    }

    #[test]
    fn chunk_gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let (mut policy, record) = tiny_policy(100 + seed);
            let mut rng = SeededRng::stream(900 + seed, phase::GRAD_CHECK, 1);
            let flat = policy.flat_action_len();
            let sigma = rng.uniform_in(0.1, 0.9);
            let eps: Vec<f64> = (0..flat).map(|_| rng.normal()).collect();
            let dh_probe: Vec<f64> =
                (0..policy.cfg.h_dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let de_probe: Vec<f64> = (0..policy.tokenizer.config().token_dim)
                .map(|_| rng.uniform_in(-1.0, 1.0))
                .collect();
            let (flow_scale, ent_c, div_c) = (0.7, 0.11, 0.13);

            // first chunk: z is the learned initial belief, so the FD loss
            // must reread it after each parameter perturbation
            let base = policy.params();
            policy.zero_grads();
            let z = policy.tokenizer.z_init().to_vec();
            let cf = policy.forward_chunk(&record, &z, sigma, &eps).unwrap();
            policy
                .backward_chunk(&record, &cf, true, flow_scale, &dh_probe, &de_probe, ent_c, div_c)
                .unwrap();
            let analytic = policy.grads();

            let mut probe_policy = policy.clone();
            let f = |theta: &[f64]| {
                probe_policy.load_params(theta).unwrap();
                let z = probe_policy.tokenizer.z_init().to_vec();
                let cf = probe_policy.forward_chunk(&record, &z, sigma, &eps).unwrap();
                let mut loss = flow_scale * cf.flow_loss
                    + ent_c * cf.tok_step.entropy
                    + div_c * cf.tok_step.diversity;
                for (g, v) in dh_probe.iter().zip(&cf.h) {
                    loss += g * v;
                }
                for (g, v) in de_probe.iter().zip(&cf.e) {
                    loss += g * v;
                }
                loss
            };
            let mut probe = f;
            let numeric = finite_diff_grad(&mut probe, &base, 1e-5);
            let report = crate::numerics::compare_grads(&analytic, &numeric);
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed}: rel err {} at {}",
                report.max_rel_err,
                report.worst_index
            );
        }
    }

    #[test]
    fn belief_gradient_reaches_z_init_only_on_first_chunk() {
        let (mut policy, record) = tiny_policy(200);
        let z = policy.tokenizer.z_init().to_vec();
        let flat = policy.flat_action_len();
        let eps = vec![0.3; flat];
        let dh = vec![0.4; policy.cfg.h_dim];
        let de = vec![0.0; policy.tokenizer.config().token_dim];

        let tok_params = policy.tokenizer.param_count();
        let z_init_len = policy.z_len();

        policy.zero_grads();
        let cf = policy.forward_chunk(&record, &z, 0.5, &eps).unwrap();
        policy
            .backward_chunk(&record, &cf, false, 1.0, &dh, &de, 0.0, 0.0)
            .unwrap();
        let grads = policy.grads();
        let z_slice = &grads[grads.len() - z_init_len..];
        assert!(z_slice.iter().all(|&g| g == 0.0), "later chunks must not touch z_init");
        let _ = tok_params;

        policy.zero_grads();
        let cf = policy.forward_chunk(&record, &z, 0.5, &eps).unwrap();
        policy
            .backward_chunk(&record, &cf, true, 1.0, &dh, &de, 0.0, 0.0)
            .unwrap();
        let grads = policy.grads();
        let z_slice = &grads[grads.len() - z_init_len..];
        assert!(z_slice.iter().any(|&g| g != 0.0), "first chunk feeds z_init");
    }

    #[test]
    fn instruction_gradient_touches_only_the_used_row() {
        let (mut policy, record) = tiny_policy(300);
        let z = policy.tokenizer.z_init().to_vec();
        let eps = vec![0.1; policy.flat_action_len()];
        let dh = vec![1.0; policy.cfg.h_dim];
        let de = vec![0.0; policy.tokenizer.config().token_dim];
        policy.zero_grads();
        let cf = policy.forward_chunk(&record, &z, 0.4, &eps).unwrap();
        policy
            .backward_chunk(&record, &cf, true, 0.0, &dh, &de, 0.0, 0.0)
            .unwrap();
        for task in 0..policy.n_tasks {
            let row = policy.instr_grad.row(task);
            if task == record.task_id {
                assert!(row.iter().any(|&g| g != 0.0));
            } else {
                assert!(row.iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn planning_is_deterministic_and_shaped() {
        let (policy, record) = tiny_policy(400);
        let z = policy.tokenizer.z_init().to_vec();
        let mut r1 = SeededRng::stream(5, phase::EVAL, 9);
        let mut r2 = SeededRng::stream(5, phase::EVAL, 9);
        let (a1, z1) = policy
            .plan(&record.obs, &record.state, record.task_id, &z, 4, &mut r1)
            .unwrap();
        let (a2, z2) = policy
            .plan(&record.obs, &record.state, record.task_id, &z, 4, &mut r2)
            .unwrap();
        assert_eq!(a1, a2);
        assert_eq!(z1, z2);
        assert_eq!(a1.rows(), policy.chunk_len);
        assert_eq!(a1.cols(), ACTION_DIM);
        assert_eq!(z1.len(), policy.z_len());
    }
}
