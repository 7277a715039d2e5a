//! Recurrent belief tokens: each chunk's context rows and action-channel
//! rows are fused per time step, soft-assigned to a small set of token
//! slots (softmax over time, per slot), and merged into the next belief
//! state. The next state leaves through a stop-gradient, so no gradient
//! ever crosses a chunk boundary; the slot usage is regularized toward
//! low assignment entropy and decorrelated columns.

use crate::error::{PtrError, Result};
use crate::numerics::{DenseMatrix, SeededRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Token slots per belief state (M).
    pub n_tokens: usize,
    /// Width of fused rows and token vectors (d).
    pub token_dim: usize,
    /// Assignment softmax temperature.
    pub tau: f64,
    pub lambda_ent: f64,
    pub lambda_div: f64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            n_tokens: 4,
            token_dim: 24,
            tau: 1.0,
            lambda_ent: 1e-3,
            lambda_div: 1e-3,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 || self.token_dim == 0 {
            return Err(PtrError::InvalidConfig(
                "tokenizer needs n_tokens > 0 and token_dim > 0".into(),
            ));
        }
        if self.tau <= 0.0 {
            return Err(PtrError::InvalidConfig(format!(
                "tokenizer tau must be positive, got {}",
                self.tau
            )));
        }
        if self.lambda_ent < 0.0 || self.lambda_div < 0.0 {
            return Err(PtrError::InvalidConfig(
                "tokenizer regularizer coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Flattened belief-state width fed to downstream networks.
    pub fn state_len(&self) -> usize {
        self.n_tokens * self.token_dim
    }
}

/// Outputs of one tokenizer step.
#[derive(Debug, Clone)]
pub struct TokenizerStep {
    /// Next belief state, flattened M x d. Carried across chunks behind a
    /// stop-gradient.
    pub z_next: Vec<f64>,
    pub entropy: f64,
    pub diversity: f64,
    /// lambda_ent * entropy + lambda_div * diversity.
    pub l_tok: f64,
}

/// Forward activations needed by `backward`.
#[derive(Debug, Clone)]
pub struct TokenizerCache {
    inputs: Vec<Vec<f64>>, // L rows of [context; action], width 2d
    fused: Vec<Vec<f64>>,  // L rows of width d (post-tanh)
    pi: DenseMatrix,       // L x M, each column sums to 1
}

impl TokenizerCache {
    pub fn assignments(&self) -> &DenseMatrix {
        &self.pi
    }
}

#[derive(Debug, Clone)]
pub struct BeliefTokenizer {
    cfg: TokenizerConfig,
    w_fuse: DenseMatrix,  // d x 2d
    w_assign: DenseMatrix, // M x d
    z_init: DenseMatrix,  // M x d, learned first-chunk belief state
    grad_fuse: DenseMatrix,
    grad_assign: DenseMatrix,
    grad_z_init: DenseMatrix,
}

impl BeliefTokenizer {
    pub fn new(cfg: TokenizerConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.token_dim;
        let m = cfg.n_tokens;
        let mut w_fuse = DenseMatrix::zeros(d, 2 * d);
        let lim_f = (6.0 / (3 * d) as f64).sqrt();
        for v in w_fuse.data_mut() {
            *v = rng.uniform_in(-lim_f, lim_f);
        }
        let mut w_assign = DenseMatrix::zeros(m, d);
        let lim_a = (6.0 / (m + d) as f64).sqrt();
        for v in w_assign.data_mut() {
            *v = rng.uniform_in(-lim_a, lim_a);
        }
        let mut z_init = DenseMatrix::zeros(m, d);
        for v in z_init.data_mut() {
            *v = rng.uniform_in(-lim_a, lim_a);
        }
        Ok(Self {
            grad_fuse: DenseMatrix::zeros(d, 2 * d),
            grad_assign: DenseMatrix::zeros(m, d),
            grad_z_init: DenseMatrix::zeros(m, d),
            cfg,
            w_fuse,
            w_assign,
            z_init,
        })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.cfg
    }

    pub fn z_init(&self) -> &[f64] {
        self.z_init.data()
    }

    /// Accumulates the gradient flowing into the learned initial state from
    /// downstream consumers (the trunk input of each segment's first chunk).
    pub fn add_z_init_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.cfg.state_len() {
            return Err(PtrError::ShapeMismatch(format!(
                "z_init grad: expected {}, got {}",
                self.cfg.state_len(),
                g.len()
            )));
        }
        for (acc, v) in self.grad_z_init.data_mut().iter_mut().zip(g) {
            *acc += v;
        }
        Ok(())
    }

    fn check_rows(&self, rows: &[Vec<f64>], what: &'static str) -> Result<()> {
        if rows.is_empty() {
            return Err(PtrError::EmptyInput(what));
        }
        if rows.iter().any(|r| r.len() != self.cfg.token_dim) {
            return Err(PtrError::ShapeMismatch(format!(
                "{what}: every row must have width {}",
                self.cfg.token_dim
            )));
        }
        Ok(())
    }

    /// c_i = tanh(W_f [context_i; action_i]) per time row.
    pub fn fuse(&self, context: &[Vec<f64>], action: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_rows(context, "fuse context")?;
        self.check_rows(action, "fuse action")?;
        if context.len() != action.len() {
            return Err(PtrError::ShapeMismatch(format!(
                "fuse: {} context rows vs {} action rows",
                context.len(),
                action.len()
            )));
        }
        let d = self.cfg.token_dim;
        let mut out = Vec::with_capacity(context.len());
        let mut joint = vec![0.0; 2 * d];
        let mut pre = vec![0.0; d];
        for (c, a) in context.iter().zip(action) {
            joint[..d].copy_from_slice(c);
            joint[d..].copy_from_slice(a);
            self.w_fuse.matvec(&joint, &mut pre)?;
            out.push(pre.iter().map(|x| x.tanh()).collect());
        }
        Ok(out)
    }

    /// Soft assignment of time rows to token slots: logits W_a c_i, then a
    /// softmax over the time index separately for each slot column.
    pub fn assign(&self, fused: &[Vec<f64>]) -> Result<DenseMatrix> {
        self.check_rows(fused, "assign")?;
        let l = fused.len();
        let m = self.cfg.n_tokens;
        let mut logits = DenseMatrix::zeros(l, m);
        let mut row = vec![0.0; m];
        for (i, c) in fused.iter().enumerate() {
            self.w_assign.matvec(c, &mut row)?;
            logits.row_mut(i).copy_from_slice(&row);
        }
        let mut pi = DenseMatrix::zeros(l, m);
        for col in 0..m {
            let mut max = f64::NEG_INFINITY;
            for i in 0..l {
                max = max.max(logits.get(i, col) / self.cfg.tau);
            }
            let mut sum = 0.0;
            for i in 0..l {
                let e = (logits.get(i, col) / self.cfg.tau - max).exp();
                pi.set(i, col, e);
                sum += e;
            }
            for i in 0..l {
                pi.set(i, col, pi.get(i, col) / sum);
            }
        }
        Ok(pi)
    }

    /// z_m = sum_i pi[i,m] c_i, flattened row-major (M x d).
    pub fn merge(&self, pi: &DenseMatrix, fused: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_merge_shapes(pi, fused.len())?;
        let d = self.cfg.token_dim;
        let m = self.cfg.n_tokens;
        let mut z = vec![0.0; m * d];
        for (i, c) in fused.iter().enumerate() {
            for slot in 0..m {
                let w = pi.get(i, slot);
                let dst = &mut z[slot * d..(slot + 1) * d];
                for (acc, v) in dst.iter_mut().zip(c) {
                    *acc += w * v;
                }
            }
        }
        Ok(z)
    }

    /// c~_i = sum_m pi[i,m] z_m.
    pub fn reconstruct(&self, pi: &DenseMatrix, z: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = self.cfg.token_dim;
        let m = self.cfg.n_tokens;
        if z.len() != m * d {
            return Err(PtrError::ShapeMismatch(format!(
                "reconstruct: z length {} vs {}",
                z.len(),
                m * d
            )));
        }
        if pi.cols() != m || pi.rows() == 0 {
            return Err(PtrError::ShapeMismatch(
                "reconstruct: assignment shape mismatch".into(),
            ));
        }
        let mut out = Vec::with_capacity(pi.rows());
        for i in 0..pi.rows() {
            let mut row = vec![0.0; d];
            for slot in 0..m {
                let w = pi.get(i, slot);
                let src = &z[slot * d..(slot + 1) * d];
                for (acc, v) in row.iter_mut().zip(src) {
                    *acc += w * v;
                }
            }
            out.push(row);
        }
        Ok(out)
    }

    fn check_merge_shapes(&self, pi: &DenseMatrix, l: usize) -> Result<()> {
        if pi.rows() != l || pi.cols() != self.cfg.n_tokens {
            return Err(PtrError::ShapeMismatch(format!(
                "assignments are {}x{}, expected {}x{}",
                pi.rows(),
                pi.cols(),
                l,
                self.cfg.n_tokens
            )));
        }
        Ok(())
    }

    /// Mean over slots of the column entropy. Ranges over [0, ln L].
    pub fn entropy_reg(&self, pi: &DenseMatrix) -> f64 {
        let mut h = 0.0;
        for i in 0..pi.rows() {
            for mcol in 0..pi.cols() {
                let p = pi.get(i, mcol);
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
        }
        h / pi.cols() as f64
    }

    /// Squared Frobenius distance of the assignment Gram matrix from the
    /// identity. Zero exactly when columns are orthonormal.
    pub fn diversity_reg(&self, pi: &DenseMatrix) -> f64 {
        let m = pi.cols();
        let mut d = 0.0;
        for a in 0..m {
            for b in 0..m {
                let mut g = 0.0;
                for i in 0..pi.rows() {
                    g += pi.get(i, a) * pi.get(i, b);
                }
                let target = if a == b { 1.0 } else { 0.0 };
                d += (g - target) * (g - target);
            }
        }
        d
    }

    /// Full chunk update: fuse, assign, merge, regularize.
    pub fn step(
        &self,
        context: &[Vec<f64>],
        action: &[Vec<f64>],
    ) -> Result<(TokenizerStep, TokenizerCache)> {
        let fused = self.fuse(context, action)?;
        let pi = self.assign(&fused)?;
        let z_next = self.merge(&pi, &fused)?;
        let entropy = self.entropy_reg(&pi);
        let diversity = self.diversity_reg(&pi);
        let l_tok = self.cfg.lambda_ent * entropy + self.cfg.lambda_div * diversity;
        let d = self.cfg.token_dim;
        let mut inputs = Vec::with_capacity(context.len());
        for (c, a) in context.iter().zip(action) {
            let mut row = vec![0.0; 2 * d];
            row[..d].copy_from_slice(c);
            row[d..].copy_from_slice(a);
            inputs.push(row);
        }
        Ok((
            TokenizerStep {
                z_next,
                entropy,
                diversity,
                l_tok,
            },
            TokenizerCache { inputs, fused, pi },
        ))
    }

    /// Backward through merge, assign, and fuse.
    ///
    /// `dz` is the loss gradient on the merged state (may be all zero: the
    /// training loop stop-grads z), `ent_coeff` and `div_coeff` multiply
    /// the entropy and diversity regularizers. Returns gradients for the
    /// context rows and action rows; parameter gradients accumulate in
    /// place.
    pub fn backward(
        &mut self,
        cache: &TokenizerCache,
        dz: &[f64],
        ent_coeff: f64,
        div_coeff: f64,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let l = cache.fused.len();
        let d = self.cfg.token_dim;
        let m = self.cfg.n_tokens;
        if dz.len() != m * d {
            return Err(PtrError::ShapeMismatch(format!(
                "tokenizer backward: dz length {} vs {}",
                dz.len(),
                m * d
            )));
        }
        self.check_merge_shapes(&cache.pi, l)?;

        // d(loss)/d(pi) and d(loss)/d(fused) from the merge output.
        let mut dpi = DenseMatrix::zeros(l, m);
        let mut dfused: Vec<Vec<f64>> = vec![vec![0.0; d]; l];
        for i in 0..l {
            for slot in 0..m {
                let zg = &dz[slot * d..(slot + 1) * d];
                let mut acc = 0.0;
                for (a, b) in zg.iter().zip(&cache.fused[i]) {
                    acc += a * b;
                }
                dpi.set(i, slot, acc);
                let w = cache.pi.get(i, slot);
                for (df, g) in dfused[i].iter_mut().zip(zg) {
                    *df += w * g;
                }
            }
        }

        // Entropy: d/d(pi) of -(1/M) sum pi ln pi.
        if ent_coeff != 0.0 {
            let inv_m = 1.0 / m as f64;
            for i in 0..l {
                for slot in 0..m {
                    let p = cache.pi.get(i, slot).max(1e-300);
                    let cur = dpi.get(i, slot);
                    dpi.set(i, slot, cur - ent_coeff * inv_m * (p.ln() + 1.0));
                }
            }
        }

        // Diversity: d/d(pi) of ||pi' pi - I||_F^2 = 4 pi (G - I).
        if div_coeff != 0.0 {
            let mut gram = DenseMatrix::zeros(m, m);
            for a in 0..m {
                for b in 0..m {
                    let mut g = 0.0;
                    for i in 0..l {
                        g += cache.pi.get(i, a) * cache.pi.get(i, b);
                    }
                    gram.set(a, b, g - if a == b { 1.0 } else { 0.0 });
                }
            }
            for i in 0..l {
                for slot in 0..m {
                    let mut acc = 0.0;
                    for n in 0..m {
                        acc += cache.pi.get(i, n) * gram.get(n, slot);
                    }
                    let cur = dpi.get(i, slot);
                    dpi.set(i, slot, cur + div_coeff * 4.0 * acc);
                }
            }
        }

        // Column softmax backward with temperature.
        let mut dxi = DenseMatrix::zeros(l, m);
        for slot in 0..m {
            let mut dot = 0.0;
            for i in 0..l {
                dot += cache.pi.get(i, slot) * dpi.get(i, slot);
            }
            for i in 0..l {
                let p = cache.pi.get(i, slot);
                dxi.set(i, slot, p / self.cfg.tau * (dpi.get(i, slot) - dot));
            }
        }

        // Logits: xi_i = W_a c_i.
        let mut dxi_row = vec![0.0; m];
        let mut dc_row = vec![0.0; d];
        for i in 0..l {
            dxi_row.copy_from_slice(dxi.row(i));
            self.grad_assign.add_outer(&dxi_row, &cache.fused[i])?;
            self.w_assign.matvec_t(&dxi_row, &mut dc_row)?;
            for (df, g) in dfused[i].iter_mut().zip(&dc_row) {
                *df += g;
            }
        }

        // Fuse: c_i = tanh(W_f u_i).
        let mut dcontext = Vec::with_capacity(l);
        let mut daction = Vec::with_capacity(l);
        let mut dpre = vec![0.0; d];
        let mut du = vec![0.0; 2 * d];
        for i in 0..l {
            for k in 0..d {
                let y = cache.fused[i][k];
                dpre[k] = dfused[i][k] * (1.0 - y * y);
            }
            self.grad_fuse.add_outer(&dpre, &cache.inputs[i])?;
            self.w_fuse.matvec_t(&dpre, &mut du)?;
            dcontext.push(du[..d].to_vec());
            daction.push(du[d..].to_vec());
        }
        Ok((dcontext, daction))
    }

    pub fn zero_grads(&mut self) {
        self.grad_fuse.fill(0.0);
        self.grad_assign.fill(0.0);
        self.grad_z_init.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        let d = self.cfg.token_dim;
        let m = self.cfg.n_tokens;
        d * 2 * d + m * d + m * d
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w_fuse.data());
        out.extend_from_slice(self.w_assign.data());
        out.extend_from_slice(self.z_init.data());
    }

    pub fn append_grads(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.grad_fuse.data());
        out.extend_from_slice(self.grad_assign.data());
        out.extend_from_slice(self.grad_z_init.data());
    }

    pub fn load_params(&mut self, src: &[f64]) -> Result<usize> {
        if src.len() < self.param_count() {
            return Err(PtrError::ShapeMismatch(format!(
                "tokenizer load_params: need {}, got {}",
                self.param_count(),
                src.len()
            )));
        }
        let mut off = 0;
        for mat in [&mut self.w_fuse, &mut self.w_assign, &mut self.z_init] {
            let data = mat.data_mut();
            data.copy_from_slice(&src[off..off + data.len()]);
            off += data.len();
        }
        Ok(off)
    }

    /// Test hook: overwrite the fuse weights.
    pub fn set_w_fuse(&mut self, w: DenseMatrix) -> Result<()> {
        if w.rows() != self.cfg.token_dim || w.cols() != 2 * self.cfg.token_dim {
            return Err(PtrError::ShapeMismatch("set_w_fuse shape".into()));
        }
        self.w_fuse = w;
        Ok(())
    }

    /// Test hook: overwrite the assignment weights.
    pub fn set_w_assign(&mut self, w: DenseMatrix) -> Result<()> {
        if w.rows() != self.cfg.n_tokens || w.cols() != self.cfg.token_dim {
            return Err(PtrError::ShapeMismatch("set_w_assign shape".into()));
        }
        self.w_assign = w;
        Ok(())
    }
}
