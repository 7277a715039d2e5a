//! One resolved-run configuration covering every stage: world generation,
//! corruption, model shape, pooling, scoring, weighting, control,
//! training, evaluation, and verification. Unknown JSON keys are
//! rejected; omitted keys take defaults, and the resolved form can be
//! echoed back so runs are reproducible from the artifact alone.

use crate::bench::corrupt::CorruptionSpec;
use crate::bench::eval::EvalConfig;
use crate::bench::policy::ModelConfig;
use crate::bench::train::TrainConfig;
use crate::bench::world::WorldConfig;
use crate::controller::ControllerConfig;
use crate::error::{PtrError, Result};
use crate::metrics::fnv1a64;
use crate::pool::PoolConfig;
use crate::reweight::WeightConfig;
use crate::scorer::ScorerConfig;
use crate::theory::VerifyConfig;
use crate::tokenizer::TokenizerConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub corruption: CorruptionSpec,
    pub model: ModelConfig,
    pub tokenizer: TokenizerConfig,
    pub pool: PoolConfig,
    pub scorer: ScorerConfig,
    pub weights: WeightConfig,
    pub controller: ControllerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.corruption.validate()?;
        self.model.validate()?;
        self.tokenizer.validate()?;
        self.pool.validate()?;
        self.scorer.validate()?;
        self.weights.validate()?;
        self.controller.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.tokenizer.token_dim != self.model.h_dim {
            return Err(PtrError::InvalidConfig(format!(
                "tokenizer token_dim {} must equal model h_dim {}",
                self.tokenizer.token_dim, self.model.h_dim
            )));
        }
        if self.model.action_scale != self.world.a_max {
            return Err(PtrError::InvalidConfig(format!(
                "model action_scale {} must match world a_max {} so the \
                 policy's normalized actions line up with execution limits",
                self.model.action_scale, self.world.a_max
            )));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn resolved_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Stable fingerprint of the resolved configuration; checkpoints
    /// refuse to resume under a different one.
    pub fn config_hash(&self) -> u64 {
        let canonical = serde_json::to_string(self).expect("config serializes");
        fnv1a64(canonical.as_bytes())
    }
}
