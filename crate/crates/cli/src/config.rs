use std::path::Path;

use anyhow::Context;
use pamt::adversarial::DefenseConfig;
use pamt::audio::{CorpusConfig, SAMPLE_RATE_HZ};
use pamt::metrics::JudgeConfig;
use pamt::pcsct::{PcsctConfig, TrainConfig};
use pamt::perturb::PerturbationKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Complete run configuration. Every field has a default, so `{}` is valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of corpus synthesis, perturbation sampling and judging.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub perturb: PerturbSection,
    pub model: PcsctConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub attack: DefenseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub classes: usize,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub sample_rate_hz: u32,
    pub register_step_octaves: f64,
    /// Seed of the frozen toy encoder.
    pub encoder_seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            classes: c.classes,
            clips_per_class: c.clips_per_class,
            clip_seconds: c.clip_seconds,
            sample_rate_hz: SAMPLE_RATE_HZ,
            register_step_octaves: c.register_step_octaves,
            encoder_seed: 0,
        }
    }
}

impl CorpusSection {
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            classes: self.classes,
            clips_per_class: self.clips_per_class,
            clip_seconds: self.clip_seconds,
            sample_rate_hz: self.sample_rate_hz,
            register_step_octaves: self.register_step_octaves,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSection {
    /// Kind used by `perturb` when `--kind` is absent; random when unset.
    pub kind: Option<PerturbationKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub test_frac: f64,
    pub val_frac: f64,
    pub judge: JudgeConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = pamt::experiment::ProtocolConfig::default();
        Self {
            test_frac: p.test_frac,
            val_frac: p.val_frac,
            judge: JudgeConfig::noiseless(),
        }
    }
}

impl EvalSection {
    pub fn protocol(&self) -> pamt::experiment::ProtocolConfig {
        pamt::experiment::ProtocolConfig {
            test_frac: self.test_frac,
            val_frac: self.val_frac,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::Runtime)?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    /// Applies `--seed` to every seeded stage.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.train.seed = s;
            self.attack.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.judge.validate()?;
        self.eval.protocol().validate()?;
        self.attack.validate()?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
