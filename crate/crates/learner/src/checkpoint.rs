use std::path::Path;

use mavic_core::instructions::InstructionRegistry;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderSpec;
use crate::error::{LearnerError, Result};
use crate::policy::{AgentNets, Policy, PolicyShape};
use crate::update::Mode;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// SHA-256 of the canonical JSON of the training configuration.
    pub config_hash: String,
    pub mode: Mode,
    pub seed: u64,
    pub epoch: usize,
    pub shape: PolicyShape,
    pub encoder: EncoderSpec,
    pub agents: Vec<AgentNets>,
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let canonical = serde_json::to_vec(&serde_json::to_value(config)?)?;
    let digest = Sha256::digest(&canonical);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, config_hash: String, mode: Mode, seed: u64, epoch: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash,
            mode,
            seed,
            epoch,
            shape: policy.shape.clone(),
            encoder: policy.encoder.spec().clone(),
            agents: policy.nets.clone(),
        }
    }

    pub fn policy(&self, registry: &InstructionRegistry) -> Result<Policy> {
        Policy::from_parts(self.shape.clone(), self.agents.clone(), self.encoder.clone(), registry)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cp: Checkpoint = serde_json::from_str(&text)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(LearnerError::Checkpoint(format!("unsupported version {}", cp.version)));
        }
        Ok(cp)
    }
}
