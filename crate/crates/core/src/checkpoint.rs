//! Versioned model checkpoints. JSON keeps f64 values bit-exact via
//! shortest-round-trip encoding, so a saved model reloads identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::ParameterStore;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub vocab: Vocabulary,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn new(config: RunConfig, seed: u64, vocab: Vocabulary, params: ParameterStore) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            seed,
            vocab,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut ckpt: Checkpoint = serde_json::from_str(json)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.vocab.reindex();
        ckpt.params.zero_grads();
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
