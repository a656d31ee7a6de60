//! Run configuration: one JSON document covering every subsystem, with
//! strict field checking and a stable content hash for artifact provenance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::synth::SynthConfig;
use crate::decoder::DecodeConfig;
use crate::error::Result;
use crate::generator::GeneratorConfig;
use crate::joint::JointConfig;
use crate::simulator::{CalibrationConfig, EfficiencyConfig};
use crate::tracer::TracerConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub calibration: CalibrationConfig,
    pub efficiency: EfficiencyConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: SynthConfig,
    pub tracer: TracerConfig,
    pub generator: GeneratorConfig,
    pub joint: JointConfig,
    pub decode: DecodeConfig,
    pub sim: SimSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            corpus: SynthConfig::default(),
            tracer: TracerConfig::default(),
            generator: GeneratorConfig::default(),
            joint: JointConfig::default(),
            decode: DecodeConfig::default(),
            sim: SimSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.tracer.validate()?;
        self.generator.validate()?;
        self.joint.validate()
    }

    /// SHA-256 of the canonical JSON encoding, hex-encoded. Stable across
    /// runs and sensitive to every field.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
