use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, ModelConfig, ModelParams};
use crate::corpus::{write_atomic, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::ParamSet;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Seeds that produced a parameter snapshot, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub init: u64,
    #[serde(default)]
    pub stages: Vec<(String, u64)>,
}

/// Self-describing model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab: Vocabulary,
    pub config: ModelConfig,
    pub dims: Dims,
    pub seeds: SeedLineage,
    pub params: ParamSet,
    /// The configuration of the run that wrote this file.
    #[serde(default)]
    pub run_config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(
        vocab: Vocabulary,
        params: &ModelParams,
        seeds: SeedLineage,
        run_config: serde_json::Value,
    ) -> Result<Self> {
        let dims = params.dims();
        if vocab.num_words() != dims.words || vocab.num_entities() != dims.entities {
            return Err(Error::Config(format!(
                "vocabulary ({} words, {} entities) does not match model dims {dims:?}",
                vocab.num_words(),
                vocab.num_entities()
            )));
        }
        Ok(Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            vocab,
            config: *params.config(),
            dims,
            seeds,
            params: params.tensors().clone(),
            run_config,
        })
    }

    pub fn model(&self) -> Result<ModelParams> {
        for (_, name, t) in self.params.iter() {
            if t.shape().iter().product::<usize>() != t.len() {
                return Err(Error::Config(format!("parameter {name} has inconsistent shape")));
            }
        }
        ModelParams::from_tensors(self.config, self.dims, self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version > CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is newer than supported {}",
                ck.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
