//! The translation network: generator, patch discriminator and the
//! projection heads used by the contrastive loss.

mod discriminator;
mod generator;
mod heads;
pub mod init;

pub use discriminator::{Discriminator, DiscriminatorConfig, DISCRIMINATOR_STACK, MIN_DISCRIMINATOR_INPUT};
pub use generator::{Generator, GeneratorConfig, GeneratorOutput, NOISE_CHOICES};
pub use heads::{HeadsConfig, ProjectionHeads};

use std::path::Path;

use serde::{Deserialize, Serialize};
use syn2real_tensor::Scalar;

use crate::checkpoint::{self, CheckpointMeta};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub heads: HeadsConfig,
}

pub struct TranslationModel<T: Scalar> {
    pub config: ModelConfig,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub heads: ProjectionHeads<T>,
}

pub const TRANSLATION_KIND: &str = "translation";

impl<T: Scalar> TranslationModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let generator = Generator::new(config.generator.clone(), derive_seed(seed, 1))?;
        let discriminator = Discriminator::new(config.discriminator.clone(), derive_seed(seed, 2))?;
        let channels: Vec<usize> = config
            .generator
            .nce_layers
            .iter()
            .map(|&l| config.generator.layer_channels(l))
            .collect();
        let heads = ProjectionHeads::new(config.heads.clone(), &channels, derive_seed(seed, 3))?;
        Ok(Self {
            config,
            generator,
            discriminator,
            heads,
        })
    }

    pub fn save(&self, dir: &Path, step: u64, config_hash: &str, extra: serde_json::Value) -> Result<()> {
        let meta = CheckpointMeta::new(
            TRANSLATION_KIND,
            serde_json::to_value(&self.config).map_err(|e| Error::Format(e.to_string()))?,
            step,
            config_hash,
            extra,
        );
        checkpoint::save(
            dir,
            meta,
            &[
                ("generator", &self.generator.params),
                ("discriminator", &self.discriminator.params),
                ("heads", &self.heads.params),
            ],
        )
    }

    /// Rebuilds the architecture from `meta.json` and loads every tensor.
    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let meta = checkpoint::read_meta(dir)?;
        if meta.kind != TRANSLATION_KIND {
            return Err(Error::Format(format!("{} holds a {} checkpoint", dir.display(), meta.kind)));
        }
        let config: ModelConfig =
            serde_json::from_value(meta.architecture.clone()).map_err(|e| Error::Format(e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        checkpoint::load(
            dir,
            &meta,
            &mut [
                ("generator", &mut model.generator.params),
                ("discriminator", &mut model.discriminator.params),
                ("heads", &mut model.heads.params),
            ],
        )?;
        Ok((model, meta))
    }
}
