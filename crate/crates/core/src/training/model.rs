use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::decoder::{generate, DecodeMode, DecoderConfig, DecoderModel};
use crate::encoder::{encode, EncoderConfig, EncoderInput, Variant};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// Encoder and decoder defaults sharing feature width `d`.
    pub fn with_width(d: usize) -> Self {
        Self {
            encoder: EncoderConfig::with_width(d),
            decoder: DecoderConfig::with_width(d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.d_model != self.decoder.d_model {
            return Err(Error::config(
                "decoder.d_model",
                format!("must equal encoder.d_model ({})", self.encoder.d_model),
            ));
        }
        Ok(())
    }

    /// Fresh parameters for a vocabulary of `vocab` ids, seeded.
    pub fn init_params(&self, vocab: usize, seed: u64) -> Result<ParamStore<f32>> {
        self.validate()?;
        let mut ps = ParamStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.encoder.init_params(&mut ps, &mut rng)?;
        self.decoder.init_params(&mut ps, &mut rng, vocab)?;
        Ok(ps)
    }
}

/// Trained parameters with everything needed to caption a signal.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore<f32>,
    pub variant: Variant,
}

impl Model {
    /// Encoder memory `[frames, D]` for one input.
    pub fn memory(&self, input: &EncoderInput) -> Result<Tensor<f32>> {
        let g = Graph::new();
        let out = encode(&g, &self.params, &self.config.encoder, input, self.variant)?;
        let m = (*g.value(out.memory.features)).clone();
        if !m.all_finite() {
            return Err(Error::NonFinite {
                context: "encoder memory".into(),
            });
        }
        Ok(m)
    }

    pub fn caption_ids(&self, input: &EncoderInput, mode: DecodeMode) -> Result<Vec<usize>> {
        let step = DecoderModel {
            params: &self.params,
            config: &self.config.decoder,
            memory: self.memory(input)?,
        };
        generate(&step, mode, self.config.decoder.max_len)
    }

    pub fn caption(&self, input: &EncoderInput, mode: DecodeMode) -> Result<String> {
        Ok(self.vocab.decode(&self.caption_ids(input, mode)?))
    }
}
