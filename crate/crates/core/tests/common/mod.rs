#![allow(dead_code)]

use tactcap::data::{synth_corpus, SynthConfig, SynthCorpus};
use tactcap::dsp::{DspConfig, InputMode};
use tactcap::training::{Dataset, ModelConfig, TrainConfig};

/// Width-8 model over 7 frames of a 1024-sample signal.
pub fn micro_model() -> ModelConfig {
    let mut m = ModelConfig::with_width(8);
    m.encoder.dsp = DspConfig {
        window: 256,
        hop: 128,
        mel_bins: 8,
        fmin: 10.0,
        fmax: None,
    };
    m.encoder.heads = 2;
    m.encoder.blocks = 1;
    m.encoder.ff = 16;
    m.decoder.heads = 2;
    m.decoder.blocks = 1;
    m.decoder.ff = 16;
    m.decoder.max_len = 12;
    m
}

pub fn tiny_corpus(seed: u64) -> SynthCorpus {
    synth_corpus(&SynthConfig {
        materials: 6,
        samples_per_material: 4,
        duration: 0.1024,
        seed,
        ..SynthConfig::default()
    })
    .expect("tiny corpus")
}

pub fn tiny_dataset(model: &ModelConfig) -> Dataset {
    let c = tiny_corpus(5);
    Dataset::build(
        &c.records,
        &c.signals,
        InputMode::Dft321,
        None,
        &model.encoder.dsp,
        model.decoder.max_len,
    )
    .expect("tiny dataset")
}

pub fn quick_train() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs: 2,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    }
}
