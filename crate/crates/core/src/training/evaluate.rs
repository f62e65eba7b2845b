use serde::{Deserialize, Serialize};

use super::{split_indices, Checkpoint, Dataset, Model, Sample};
use crate::data::{Manifest, Split};
use crate::decoder::{vocab_size, DecodeMode};
use crate::encoder::EncoderInput;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::metrics::{score_corpus, EvalReport};

/// What produces the hypotheses being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalControl {
    /// Captions generated by the model.
    #[default]
    Model,
    /// Each sample's first reference, verbatim.
    Echo,
    /// Model captions assigned to the next sample (mismatch control).
    Shuffled,
    /// Empty captions.
    Empty,
}

pub fn caption_samples(model: &Model, inputs: &[&EncoderInput], mode: DecodeMode) -> Result<Vec<String>> {
    exec::map(Execution::Parallel, inputs, |inp| model.caption(inp, mode))
        .into_iter()
        .collect()
}

pub fn generate_captions(model: &Model, samples: &[Sample], mode: DecodeMode) -> Result<Vec<String>> {
    let inputs: Vec<&EncoderInput> = samples.iter().map(|s| &s.input).collect();
    caption_samples(model, &inputs, mode)
}

/// Scores `samples` against all their references.
pub fn evaluate_with(
    model: &Model,
    samples: &[Sample],
    mode: DecodeMode,
    control: EvalControl,
    label: &str,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let hyps = match control {
        EvalControl::Model => generate_captions(model, samples, mode)?,
        EvalControl::Echo => samples.iter().map(|s| s.captions[0].clone()).collect(),
        EvalControl::Shuffled => {
            let mut h = generate_captions(model, samples, mode)?;
            h.rotate_left(1);
            h
        }
        EvalControl::Empty => vec![String::new(); samples.len()],
    };
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let refs: Vec<Vec<String>> = samples.iter().map(|s| s.captions.clone()).collect();
    score_corpus(label, &ids, &hyps, &refs)
}

/// Evaluates a checkpoint on one side of a manifest's split (the withheld
/// category when the checkpoint was trained with one excluded).
pub fn evaluate(ckpt: &Checkpoint, manifest: &Manifest, split: Split, control: EvalControl) -> Result<EvalReport> {
    if vocab_size(&ckpt.params)? != ckpt.vocab.len() {
        return Err(Error::Data(format!(
            "vocabulary mismatch: checkpoint vocabulary has {} entries, decoder expects {}",
            ckpt.vocab.len(),
            vocab_size(&ckpt.params)?
        )));
    }
    let exclude = ckpt.train.exclude_category.as_deref();
    let (tr, ev) = split_indices(&manifest.records, exclude)?;
    let chosen = if split == Split::Train { tr } else { ev };
    let known = chosen
        .iter()
        .flat_map(|&i| manifest.records[i].captions.iter())
        .any(|c| !ckpt.vocab.known_tokens(c).is_empty());
    if !known {
        return Err(Error::Data(
            "vocabulary mismatch: no reference token is in the checkpoint vocabulary".into(),
        ));
    }
    let signals = Dataset::load_signals(manifest)?;
    let samples = super::prepare_samples(
        &manifest.records,
        &signals,
        &chosen,
        ckpt.train.input_mode,
        &ckpt.model.encoder.dsp,
        &ckpt.vocab,
        ckpt.model.decoder.max_len,
    )?;
    let model = ckpt.model();
    let label = format!("{} / {}", ckpt.train.variant, ckpt.train.input_mode);
    evaluate_with(&model, &samples, ckpt.train.decode, control, &label)
}
