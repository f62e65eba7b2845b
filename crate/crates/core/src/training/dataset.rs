use crate::data::{CaptionRecord, Manifest, Split, Vocab};
use crate::dsp::{to_mono, DspConfig, InputMode, TriaxialSignal};
use crate::encoder::EncoderInput;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// One prepared training or evaluation example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub category: String,
    pub captions: Vec<String>,
    /// Encoded captions, `BOS … EOS`.
    pub targets: Vec<Vec<usize>>,
    pub input: EncoderInput,
}

/// Train and evaluation samples sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

/// Train / evaluation record indices. With `exclude`, every record of that
/// category is evaluated and none is trained on; otherwise the manifest
/// split tags decide.
pub fn split_indices(records: &[CaptionRecord], exclude: Option<&str>) -> Result<(Vec<usize>, Vec<usize>)> {
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        match exclude {
            Some(c) if r.category == c => eval.push(i),
            Some(_) if r.split == Split::Test => {}
            _ if r.split == Split::Train => train.push(i),
            _ => eval.push(i),
        }
    }
    if let Some(c) = exclude {
        if eval.is_empty() {
            return Err(Error::config(
                "exclude_category",
                format!("no records in category `{c}`"),
            ));
        }
    }
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Data("both training and evaluation records are required".into()));
    }
    Ok((train, eval))
}

/// Encoder inputs and encoded captions for `idx`, computed in parallel.
pub fn prepare_samples(
    records: &[CaptionRecord],
    signals: &[TriaxialSignal],
    idx: &[usize],
    mode: InputMode,
    dsp: &DspConfig,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<Sample>> {
    exec::map(Execution::Parallel, idx, |&i| {
        let r = &records[i];
        let mono = to_mono(&signals[i], mode)?;
        let input = EncoderInput::from_signal(&mono, dsp).map_err(|e| Error::Data(format!("{}: {e}", r.id)))?;
        Ok(Sample {
            id: r.id.clone(),
            category: r.category.clone(),
            captions: r.captions.clone(),
            targets: r.captions.iter().map(|c| vocab.encode(c, max_len)).collect(),
            input,
        })
    })
    .into_iter()
    .collect()
}

impl Dataset {
    /// Builds the vocabulary from the two sides of the split, then prepares
    /// every sample.
    pub fn build(
        records: &[CaptionRecord],
        signals: &[TriaxialSignal],
        mode: InputMode,
        exclude: Option<&str>,
        dsp: &DspConfig,
        max_len: usize,
    ) -> Result<Self> {
        if records.len() != signals.len() {
            return Err(Error::Data("records and signals differ in count".into()));
        }
        let (tr, ev) = split_indices(records, exclude)?;
        let caps = |idx: &[usize]| -> Vec<&str> {
            idx.iter()
                .flat_map(|&i| records[i].captions.iter().map(String::as_str))
                .collect()
        };
        let vocab = Vocab::build(caps(&tr), caps(&ev))?;
        Self::with_vocab(records, signals, mode, exclude, dsp, max_len, vocab)
    }

    /// Prepares samples against an existing vocabulary (e.g. from a checkpoint).
    pub fn with_vocab(
        records: &[CaptionRecord],
        signals: &[TriaxialSignal],
        mode: InputMode,
        exclude: Option<&str>,
        dsp: &DspConfig,
        max_len: usize,
        vocab: Vocab,
    ) -> Result<Self> {
        let (tr, ev) = split_indices(records, exclude)?;
        let train = prepare_samples(records, signals, &tr, mode, dsp, &vocab, max_len)?;
        let eval = prepare_samples(records, signals, &ev, mode, dsp, &vocab, max_len)?;
        Ok(Self { vocab, train, eval })
    }

    /// Loads every signal referenced by `manifest`.
    pub fn load_signals(manifest: &Manifest) -> Result<Vec<TriaxialSignal>> {
        exec::map(Execution::Parallel, &manifest.records, |r| manifest.load_signal(r))
            .into_iter()
            .collect()
    }
}
