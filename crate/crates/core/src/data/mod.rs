//! Corpus handling: tokenization and vocabulary control, the JSON-lines
//! manifest, caption constraints and the synthetic signal/caption generator.

mod manifest;
pub mod synth;
mod text;

pub use manifest::{
    load_manifest, validate_manifest, write_manifest, CaptionRecord, Manifest, Split, ValidationReport,
};
pub use synth::{synth_corpus, write_corpus, MaterialClass, MaterialParams, SynthConfig, SynthCorpus};
pub use text::{tokenize, Vocab, SPECIAL_TOKENS};

pub const CAPTIONS_PER_SAMPLE: usize = 5;
pub const MAX_CAPTION_WORDS: usize = 15;
pub const CAPTION_PREFIX: [&str; 3] = ["this", "material", "surface"];

pub const COLOR_TERMS: [&str; 24] = [
    "red",
    "orange",
    "yellow",
    "green",
    "blue",
    "purple",
    "violet",
    "pink",
    "brown",
    "black",
    "white",
    "gray",
    "grey",
    "beige",
    "tan",
    "maroon",
    "navy",
    "teal",
    "cyan",
    "magenta",
    "gold",
    "silver",
    "ivory",
    "turquoise",
];

/// Constraint violations of one caption; empty when it complies.
pub fn caption_problems(caption: &str) -> Vec<String> {
    let toks = tokenize(caption);
    let mut out = Vec::new();
    if toks.len() < CAPTION_PREFIX.len() || toks[..CAPTION_PREFIX.len()] != CAPTION_PREFIX {
        out.push("does not start with \"this material surface\"".to_string());
    }
    if toks.len() > MAX_CAPTION_WORDS {
        out.push(format!("{} words exceeds {MAX_CAPTION_WORDS}", toks.len()));
    }
    for t in &toks {
        if COLOR_TERMS.contains(&t.as_str()) {
            out.push(format!("color term `{t}`"));
        }
    }
    out
}
