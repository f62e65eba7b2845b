use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::decoder::{BOS, EOS, NUM_SPECIAL, PAD, UNK};
use crate::error::{Error, Result};

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases, drops punctuation (hyphens survive only between letters or
/// digits) and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut clean = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let keep = if c == '-' {
            let before = i > 0 && chars[i - 1].is_alphanumeric();
            let after = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            before && after
        } else {
            c.is_alphanumeric()
        };
        clean.push(if keep { c } else { ' ' });
    }
    clean.split_whitespace().map(str::to_owned).collect()
}

/// Token ↔ id map with reserved specials at ids 0..4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    /// Corpus frequency of each kept token (0 for specials).
    freq: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps tokens seen at least twice overall and at least once in each
    /// split. Ids follow descending frequency, then lexicographic order.
    pub fn build<'a>(
        train: impl IntoIterator<Item = &'a str>,
        test: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let count = |it: &mut dyn Iterator<Item = &'a str>| {
            let mut m: BTreeMap<String, u64> = BTreeMap::new();
            let mut n = 0usize;
            for caption in it {
                n += 1;
                for t in tokenize(caption) {
                    *m.entry(t).or_default() += 1;
                }
            }
            (m, n)
        };
        let (tr, n_tr) = count(&mut train.into_iter());
        let (te, n_te) = count(&mut test.into_iter());
        if n_tr == 0 || n_te == 0 {
            return Err(Error::Data("vocabulary needs captions in both splits".into()));
        }
        let mut kept: Vec<(String, u64)> = tr
            .iter()
            .filter_map(|(t, &a)| {
                let b = te.get(t).copied().unwrap_or(0);
                (b > 0 && a + b >= 2 && !SPECIAL_TOKENS.contains(&t.as_str())).then(|| (t.clone(), a + b))
            })
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut freq = vec![0; NUM_SPECIAL];
        for (t, f) in kept {
            tokens.push(t);
            freq.push(f);
        }
        Self::from_parts(tokens, freq)
    }

    /// Rebuilds from a stored token list, validating the special prefix.
    pub fn from_parts(tokens: Vec<String>, freq: Vec<u64>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS || freq.len() != tokens.len() {
            return Err(Error::Format(
                "vocabulary must start with the four special tokens".into(),
            ));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Format("duplicate vocabulary entry".into()));
        }
        Ok(Self { tokens, freq, index })
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(self) -> Result<Self> {
        Self::from_parts(self.tokens, self.freq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.get(token).is_some_and(|&i| i >= NUM_SPECIAL)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequency(&self, token: &str) -> u64 {
        self.index.get(token).map_or(0, |&i| self.freq[i])
    }

    /// `BOS w… EOS`, truncated to `max_len` ids with EOS kept last.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(tokenize(text).iter().map(|t| self.id(t)));
        ids.truncate(max_len.max(2) - 1);
        ids.push(EOS);
        ids
    }

    /// Words between BOS and the first EOS; other specials are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                _ => words.push(self.token(id).unwrap_or(SPECIAL_TOKENS[UNK])),
            }
        }
        words.join(" ")
    }

    /// Tokens of `text` the vocabulary knows.
    pub fn known_tokens(&self, text: &str) -> BTreeSet<String> {
        tokenize(text).into_iter().filter(|t| self.contains(t)).collect()
    }
}
