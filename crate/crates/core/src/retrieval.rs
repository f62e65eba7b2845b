//! Keyword retrieval over generated captions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{tokenize, Manifest};
use crate::decoder::DecodeMode;
use crate::error::{Error, Result};
use crate::training::{prepare_samples, Checkpoint, Dataset};

pub const INDEX_FILE: &str = "index.json";

/// Hex SHA-256 of checkpoint bytes.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub caption: String,
    pub signal_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hit {
    pub id: String,
    pub caption: String,
    pub signal_path: String,
    /// Distinct query tokens found in the caption.
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub fingerprint: String,
    pub entries: Vec<IndexEntry>,
    /// token -> positions in `entries`, ascending.
    pub postings: BTreeMap<String, Vec<usize>>,
}

impl RetrievalIndex {
    pub fn build(fingerprint: String, mut entries: Vec<IndexEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Data(format!("duplicate sample id `{}`", w[0].id)));
        }
        let mut postings: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            let toks: BTreeSet<String> = tokenize(&e.caption).into_iter().collect();
            for t in toks {
                postings.entry(t).or_default().push(i);
            }
        }
        Ok(Self {
            fingerprint,
            entries,
            postings,
        })
    }

    /// Captions every manifest record with the checkpoint's model.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        ckpt_bytes: &[u8],
        manifest: &Manifest,
        mode: DecodeMode,
    ) -> Result<Self> {
        let signals = Dataset::load_signals(manifest)?;
        let idx: Vec<usize> = (0..manifest.records.len()).collect();
        let samples = prepare_samples(
            &manifest.records,
            &signals,
            &idx,
            ckpt.train.input_mode,
            &ckpt.model.encoder.dsp,
            &ckpt.vocab,
            ckpt.model.decoder.max_len,
        )?;
        let captions = crate::training::generate_captions(&ckpt.model(), &samples, mode)?;
        let entries = manifest
            .records
            .iter()
            .zip(captions)
            .map(|(r, caption)| IndexEntry {
                id: r.id.clone(),
                caption,
                signal_path: manifest.resolve(r).display().to_string(),
            })
            .collect();
        Self::build(fingerprint(ckpt_bytes), entries)
    }

    /// Samples sharing at least one token with `query`, most matches first,
    /// ties by id.
    pub fn query(&self, query: &str) -> Result<Vec<Hit>> {
        let toks: BTreeSet<String> = tokenize(query).into_iter().collect();
        if toks.is_empty() {
            return Err(Error::config("query", "must contain at least one word"));
        }
        let mut counts = vec![0usize; self.entries.len()];
        for t in &toks {
            for &i in self.postings.get(t).map(Vec::as_slice).unwrap_or(&[]) {
                counts[i] += 1;
            }
        }
        let mut hits: Vec<Hit> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &matched)| {
                let e = &self.entries[i];
                Hit {
                    id: e.id.clone(),
                    caption: e.caption.clone(),
                    signal_path: e.signal_path.clone(),
                    matched,
                }
            })
            .collect();
        hits.sort_by(|a, b| b.matched.cmp(&a.matched).then_with(|| a.id.cmp(&b.id)));
        Ok(hits)
    }

    /// Errors unless the index was built from the checkpoint with `fp`.
    pub fn ensure_fresh(&self, fp: &str) -> Result<()> {
        if self.fingerprint != fp {
            return Err(Error::Data(format!(
                "retrieval index is stale (built from checkpoint {}, current is {}); rebuild it with --build",
                &self.fingerprint[..self.fingerprint.len().min(12)],
                &fp[..fp.len().min(12)]
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(INDEX_FILE);
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(INDEX_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let idx: Self =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        idx.check_consistency()?;
        Ok(idx)
    }

    /// Every posting points at a caption containing its token.
    pub fn check_consistency(&self) -> Result<()> {
        for (tok, ids) in &self.postings {
            for &i in ids {
                let e = self
                    .entries
                    .get(i)
                    .ok_or_else(|| Error::Format(format!("posting for `{tok}` points past the entry list")))?;
                if !tokenize(&e.caption).iter().any(|t| t == tok) {
                    return Err(Error::Format(format!(
                        "token `{tok}` is not in the caption of `{}`",
                        e.id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, caption: &str) -> IndexEntry {
        IndexEntry {
            id: id.into(),
            caption: caption.into(),
            signal_path: format!("signals/{id}.csv"),
        }
    }

    fn index() -> RetrievalIndex {
        RetrievalIndex::build(
            "ab".repeat(32),
            vec![
                entry("s3", "a smooth regular surface"),
                entry("s1", "a rough grainy surface"),
                entry("s2", "a smooth surface with bumps"),
                entry("s4", "velvet"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn unique_token_finds_single_sample() {
        let h = index().query("velvet").unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].id, "s4");
    }

    #[test]
    fn more_matches_rank_first_then_id() {
        let h = index().query("Smooth, regular!").unwrap();
        let ids: Vec<_> = h.iter().map(|x| (x.id.as_str(), x.matched)).collect();
        assert_eq!(ids, [("s3", 2), ("s2", 1)]);
        let h = index().query("surface").unwrap();
        let ids: Vec<_> = h.iter().map(|x| x.id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2", "s3"]);
    }

    #[test]
    fn repeated_query_words_count_once() {
        let h = index().query("smooth smooth smooth").unwrap();
        assert!(h.iter().all(|x| x.matched == 1));
    }

    #[test]
    fn no_overlap_is_empty_not_error() {
        assert!(index().query("zebra").unwrap().is_empty());
        assert!(index().query("  ?! ").is_err());
    }

    #[test]
    fn stale_fingerprint_is_reported() {
        let idx = index();
        idx.ensure_fresh(&"ab".repeat(32)).unwrap();
        let e = idx.ensure_fresh(&"cd".repeat(32)).unwrap_err();
        assert!(e.to_string().contains("--build"));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = index();
        idx.save(dir.path()).unwrap();
        assert_eq!(RetrievalIndex::load(dir.path()).unwrap(), idx);
    }

    #[test]
    fn fingerprint_is_sha256() {
        assert_eq!(
            fingerprint(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
