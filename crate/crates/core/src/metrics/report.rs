use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bleu, rouge_l_sample, CiderIdf, Tokens, MAX_N, ROUGE_BETA};
use crate::data::tokenize;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub max_n: usize,
    pub rouge_beta: f64,
    /// Gaussian length-penalty width; plain CIDEr when absent.
    pub cider_sigma: Option<f64>,
    /// BLEU aggregation level.
    pub bleu_level: String,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            max_n: MAX_N,
            rouge_beta: ROUGE_BETA,
            cider_sigma: None,
            bleu_level: "corpus".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub hypothesis: String,
    /// Sentence-level BLEU-1..4 without smoothing.
    pub bleu: Vec<f64>,
    pub rouge_l: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub samples: Vec<SampleScore>,
    pub config: MetricConfig,
}

/// Scores hypotheses against their reference sets. Text is tokenized with
/// the corpus tokenizer first.
pub fn score_corpus(label: &str, ids: &[String], hyps: &[String], refs: &[Vec<String>]) -> Result<EvalReport> {
    if ids.len() != hyps.len() {
        return Err(Error::Shape {
            op: "score_corpus",
            left: vec![ids.len()],
            right: vec![hyps.len()],
        });
    }
    let h: Vec<Tokens> = hyps.iter().map(|s| tokenize(s)).collect();
    let r: Vec<Vec<Tokens>> = refs.iter().map(|rs| rs.iter().map(|s| tokenize(s)).collect()).collect();
    let corpus_bleu = bleu(&h, &r, MAX_N)?;
    let idf = CiderIdf::new(&r);
    let per: Vec<Result<SampleScore>> = exec::map_range(Execution::Parallel, h.len(), |i| {
        Ok(SampleScore {
            id: ids[i].clone(),
            hypothesis: hyps[i].clone(),
            bleu: bleu(&h[i..=i], &r[i..=i], MAX_N)?,
            rouge_l: rouge_l_sample(&h[i], &r[i], ROUGE_BETA),
            cider: idf.score(&h[i], &r[i]),
        })
    });
    let samples: Vec<SampleScore> = per.into_iter().collect::<Result<_>>()?;
    let n = samples.len() as f64;
    Ok(EvalReport {
        label: label.to_string(),
        bleu1: corpus_bleu[0],
        bleu2: corpus_bleu[1],
        bleu3: corpus_bleu[2],
        bleu4: corpus_bleu[3],
        rouge_l: samples.iter().map(|s| s.rouge_l).sum::<f64>() / n,
        cider: samples.iter().map(|s| s.cider).sum::<f64>() / n,
        samples,
        config: MetricConfig::default(),
    })
}

pub const TABLE_HEADER: [&str; 6] = ["BLEU1", "BLEU2", "BLEU3", "BLEU4", "ROUGE-L", "CIDEr"];

impl EvalReport {
    pub fn scores(&self) -> [f64; 6] {
        [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l, self.cider]
    }

    /// Aligned rows `label | BLEU1 … CIDEr` for several reports.
    pub fn table(reports: &[&EvalReport]) -> String {
        let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "Model");
        for h in TABLE_HEADER {
            let _ = write!(out, "  {h:>7}");
        }
        out.push('\n');
        for r in reports {
            let _ = write!(out, "{:<width$}", r.label);
            for v in r.scores() {
                let _ = write!(out, "  {v:>7.4}");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        format!(
            "# BLEU: {}-level, ROUGE-L beta {}, CIDEr without length penalty; {} samples\n{}",
            self.config.bleu_level,
            self.config.rouge_beta,
            self.samples.len(),
            Self::table(&[self])
        )
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes `<stem>.json` and `<stem>.txt`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))
    }
}
