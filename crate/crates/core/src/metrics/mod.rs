//! Multi-reference caption metrics: corpus BLEU-1..4, ROUGE-L and CIDEr,
//! plus the report that bundles them.

mod ngram;
mod report;

use std::collections::HashMap;

pub use report::{score_corpus, EvalReport, MetricConfig, SampleScore, TABLE_HEADER};

use crate::error::{Error, Result};
use ngram::{counts, Gram};

pub type Tokens = Vec<String>;

pub const ROUGE_BETA: f64 = 1.2;
pub const MAX_N: usize = 4;

fn check(hyps: &[Tokens], refs: &[Vec<Tokens>]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Data("no hypotheses to score".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Shape {
            op: "metrics",
            left: vec![hyps.len()],
            right: vec![refs.len()],
        });
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(Error::Data(format!("sample {i} has no references")));
    }
    Ok(())
}

/// Corpus BLEU-1..=`max_n` with per-reference clipping and a brevity
/// penalty against the closest reference length (shorter wins ties).
pub fn bleu(hyps: &[Tokens], refs: &[Vec<Tokens>], max_n: usize) -> Result<Vec<f64>> {
    check(hyps, refs)?;
    let mut matched = vec![0u64; max_n];
    let mut total = vec![0u64; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        c += h.len();
        r += rs
            .iter()
            .map(|x| x.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let hc = counts(h, n);
            let mut max_ref: HashMap<Gram, u64> = HashMap::new();
            for x in rs {
                for (g, k) in counts(x, n) {
                    let e = max_ref.entry(g).or_default();
                    *e = (*e).max(k);
                }
            }
            for (g, k) in &hc {
                matched[n - 1] += (*k).min(max_ref.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    if c == 0 {
        return Ok(vec![0.0; max_n]);
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            zero = true;
        } else {
            log_sum += (matched[n] as f64 / total[n] as f64).ln();
        }
        out.push(if zero {
            0.0
        } else {
            bp * (log_sum / (n + 1) as f64).exp()
        });
    }
    Ok(out)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure of one pair.
pub fn rouge_l_pair(hyp: &[String], reference: &[String], beta: f64) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(hyp, reference) as f64;
    let (rec, prec) = (l / reference.len() as f64, l / hyp.len() as f64);
    if rec == 0.0 && prec == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * rec * prec / (rec + b2 * prec)
}

/// Per-sample ROUGE-L (best reference).
pub fn rouge_l_sample(hyp: &[String], refs: &[Tokens], beta: f64) -> f64 {
    refs.iter().map(|r| rouge_l_pair(hyp, r, beta)).fold(0.0, f64::max)
}

/// Mean over samples of the best-reference ROUGE-L.
pub fn rouge_l(hyps: &[Tokens], refs: &[Vec<Tokens>], beta: f64) -> Result<f64> {
    check(hyps, refs)?;
    let s: f64 = hyps.iter().zip(refs).map(|(h, r)| rouge_l_sample(h, r, beta)).sum();
    Ok(s / hyps.len() as f64)
}

/// Document frequencies over the reference sets of the evaluated corpus.
pub struct CiderIdf {
    docs: f64,
    df: Vec<HashMap<Gram, u64>>,
}

impl CiderIdf {
    pub fn new(refs: &[Vec<Tokens>]) -> Self {
        let mut df = vec![HashMap::new(); MAX_N];
        for rs in refs {
            for (n, table) in df.iter_mut().enumerate() {
                let mut seen = std::collections::HashSet::new();
                for r in rs {
                    seen.extend(counts(r, n + 1).into_keys());
                }
                for g in seen {
                    *table.entry(g).or_default() += 1;
                }
            }
        }
        Self {
            docs: refs.len() as f64,
            df,
        }
    }

    fn idf(&self, n: usize, g: &Gram) -> f64 {
        let df = self.df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64;
        (self.docs / df).ln()
    }

    fn vector(&self, toks: &[String], n: usize) -> HashMap<Gram, f64> {
        counts(toks, n)
            .into_iter()
            .map(|(g, k)| {
                let w = k as f64 * self.idf(n, &g);
                (g, w)
            })
            .collect()
    }

    /// CIDEr of one hypothesis: cosine of TF-IDF vectors averaged over
    /// references, then over n = 1..4, times 10.
    pub fn score(&self, hyp: &[String], refs: &[Tokens]) -> f64 {
        if refs.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=MAX_N {
            let hv = self.vector(hyp, n);
            let hn = norm(&hv);
            let mut acc = 0.0;
            for r in refs {
                let rv = self.vector(r, n);
                let rn = norm(&rv);
                if hn > 0.0 && rn > 0.0 {
                    let dot: f64 = hv.iter().map(|(g, a)| a * rv.get(g).copied().unwrap_or(0.0)).sum();
                    acc += dot / (hn * rn);
                }
            }
            total += acc / refs.len() as f64;
        }
        10.0 * total / MAX_N as f64
    }
}

fn norm(v: &HashMap<Gram, f64>) -> f64 {
    v.values().map(|x| x * x).sum::<f64>().sqrt()
}

/// Corpus CIDEr (mean of per-sample scores), IDF from `refs`.
pub fn cider(hyps: &[Tokens], refs: &[Vec<Tokens>]) -> Result<f64> {
    check(hyps, refs)?;
    let idf = CiderIdf::new(refs);
    let s: f64 = hyps.iter().zip(refs).map(|(h, r)| idf.score(h, r)).sum();
    Ok(s / hyps.len() as f64)
}

/// Whitespace tokens of each string; metrics assume pre-normalized text.
pub fn words(s: &str) -> Tokens {
    s.split_whitespace().map(str::to_owned).collect()
}
