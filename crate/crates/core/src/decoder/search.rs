use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Anything that scores the next token given a prefix.
pub trait StepModel {
    fn vocab_size(&self) -> usize;
    /// Natural-log probabilities over the vocabulary after `prefix`.
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam(usize),
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeMode::Greedy => f.write_str("greedy"),
            DecodeMode::Beam(k) => write!(f, "beam{k}"),
        }
    }
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "greedy" {
            return Ok(DecodeMode::Greedy);
        }
        s.strip_prefix("beam")
            .and_then(|k| k.trim_start_matches([':', '=']).parse::<usize>().ok())
            .filter(|&k| k > 0)
            .map(DecodeMode::Beam)
            .ok_or_else(|| Error::config("decode", format!("expected `greedy` or `beam<k>`, got `{s}`")))
    }
}

pub const LENGTH_PENALTY: f64 = 0.7;

fn allowed(tok: usize) -> bool {
    tok != PAD && tok != BOS
}

fn checked_log_probs<M: StepModel + ?Sized>(model: &M, prefix: &[usize]) -> Result<Vec<f64>> {
    let lp = model.log_probs(prefix)?;
    if lp.len() != model.vocab_size() {
        return Err(Error::Shape {
            op: "log_probs",
            left: vec![lp.len()],
            right: vec![model.vocab_size()],
        });
    }
    if lp.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            context: "decoder log-probabilities".into(),
        });
    }
    Ok(lp)
}

/// Length-normalized score used to rank finished hypotheses.
pub fn normalized_score(log_prob: f64, generated: usize) -> f64 {
    log_prob / (generated.max(1) as f64).powf(LENGTH_PENALTY)
}

/// Total log-probability of the tokens after BOS.
pub fn sequence_log_prob<M: StepModel + ?Sized>(model: &M, seq: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for t in 1..seq.len() {
        total += checked_log_probs(model, &seq[..t])?[seq[t]];
    }
    Ok(total)
}

fn greedy<M: StepModel + ?Sized>(model: &M, max_len: usize) -> Result<(Vec<usize>, f64)> {
    let mut seq = vec![BOS];
    let mut total = 0.0;
    while seq.len() < max_len {
        let lp = checked_log_probs(model, &seq)?;
        let mut best: Option<usize> = None;
        for (tok, &v) in lp.iter().enumerate() {
            if allowed(tok) && best.is_none_or(|b| v > lp[b]) {
                best = Some(tok);
            }
        }
        let Some(tok) = best else { break };
        total += lp[tok];
        seq.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok((seq, total))
}

#[derive(Clone)]
struct Hyp {
    seq: Vec<usize>,
    log_prob: f64,
}

impl Hyp {
    fn score(&self) -> f64 {
        normalized_score(self.log_prob, self.seq.len() - 1)
    }
}

fn by_score(a: &Hyp, b: &Hyp) -> Ordering {
    b.score().total_cmp(&a.score()).then_with(|| a.seq.cmp(&b.seq))
}

fn beam<M: StepModel + ?Sized>(model: &M, k: usize, max_len: usize) -> Result<Vec<usize>> {
    let (g_seq, g_lp) = greedy(model, max_len)?;
    let mut pool = vec![Hyp {
        seq: g_seq,
        log_prob: g_lp,
    }];
    let mut beams = vec![Hyp {
        seq: vec![BOS],
        log_prob: 0.0,
    }];
    while !beams.is_empty() {
        let mut cand = Vec::new();
        for h in &beams {
            let lp = checked_log_probs(model, &h.seq)?;
            for (tok, &v) in lp.iter().enumerate() {
                if allowed(tok) && v > f64::NEG_INFINITY {
                    let mut seq = h.seq.clone();
                    seq.push(tok);
                    cand.push(Hyp {
                        seq,
                        log_prob: h.log_prob + v,
                    });
                }
            }
        }
        cand.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.seq.cmp(&b.seq)));
        cand.truncate(k);
        beams.clear();
        for h in cand {
            if h.seq.last() == Some(&EOS) || h.seq.len() >= max_len {
                pool.push(h);
            } else {
                beams.push(h);
            }
        }
    }
    pool.sort_by(by_score);
    Ok(pool.swap_remove(0).seq)
}

/// Generates a token sequence starting with BOS and ending at EOS or
/// `max_len` tokens. PAD and BOS are never emitted; ties go to the lowest id.
///
/// Beam search ranks finished hypotheses by `log p / len^0.7` over generated
/// tokens and always includes the greedy sequence among the candidates.
pub fn generate<M: StepModel + ?Sized>(model: &M, mode: DecodeMode, max_len: usize) -> Result<Vec<usize>> {
    if max_len < 2 {
        return Err(Error::config("max_len", "must be at least 2"));
    }
    match mode {
        DecodeMode::Greedy => Ok(greedy(model, max_len)?.0),
        DecodeMode::Beam(0) => Err(Error::config("beam", "width must be positive")),
        DecodeMode::Beam(1) => Ok(greedy(model, max_len)?.0),
        DecodeMode::Beam(k) => beam(model, k, max_len),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Emits a scripted sequence with certainty.
    struct Scripted(Vec<usize>, usize);

    impl StepModel for Scripted {
        fn vocab_size(&self) -> usize {
            self.1
        }

        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let pos = prefix.len() - 1;
            let want = self.0.get(pos).copied().unwrap_or(EOS);
            Ok((0..self.1)
                .map(|t| if t == want { 0.0 } else { f64::NEG_INFINITY })
                .collect())
        }
    }

    /// Two-step toy: first token 4 (p=.6) or 5 (p=.4); after 4 the next
    /// token is spread thin, after 5 it is nearly certain.
    struct Trap;

    impl StepModel for Trap {
        fn vocab_size(&self) -> usize {
            10
        }

        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let mut p = [0.0; 10];
            match prefix {
                [BOS] => {
                    p[4] = 0.6;
                    p[5] = 0.4;
                }
                [BOS, 4] => {
                    p[6..10].fill(0.25);
                }
                [BOS, 5] => {
                    p[6] = 0.95;
                    p[7] = 0.05;
                }
                _ => p[EOS] = 1.0,
            }
            Ok(p.iter().map(|v: &f64| v.ln()).collect())
        }
    }

    #[test]
    fn scripted_sequence_is_reproduced() {
        let m = Scripted(vec![7, 5, 6], 9);
        for mode in [DecodeMode::Greedy, DecodeMode::Beam(1), DecodeMode::Beam(3)] {
            assert_eq!(generate(&m, mode, 20).unwrap(), vec![BOS, 7, 5, 6, EOS]);
        }
        assert_eq!(generate(&m, DecodeMode::Greedy, 3).unwrap(), vec![BOS, 7, 5]);
    }

    #[test]
    fn beam_escapes_greedy_trap() {
        let greedy_seq = generate(&Trap, DecodeMode::Greedy, 20).unwrap();
        assert_eq!(greedy_seq, vec![BOS, 4, 6, EOS]);
        let beam_seq = generate(&Trap, DecodeMode::Beam(3), 20).unwrap();
        assert_eq!(beam_seq, vec![BOS, 5, 6, EOS]);
        // exhaustive enumeration of the 2-step sequences
        let mut best = (f64::MIN, vec![]);
        for a in [4, 5] {
            for b in 6..10 {
                let s = vec![BOS, a, b, EOS];
                let lp = sequence_log_prob(&Trap, &s).unwrap();
                if lp > best.0 {
                    best = (lp, s);
                }
            }
        }
        assert_eq!(best.1, beam_seq);
    }

    #[test]
    fn ties_break_to_lowest_id() {
        struct Flat;
        impl StepModel for Flat {
            fn vocab_size(&self) -> usize {
                6
            }
            fn log_probs(&self, _: &[usize]) -> Result<Vec<f64>> {
                Ok(vec![(1.0f64 / 6.0).ln(); 6])
            }
        }
        // PAD and BOS are masked, so EOS (2) is the lowest allowed id.
        assert_eq!(generate(&Flat, DecodeMode::Greedy, 10).unwrap(), vec![BOS, EOS]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("greedy".parse::<DecodeMode>().unwrap(), DecodeMode::Greedy);
        assert_eq!("beam3".parse::<DecodeMode>().unwrap(), DecodeMode::Beam(3));
        assert_eq!("beam:5".parse::<DecodeMode>().unwrap(), DecodeMode::Beam(5));
        assert!("beam0".parse::<DecodeMode>().is_err());
        assert!("sample".parse::<DecodeMode>().is_err());
        assert!(generate(&Trap, DecodeMode::Greedy, 1).is_err());
    }
}
