//! Autoregressive transformer decoder over encoder memory, with
//! teacher-forced cross-entropy and greedy / beam generation.

mod search;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use search::{generate, normalized_score, sequence_log_prob, DecodeMode, StepModel, LENGTH_PENALTY};

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff: usize,
    /// Longest token sequence including BOS and EOS.
    pub max_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::with_width(128)
    }
}

impl DecoderConfig {
    pub fn with_width(d: usize) -> Self {
        Self {
            d_model: d,
            blocks: 2,
            heads: 4,
            ff: 4 * d,
            max_len: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.ff == 0 {
            return Err(Error::config("decoder", "widths must be positive"));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config("decoder.heads", "must divide d_model"));
        }
        if self.max_len < 2 {
            return Err(Error::config("decoder.max_len", "must be at least 2"));
        }
        Ok(())
    }

    pub fn init_params<T: Real>(&self, ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, vocab: usize) -> Result<()> {
        let d = self.d_model;
        ps.init_matrix("dec.embed", vocab, d, rng)?;
        for b in 0..self.blocks {
            let p = format!("dec.block{b}");
            nn::init_layer_norm(ps, &format!("{p}.ln1"), d)?;
            nn::init_attention(ps, rng, &format!("{p}.self"), d)?;
            nn::init_layer_norm(ps, &format!("{p}.ln2"), d)?;
            nn::init_attention(ps, rng, &format!("{p}.cross"), d)?;
            nn::init_layer_norm(ps, &format!("{p}.ln3"), d)?;
            nn::init_ffn(ps, rng, &format!("{p}.ffn"), d, self.ff)?;
        }
        nn::init_layer_norm(ps, "dec.ln_f", d)?;
        nn::init_linear(ps, rng, "dec.out", d, vocab)?;
        Ok(())
    }
}

/// Vocabulary size implied by the embedding table.
pub fn vocab_size<T: Real>(ps: &ParamStore<T>) -> Result<usize> {
    ps.get("dec.embed")
        .map(|t| t.shape()[0])
        .ok_or_else(|| Error::Data("parameter store has no decoder embedding".into()))
}

/// Next-token logits `[tokens.len(), V]` for every prefix position.
pub fn decode_logits<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    cfg: &DecoderConfig,
    tokens: &[usize],
    memory: Var,
) -> Result<Var> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::domain("decode", "empty prefix"));
    }
    let v = vocab_size(ps)?;
    if let Some(&bad) = tokens.iter().find(|&&t| t >= v) {
        return Err(Error::domain(
            "decode",
            format!("token id {bad} outside vocabulary of {v}"),
        ));
    }
    let embed = g.param(ps, "dec.embed")?;
    let x = g.embedding(embed, tokens)?;
    let pos = g.constant(nn::sinusoidal_positions(n, cfg.d_model));
    let mut h = g.add(x, pos)?;
    let mask = g.constant(nn::causal_mask(n));
    for b in 0..cfg.blocks {
        let p = format!("dec.block{b}");
        let q = nn::layer_norm(g, ps, &format!("{p}.ln1"), h)?;
        let a = nn::attention(g, ps, &format!("{p}.self"), q, q, cfg.heads, Some(mask))?;
        h = g.add(h, a)?;
        let q = nn::layer_norm(g, ps, &format!("{p}.ln2"), h)?;
        let a = nn::attention(g, ps, &format!("{p}.cross"), q, memory, cfg.heads, None)?;
        h = g.add(h, a)?;
        let q = nn::layer_norm(g, ps, &format!("{p}.ln3"), h)?;
        let f = nn::ffn(g, ps, &format!("{p}.ffn"), q)?;
        h = g.add(h, f)?;
    }
    let h = nn::layer_norm(g, ps, "dec.ln_f", h)?;
    nn::linear(g, ps, "dec.out", h)
}

/// Next-token distribution after `prefix`.
pub fn decode_step<T: Real>(
    ps: &ParamStore<T>,
    cfg: &DecoderConfig,
    prefix: &[usize],
    memory: &Tensor<T>,
) -> Result<Vec<f64>> {
    let g = Graph::new();
    let m = g.constant(memory.clone());
    let logits = decode_logits(&g, ps, cfg, prefix, m)?;
    let last = g.slice(logits, 0, prefix.len() - 1, 1)?;
    let p = g.softmax(last, 1)?;
    Ok(g.value(p).data().iter().map(|x| x.as_f64()).collect())
}

/// Mean next-token cross-entropy of `reference` (BOS … EOS) under teacher forcing.
pub fn teacher_forced_loss<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    cfg: &DecoderConfig,
    reference: &[usize],
    memory: Var,
) -> Result<Var> {
    if reference.len() < 2 {
        return Err(Error::domain(
            "teacher_forced_loss",
            "reference needs at least two tokens",
        ));
    }
    let logits = teacher_forced_token_log_probs(g, ps, cfg, reference, memory)?;
    Ok(g.neg(g.mean(logits)))
}

/// `log p(c_t | c_<t)` for every target position, excluding padding.
pub fn teacher_forced_token_log_probs<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    cfg: &DecoderConfig,
    reference: &[usize],
    memory: Var,
) -> Result<Var> {
    let keep = reference.iter().rposition(|&t| t != PAD).map_or(0, |i| i + 1);
    let tokens = &reference[..keep];
    if tokens.len() < 2 {
        return Err(Error::domain(
            "teacher_forced_loss",
            "reference needs at least two tokens",
        ));
    }
    let input = &tokens[..tokens.len() - 1];
    let target = &tokens[1..];
    let logits = decode_logits(g, ps, cfg, input, memory)?;
    let lp = g.log_softmax(logits)?;
    g.pick(lp, target)
}

/// [`StepModel`] backed by decoder parameters and a fixed memory.
pub struct DecoderModel<'a, T: Real> {
    pub params: &'a ParamStore<T>,
    pub config: &'a DecoderConfig,
    pub memory: Tensor<T>,
}

impl<T: Real> StepModel for DecoderModel<'_, T> {
    fn vocab_size(&self) -> usize {
        vocab_size(self.params).unwrap_or(0)
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let g = Graph::new();
        let m = g.constant(self.memory.clone());
        let logits = decode_logits(&g, self.params, self.config, prefix, m)?;
        let last = g.slice(logits, 0, prefix.len() - 1, 1)?;
        let lp = g.log_softmax(last)?;
        Ok(g.value(lp).data().iter().map(|x| x.as_f64()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;

    const V: usize = 12;

    fn micro() -> (DecoderConfig, ParamStore<f64>, Tensor<f64>) {
        let cfg = DecoderConfig {
            d_model: 8,
            blocks: 1,
            heads: 2,
            ff: 16,
            max_len: 10,
        };
        let mut ps = ParamStore::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        cfg.init_params(&mut ps, &mut rng, V).unwrap();
        for b in ["dec.out.b", "dec.block0.self.o.b", "dec.block0.ffn.up.b"] {
            for (i, v) in ps.get_mut(b).unwrap().data_mut().iter_mut().enumerate() {
                *v = 0.1 * ((i * 5 % 7) as f64 - 3.0);
            }
        }
        let memory = Tensor::from_fn(&[3, 8], |i| ((i * 13 % 17) as f64 - 8.0) / 8.0);
        (cfg, ps, memory)
    }

    #[test]
    fn step_distribution_is_normalized() {
        let (cfg, ps, mem) = micro();
        let p = decode_step(&ps, &cfg, &[BOS, 5, 7], &mem).unwrap();
        assert_eq!(p.len(), V);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(decode_step(&ps, &cfg, &[BOS, V], &mem).is_err());
        assert!(decode_step(&ps, &cfg, &[], &mem).is_err());
    }

    #[test]
    fn later_tokens_do_not_affect_earlier_positions() {
        let (cfg, ps, mem) = micro();
        let g = Graph::new();
        let m = g.constant(mem);
        let a = g.value(decode_logits(&g, &ps, &cfg, &[BOS, 4, 5, 6], m).unwrap());
        let b = g.value(decode_logits(&g, &ps, &cfg, &[BOS, 4, 9, 11, 8], m).unwrap());
        for r in 0..2 {
            for c in 0..V {
                assert_eq!(a.at(r, c), b.at(r, c));
            }
        }
        assert_ne!(a.at(2, 0), b.at(2, 0));
    }

    #[test]
    fn zeroed_features_leave_only_biases() {
        let (cfg, mut ps, mem) = micro();
        ps.get_mut("dec.embed").unwrap().data_mut().fill(0.0);
        ps.get_mut("dec.ln_f.gamma").unwrap().data_mut().fill(0.0);
        let zero_mem = Tensor::zeros(mem.shape());
        let bias: Vec<f64> = ps.get("dec.out.b").unwrap().data().to_vec();
        let mx = bias.iter().copied().fold(f64::MIN, f64::max);
        let z: f64 = bias.iter().map(|b| (b - mx).exp()).sum();
        let p = decode_step(&ps, &cfg, &[BOS, 6], &zero_mem).unwrap();
        for (pi, b) in p.iter().zip(&bias) {
            assert!((pi - (b - mx).exp() / z).abs() < 1e-12);
        }
        ps.get_mut("dec.out.b").unwrap().data_mut().fill(0.0);
        let p = decode_step(&ps, &cfg, &[BOS, 6], &zero_mem).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / V as f64).abs() < 1e-12));
    }

    #[test]
    fn uniform_model_loss_is_log_v() {
        let (cfg, mut ps, mem) = micro();
        ps.get_mut("dec.out.w").unwrap().data_mut().fill(0.0);
        ps.get_mut("dec.out.b").unwrap().data_mut().fill(0.0);
        let g = Graph::new();
        let m = g.constant(mem);
        let l = teacher_forced_loss(&g, &ps, &cfg, &[BOS, 5, 6, 7, EOS], m).unwrap();
        assert!((g.scalar(l) - (V as f64).ln()).abs() < 1e-12);
        assert!((2.4849 - (V as f64).ln()).abs() < 1e-4);
    }

    #[test]
    fn certain_model_loss_is_zero() {
        let (cfg, mut ps, mem) = micro();
        // Saturate the output bias toward EOS and ask for an all-EOS reference.
        ps.get_mut("dec.out.w").unwrap().data_mut().fill(0.0);
        let b = ps.get_mut("dec.out.b").unwrap().data_mut();
        b.fill(-800.0);
        b[EOS] = 0.0;
        let g = Graph::new();
        let m = g.constant(mem);
        let l = teacher_forced_loss(&g, &ps, &cfg, &[BOS, EOS, EOS], m).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn loss_matches_stepwise_sum_and_ignores_padding() {
        let (cfg, ps, mem) = micro();
        let reference = [BOS, 8, 4, 10, 5, EOS];
        let mut direct = 0.0;
        for t in 1..reference.len() {
            let p = decode_step(&ps, &cfg, &reference[..t], &mem).unwrap();
            direct -= p[reference[t]].ln();
        }
        direct /= (reference.len() - 1) as f64;
        let g = Graph::new();
        let m = g.constant(mem.clone());
        let l = g.scalar(teacher_forced_loss(&g, &ps, &cfg, &reference, m).unwrap());
        assert!((l - direct).abs() < 1e-9, "{l} vs {direct}");
        let mut padded = reference.to_vec();
        padded.extend([PAD, PAD]);
        let lp = g.scalar(teacher_forced_loss(&g, &ps, &cfg, &padded, m).unwrap());
        assert_eq!(lp, l);
        assert!(teacher_forced_loss(&g, &ps, &cfg, &[BOS], m).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (cfg, ps, mem) = micro();
        let report = grad_check(
            &ps,
            |g, ps| {
                let m = g.constant(mem.clone());
                teacher_forced_loss(g, ps, &cfg, &[BOS, 8, 4, 10, EOS], m)
            },
            8,
            1e-6,
            2,
        )
        .unwrap();
        assert!(report.max_rel < 1e-5, "{} {}", report.worst, report.max_rel);
    }

    #[test]
    fn generation_is_deterministic_and_beam_not_worse() {
        let (cfg, ps, mem) = micro();
        let model = DecoderModel {
            params: &ps,
            config: &cfg,
            memory: mem,
        };
        let g1 = generate(&model, DecodeMode::Greedy, cfg.max_len).unwrap();
        assert_eq!(g1, generate(&model, DecodeMode::Greedy, cfg.max_len).unwrap());
        assert_eq!(g1, generate(&model, DecodeMode::Beam(1), cfg.max_len).unwrap());
        let b3 = generate(&model, DecodeMode::Beam(3), cfg.max_len).unwrap();
        let score = |s: &[usize]| search::normalized_score(sequence_log_prob(&model, s).unwrap(), s.len() - 1);
        assert!(score(&b3) >= score(&g1));
        assert_eq!(g1[0], BOS);
        assert!(g1.len() <= cfg.max_len);
    }
}
