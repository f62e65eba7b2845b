use serde::{Deserialize, Serialize};

use super::{CaptionPolicy, ModelConfig, Sample};
use crate::decoder::teacher_forced_loss;
use crate::encoder::{aperiodicity_loss, encode, orthogonality_loss, periodicity_loss, Variant};
use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Real, Var};

/// λ weights of the auxiliary encoder terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub periodicity: f64,
    pub aperiodicity: f64,
    pub orthogonality: f64,
}

impl LossWeights {
    /// Zeroes the terms a single-branch variant cannot compute.
    pub fn for_variant(self, variant: Variant) -> Self {
        match variant {
            Variant::PeriodicOnly => Self {
                aperiodicity: 0.0,
                orthogonality: 0.0,
                ..self
            },
            Variant::AperiodicOnly => Self {
                periodicity: 0.0,
                orthogonality: 0.0,
                ..self
            },
            Variant::Full | Variant::NoFusion => self,
        }
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub periodicity: f64,
    pub aperiodicity: f64,
    pub orthogonality: f64,
}

impl LossBreakdown {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        self.ce
            + w.periodicity * self.periodicity
            + w.aperiodicity * self.aperiodicity
            + w.orthogonality * self.orthogonality
    }

    pub(crate) fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.total += s * o.total;
        self.ce += s * o.ce;
        self.periodicity += s * o.periodicity;
        self.aperiodicity += s * o.aperiodicity;
        self.orthogonality += s * o.orthogonality;
    }
}

/// Reference indices supervising a sample at `epoch`.
pub(crate) fn caption_choice(policy: CaptionPolicy, n: usize, epoch: usize, sample: usize) -> Vec<usize> {
    match policy {
        CaptionPolicy::All => (0..n).collect(),
        CaptionPolicy::Rotate => vec![(epoch + sample) % n.max(1)],
    }
}

/// Composite loss of one sample; terms a variant lacks (or whose weight is
/// zero) are not built.
pub fn sample_loss<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    model: &ModelConfig,
    weights: &LossWeights,
    variant: Variant,
    sample: &Sample,
    captions: &[usize],
) -> Result<(Var, LossBreakdown)> {
    let out = encode(g, ps, &model.encoder, &sample.input, variant)?;
    let mut ce_terms = Vec::with_capacity(captions.len());
    for &c in captions {
        ce_terms.push(teacher_forced_loss(
            g,
            ps,
            &model.decoder,
            &sample.targets[c],
            out.memory.features,
        )?);
    }
    let mut ce = ce_terms[0];
    for &t in &ce_terms[1..] {
        ce = g.add(ce, t)?;
    }
    if ce_terms.len() > 1 {
        ce = g.scale(ce, 1.0 / ce_terms.len() as f64);
    }
    let mut b = LossBreakdown {
        ce: g.scalar(ce).as_f64(),
        ..Default::default()
    };
    let mut total = ce;
    if let (Some(fp), true) = (out.periodic, weights.periodicity > 0.0) {
        let l = periodicity_loss(g, fp, &model.encoder.periodicity_loss)?;
        b.periodicity = g.scalar(l).as_f64();
        total = g.add(total, g.scale(l, weights.periodicity))?;
    }
    if let (Some(fa), true) = (out.aperiodic, weights.aperiodicity > 0.0) {
        let l = aperiodicity_loss(g, fa);
        b.aperiodicity = g.scalar(l).as_f64();
        total = g.add(total, g.scale(l, weights.aperiodicity))?;
    }
    if let (Some(fp), Some(fa), true) = (out.periodic, out.aperiodic, weights.orthogonality > 0.0) {
        let l = orthogonality_loss(g, fp, fa)?;
        b.orthogonality = g.scalar(l).as_f64();
        total = g.add(total, g.scale(l, weights.orthogonality))?;
    }
    b.total = g.scalar(total).as_f64();
    Ok((total, b))
}

/// Batch-mean composite loss in one graph.
pub fn composite_loss<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    model: &ModelConfig,
    weights: &LossWeights,
    variant: Variant,
    batch: &[(&Sample, Vec<usize>)],
) -> Result<(Var, LossBreakdown)> {
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut acc: Option<Var> = None;
    let mut b = LossBreakdown::default();
    for (s, caps) in batch {
        let (l, lb) = sample_loss(g, ps, model, weights, variant, s, caps)?;
        b.add_scaled(&lb, scale);
        acc = Some(match acc {
            None => l,
            Some(a) => g.add(a, l)?,
        });
    }
    let acc = acc.ok_or_else(|| crate::error::Error::Data("empty batch".into()))?;
    let total = g.scale(acc, scale);
    b.total = g.scalar(total).as_f64();
    Ok((total, b))
}
