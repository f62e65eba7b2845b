//! Dual-branch encoder: a Fourier-feature periodic branch, an LSTM +
//! self-attention aperiodic branch, the three encoder-side losses and the
//! periodicity-driven fusion gate.

mod branches;
mod fan;
mod fusion;
mod losses;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use branches::{aperiodic_branch, periodic_branch};
pub use fan::{fan_forward, FanLayer};
pub use fusion::{fuse, gate_weight};
pub use losses::{
    aperiodicity_loss, normalized_interval_variance, orthogonality_loss, periodicity_loss, select_peaks,
    PeriodicityLossConfig,
};

use crate::dsp::{frames, mel_spectrogram, periodicity_score, DspConfig, MonoSignal, PeriodicityScore};
use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dsp: DspConfig,
    /// Common feature width D of both branches.
    pub d_model: usize,
    /// Width of the cos/sin projection.
    pub fan_periodic: usize,
    /// Width of the gelu path.
    pub fan_other: usize,
    pub conv_kernel: usize,
    pub lstm_hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff: usize,
    pub alpha: f64,
    pub tau_init: f64,
    pub periodicity_loss: PeriodicityLossConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::with_width(128)
    }
}

impl EncoderConfig {
    /// Defaults scaled to feature width `d`.
    pub fn with_width(d: usize) -> Self {
        Self {
            dsp: DspConfig::default(),
            d_model: d,
            fan_periodic: d / 4,
            fan_other: d / 2,
            conv_kernel: 3,
            lstm_hidden: d,
            blocks: 2,
            heads: 4,
            ff: 4 * d,
            alpha: 10.0,
            tau_init: 0.5,
            periodicity_loss: PeriodicityLossConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        if self.d_model == 0 || self.lstm_hidden == 0 || self.fan_periodic == 0 || self.fan_other == 0 {
            return Err(Error::config("encoder", "widths must be positive"));
        }
        if self.heads == 0 || !self.lstm_hidden.is_multiple_of(self.heads) {
            return Err(Error::config("encoder.heads", "must divide lstm_hidden"));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::config("encoder.conv_kernel", "must be odd"));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::config("encoder.alpha", "must be positive"));
        }
        Ok(())
    }

    pub fn fan_width(&self) -> usize {
        2 * self.fan_periodic + self.fan_other
    }

    /// Registers every encoder parameter.
    pub fn init_params<T: Real>(&self, ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        let w = self.dsp.window;
        let d = self.d_model;
        let h = self.lstm_hidden;
        FanLayer::init(ps, rng, "enc.fan", w, self.fan_periodic, self.fan_other)?;
        ps.init_matrix("enc.per.conv.w", self.conv_kernel * self.fan_width(), d, rng)?;
        ps.init_zeros("enc.per.conv.b", &[d])?;
        nn::init_linear(ps, rng, "enc.per.proj", d, d)?;
        ps.init_matrix("enc.aper.lstm.w_x", self.dsp.mel_bins, 4 * h, rng)?;
        ps.init_matrix("enc.aper.lstm.w_h", h, 4 * h, rng)?;
        ps.init_zeros("enc.aper.lstm.b", &[4 * h])?;
        for b in 0..self.blocks {
            let p = format!("enc.aper.block{b}");
            nn::init_layer_norm(ps, &format!("{p}.ln1"), h)?;
            nn::init_attention(ps, rng, &format!("{p}.attn"), h)?;
            nn::init_layer_norm(ps, &format!("{p}.ln2"), h)?;
            nn::init_ffn(ps, rng, &format!("{p}.ffn"), h, self.ff)?;
        }
        nn::init_layer_norm(ps, "enc.aper.ln_f", h)?;
        nn::init_linear(ps, rng, "enc.aper.proj", h, d)?;
        ps.insert("enc.gate.tau", Tensor::scalar(T::lit(self.tau_init)))?;
        Ok(())
    }
}

/// Which encoder paths feed the decoder (component ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    PeriodicOnly,
    AperiodicOnly,
    /// Both branches blended with a fixed weight of 0.5.
    NoFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::PeriodicOnly,
        Variant::AperiodicOnly,
        Variant::NoFusion,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::PeriodicOnly => "periodic-only",
            Variant::AperiodicOnly => "aperiodic-only",
            Variant::NoFusion => "no-fusion",
        }
    }

    pub fn uses_periodic(self) -> bool {
        self != Variant::AperiodicOnly
    }

    pub fn uses_aperiodic(self) -> bool {
        self != Variant::PeriodicOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`")))
    }
}

/// Signal-derived encoder inputs, computed once per sample.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    /// Raw analysis frames of the unit-RMS signal, `[frames, window]`.
    pub frames: Tensor<f64>,
    /// Log-mel energies, `[frames, mel_bins]`.
    pub mel: Tensor<f64>,
    pub periodicity: PeriodicityScore,
}

impl EncoderInput {
    pub fn from_signal(signal: &MonoSignal, dsp: &DspConfig) -> Result<Self> {
        let count = dsp.frame_count(signal.len());
        if count < 4 {
            return Err(Error::Data(format!(
                "signal of {} samples yields {count} frames; at least 4 are required",
                signal.len()
            )));
        }
        let norm = signal.normalized();
        let (n, raw) = frames(&norm.samples, dsp)?;
        let mel = mel_spectrogram(&norm, dsp)?;
        Ok(Self {
            frames: Tensor::matrix(n, dsp.window, raw)?,
            mel: Tensor::matrix(mel.frames, mel.bins, mel.data)?,
            periodicity: periodicity_score(signal)?,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Periodic,
    Aperiodic,
    Fused,
}

/// Per-frame features `[frames, D]` recorded in a graph.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSeq {
    pub features: Var,
    pub kind: FeatureKind,
    /// Fusion weight node (fused sequences only).
    pub gate: Option<Var>,
    pub periodicity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub periodic: Option<FeatureSeq>,
    pub aperiodic: Option<FeatureSeq>,
    /// What the decoder attends over.
    pub memory: FeatureSeq,
}

/// Runs the branches required by `variant` and combines them.
pub fn encode<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    cfg: &EncoderConfig,
    input: &EncoderInput,
    variant: Variant,
) -> Result<EncoderOutput> {
    let p = input.periodicity.p;
    let periodic = if variant.uses_periodic() {
        Some(periodic_branch(g, ps, cfg, &input.frames, p)?)
    } else {
        None
    };
    let aperiodic = if variant.uses_aperiodic() {
        Some(aperiodic_branch(g, ps, cfg, &input.mel, p)?)
    } else {
        None
    };
    let memory = match (periodic, aperiodic, variant) {
        (Some(fp), Some(fa), Variant::Full) => {
            let tau = g.param(ps, "enc.gate.tau")?;
            fuse(g, fp, fa, p, tau, cfg.alpha)?
        }
        (Some(fp), Some(fa), Variant::NoFusion) => {
            let w = g.constant_scalar(0.5);
            fusion::fuse_with_weight(g, fp, fa, w)?
        }
        (Some(fp), None, _) => fp,
        (None, Some(fa), _) => fa,
        _ => unreachable!("every variant uses at least one branch"),
    };
    Ok(EncoderOutput {
        periodic,
        aperiodic,
        memory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::InputMode;
    use crate::numerics::grad_check;
    use rand::SeedableRng;

    fn micro() -> EncoderConfig {
        let mut cfg = EncoderConfig::with_width(8);
        cfg.dsp = DspConfig {
            window: 16,
            hop: 8,
            mel_bins: 6,
            fmin: 10.0,
            fmax: None,
        };
        cfg.heads = 2;
        cfg.blocks = 1;
        cfg.ff = 8;
        cfg
    }

    fn signal(n: usize) -> MonoSignal {
        let samples = (0..n)
            .map(|i| (i as f64 * 0.45).sin() + 0.3 * (i as f64 * 1.7).cos())
            .collect();
        MonoSignal {
            samples,
            sample_rate: 1000,
            mode: InputMode::Dft321,
        }
    }

    fn store(cfg: &EncoderConfig) -> ParamStore<f64> {
        let mut ps = ParamStore::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        cfg.init_params(&mut ps, &mut rng).unwrap();
        ps
    }

    #[test]
    fn variants_produce_aligned_memory() {
        let cfg = micro();
        cfg.validate().unwrap();
        let ps = store(&cfg);
        let input = EncoderInput::from_signal(&signal(200), &cfg.dsp).unwrap();
        assert_eq!(input.frame_count(), 24);
        for v in Variant::ALL {
            let g = Graph::new();
            let out = encode(&g, &ps, &cfg, &input, v).unwrap();
            assert_eq!(g.shape(out.memory.features), vec![12, 8], "{v}");
            assert_eq!(out.periodic.is_some(), v.uses_periodic());
            assert_eq!(out.aperiodic.is_some(), v.uses_aperiodic());
            match v {
                Variant::Full | Variant::NoFusion => {
                    let w = g.scalar(out.memory.gate.unwrap());
                    if v == Variant::NoFusion {
                        assert_eq!(w, 0.5);
                    }
                    let f = g.value(out.memory.features);
                    let a = g.value(out.periodic.unwrap().features);
                    let b = g.value(out.aperiodic.unwrap().features);
                    for i in 0..f.len() {
                        let (lo, hi) = (a.data()[i].min(b.data()[i]), a.data()[i].max(b.data()[i]));
                        assert!(lo <= f.data()[i] && f.data()[i] <= hi);
                    }
                }
                _ => assert!(out.memory.gate.is_none()),
            }
        }
    }

    #[test]
    fn short_signals_are_rejected() {
        let cfg = micro();
        assert!(EncoderInput::from_signal(&signal(30), &cfg.dsp).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("both".parse::<Variant>().is_err());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = micro();
        let ps = store(&cfg);
        let input = EncoderInput::from_signal(&signal(200), &cfg.dsp).unwrap();
        let report = grad_check(
            &ps,
            |g, ps| {
                let out = encode(g, ps, &cfg, &input, Variant::Full)?;
                let a = aperiodicity_loss(g, out.memory);
                let o = orthogonality_loss(g, out.periodic.unwrap(), out.aperiodic.unwrap())?;
                let s = g.sum(g.sin(out.memory.features));
                let t = g.add(a, o)?;
                g.add(t, s)
            },
            6,
            1e-6,
            11,
        )
        .unwrap();
        assert!(report.fraction_below(1e-5) >= 0.95, "{:?}", report.worst);
    }
}
