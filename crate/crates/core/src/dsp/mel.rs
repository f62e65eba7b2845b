use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::MonoSignal;
use crate::error::{Error, Result};

/// Framing and filterbank settings shared by both encoder branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub window: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    /// Upper mel edge in Hz; `None` means Nyquist.
    pub fmax: Option<f64>,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            window: 256,
            hop: 128,
            mel_bins: 64,
            fmin: 10.0,
            fmax: None,
        }
    }
}

impl DspConfig {
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.window || self.hop == 0 {
            0
        } else {
            1 + (n - self.window) / self.hop
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config("window", "must be at least 2"));
        }
        if self.hop == 0 {
            return Err(Error::config("hop", "must be positive"));
        }
        if self.mel_bins < 1 {
            return Err(Error::config("mel_bins", "must be at least 1"));
        }
        Ok(())
    }
}

/// Log-compressed mel energies, `frames × bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f64>,
    pub frame_rate: f64,
    pub config: DspConfig,
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over the `window/2 + 1` FFT bins; also returns the
/// centre frequency of each filter.
pub fn mel_filterbank(config: &DspConfig, sample_rate: u32) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nyquist = sample_rate as f64 / 2.0;
    let fmax = config.fmax.unwrap_or(nyquist).min(nyquist);
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(fmax));
    let points: Vec<f64> = (0..config.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.mel_bins + 1) as f64))
        .collect();
    let nfft = config.window / 2 + 1;
    let bin_hz = sample_rate as f64 / config.window as f64;
    let filters = (0..config.mel_bins)
        .map(|m| {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            (0..nfft)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - l) / (c - l);
                    let down = (r - f) / (r - c);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect();
    (filters, points[1..=config.mel_bins].to_vec())
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Raw (unwindowed) analysis frames, `frames × window` row-major.
pub fn frames(signal: &[f64], config: &DspConfig) -> Result<(usize, Vec<f64>)> {
    config.validate()?;
    if signal.len() < config.window {
        return Err(Error::Data(format!(
            "signal of {} samples is shorter than the {}-sample window",
            signal.len(),
            config.window
        )));
    }
    let count = config.frame_count(signal.len());
    let mut out = Vec::with_capacity(count * config.window);
    for t in 0..count {
        out.extend_from_slice(&signal[t * config.hop..t * config.hop + config.window]);
    }
    Ok((count, out))
}

/// Hann-windowed power spectrum → mel filterbank → `ln(1 + e)`.
pub fn mel_spectrogram(signal: &MonoSignal, config: &DspConfig) -> Result<MelSpectrogram> {
    let (count, raw) = frames(&signal.samples, config)?;
    let (filters, _) = mel_filterbank(config, signal.sample_rate);
    let win = hann(config.window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.window);
    let nfft = config.window / 2 + 1;
    let mut data = Vec::with_capacity(count * config.mel_bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); config.window];
    for t in 0..count {
        let frame = &raw[t * config.window..(t + 1) * config.window];
        for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&win)) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..nfft].iter().map(|c| c.norm_sqr()).collect();
        for filt in &filters {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            data.push(e.ln_1p());
        }
    }
    Ok(MelSpectrogram {
        frames: count,
        bins: config.mel_bins,
        data,
        frame_rate: signal.sample_rate as f64 / config.hop as f64,
        config: config.clone(),
    })
}
