use serde::{Deserialize, Serialize};

use super::{autocorrelation, MonoSignal};
use crate::error::{Error, Result};

/// Signal-derived periodicity summary that drives the fusion gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityScore {
    /// Height of the dominant autocorrelation peak, clamped to [0, 1].
    pub p: f64,
    pub dominant_lag: usize,
    pub peak_lags: Vec<usize>,
}

/// Lag search range: periods between `sample_rate / max_hz` and
/// `sample_rate / min_hz` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityConfig {
    pub max_hz: f64,
    pub min_hz: f64,
}

impl Default for PeriodicityConfig {
    fn default() -> Self {
        Self {
            max_hz: 500.0,
            min_hz: 2.0,
        }
    }
}

impl PeriodicityConfig {
    pub fn lag_range(&self, sample_rate: u32, n: usize) -> (usize, usize) {
        let lo = ((sample_rate as f64 / self.max_hz).round() as usize).max(1);
        let hi = ((sample_rate as f64 / self.min_hz).round() as usize).min(n.saturating_sub(2));
        (lo, hi)
    }
}

pub fn periodicity_score(signal: &MonoSignal) -> Result<PeriodicityScore> {
    periodicity_score_with(signal, &PeriodicityConfig::default())
}

pub fn periodicity_score_with(signal: &MonoSignal, config: &PeriodicityConfig) -> Result<PeriodicityScore> {
    let n = signal.len();
    let (lo, hi) = config.lag_range(signal.sample_rate, n);
    if n < 4 * lo || hi <= lo {
        return Err(Error::Data(format!(
            "signal of {n} samples too short for minimum lag {lo}"
        )));
    }
    let r = autocorrelation(&signal.samples, hi + 1)?;
    let mut maxima: Vec<usize> = (lo.max(1)..=hi)
        .filter(|&k| k + 1 < r.len() && r[k] > r[k - 1] && r[k] >= r[k + 1] && r[k] > 0.0)
        .collect();
    let Some(&dominant) = maxima.iter().max_by(|&&a, &&b| r[a].total_cmp(&r[b]).then(b.cmp(&a))) else {
        return Ok(PeriodicityScore {
            p: 0.0,
            dominant_lag: 0,
            peak_lags: Vec::new(),
        });
    };
    let p = r[dominant].clamp(0.0, 1.0);
    maxima.retain(|&k| r[k] > 0.5 * p);
    maxima.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    let mut peaks: Vec<usize> = Vec::new();
    for k in maxima {
        if peaks.iter().all(|&q| k.abs_diff(q) >= lo) {
            peaks.push(k);
        }
    }
    peaks.sort_unstable();
    Ok(PeriodicityScore {
        p,
        dominant_lag: if p > 0.0 { dominant } else { 0 },
        peak_lags: peaks,
    })
}
