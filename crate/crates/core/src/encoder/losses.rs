use serde::{Deserialize, Serialize};

use super::FeatureSeq;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeriodicityLossConfig {
    /// Softmax temperature of the soft peak lag.
    pub temperature: f64,
    pub top_k: usize,
    /// Minimum autocorrelation height of a candidate peak.
    pub min_peak: f64,
    /// Sequences shorter than this contribute zero loss.
    pub min_frames: usize,
}

impl Default for PeriodicityLossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            top_k: 8,
            min_peak: 0.3,
            min_frames: 8,
        }
    }
}

/// Peak windows `(lag, half_width)` chosen from an autocorrelation sequence,
/// sorted by lag.
///
/// Candidates are strict-left local maxima at or above `min_peak`, taken in
/// order of height while skipping neighbours of lags already taken. The
/// half-width is a quarter of the tallest peak's lag (at least 1); windows
/// that would leave `[1, n-1]` are dropped.
pub fn select_peaks(r: &[f64], cfg: &PeriodicityLossConfig) -> Vec<(usize, usize)> {
    let n = r.len();
    if n < 3 {
        return Vec::new();
    }
    let mut cand: Vec<usize> = (1..n - 1)
        .filter(|&k| r[k] > r[k - 1] && r[k] >= r[k + 1] && r[k] >= cfg.min_peak)
        .collect();
    cand.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for k in cand {
        if chosen.len() == cfg.top_k {
            break;
        }
        if chosen.iter().all(|&c| c.abs_diff(k) > 1) {
            chosen.push(k);
        }
    }
    let Some(&dominant) = chosen.first() else {
        return Vec::new();
    };
    let half = ((dominant as f64 / 4.0).round() as usize).max(1);
    let mut windows: Vec<(usize, usize)> = chosen
        .into_iter()
        .filter(|&k| k > half && k + half < n)
        .map(|k| (k, half))
        .collect();
    windows.sort_unstable();
    windows
}

/// `var(Δ) / mean(Δ)²` of consecutive differences of sorted peak positions;
/// 0 for fewer than three positions.
pub fn normalized_interval_variance(lags: &[f64]) -> f64 {
    if lags.len() < 3 {
        return 0.0;
    }
    let d: Vec<f64> = lags.windows(2).map(|w| w[1] - w[0]).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / d.len() as f64;
    v / (m * m)
}

/// Scale-free spread of the soft autocorrelation-peak intervals of the
/// channel-mean temporal profile.
pub fn periodicity_loss<T: Real>(g: &Graph<T>, f: FeatureSeq, cfg: &PeriodicityLossConfig) -> Result<Var> {
    let shape = g.shape(f.features);
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "periodicity_loss",
            left: shape,
            right: vec![],
        });
    }
    if shape[0] < cfg.min_frames.max(3) {
        return Ok(g.constant_scalar(0.0));
    }
    let profile = g.mean_axis(f.features, 1)?;
    let r = g.autocorr(profile)?;
    let r_vals: Vec<f64> = g.value(r).data().iter().map(|v| v.as_f64()).collect();
    let windows = select_peaks(&r_vals, cfg);
    if windows.len() < 3 {
        return Ok(g.constant_scalar(0.0));
    }
    let mut soft = Vec::with_capacity(windows.len());
    for &(k, h) in &windows {
        let start = k - h;
        let len = 2 * h + 1;
        let seg = g.slice(r, 0, start, len)?;
        let wts = g.softmax(g.scale(seg, 1.0 / cfg.temperature), 0)?;
        let lags = g.constant(Tensor::from_fn(&[len], |i| T::lit((start + i) as f64)));
        let lag = g.sum(g.mul(wts, lags)?);
        soft.push(g.reshape(lag, &[1])?);
    }
    let lags = g.concat(&soft, 0)?;
    let n = windows.len();
    let later = g.slice(lags, 0, 1, n - 1)?;
    let earlier = g.slice(lags, 0, 0, n - 1)?;
    let d = g.sub(later, earlier)?;
    let m = g.mean(d);
    let dev = g.sub(d, m)?;
    let var = g.mean(g.square(dev));
    g.div(var, g.square(m))
}

/// Mean squared activation.
pub fn aperiodicity_loss<T: Real>(g: &Graph<T>, f: FeatureSeq) -> Var {
    g.mean(g.square(f.features))
}

/// `(⟨u, v⟩ / D)²` of the time-averaged branch features.
pub fn orthogonality_loss<T: Real>(g: &Graph<T>, per: FeatureSeq, aper: FeatureSeq) -> Result<Var> {
    let (sp, sa) = (g.shape(per.features), g.shape(aper.features));
    if sp != sa || sp.len() != 2 {
        return Err(Error::Shape {
            op: "orthogonality_loss",
            left: sp,
            right: sa,
        });
    }
    let u = g.mean_axis(per.features, 0)?;
    let v = g.mean_axis(aper.features, 0)?;
    let dot = g.sum(g.mul(u, v)?);
    Ok(g.square(g.scale(dot, 1.0 / sp[1] as f64)))
}
