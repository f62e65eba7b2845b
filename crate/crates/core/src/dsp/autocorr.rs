use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Mean-removed, biased, normalized autocorrelation `r[τ]/r[0]` for lags
/// `0..=max_lag` (clamped to `n - 1`).
///
/// A signal that is constant after mean removal returns `r[0] = 1` and zeros.
pub fn autocorrelation(signal: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = signal.len();
    if n == 0 {
        return Err(Error::Data("autocorrelation of empty signal".into()));
    }
    let max_lag = max_lag.min(n - 1);
    let mean = signal.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = signal
        .iter()
        .map(|&v| Complex64::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let r0 = buf[0].re;
    let mut out = vec![0.0; max_lag + 1];
    out[0] = 1.0;
    // energy below ~1e-24 per sample is treated as silence
    if r0 > 1e-24 * n as f64 * size as f64 {
        for (k, o) in out.iter_mut().enumerate().skip(1) {
            *o = buf[k].re / r0;
        }
    }
    Ok(out)
}
