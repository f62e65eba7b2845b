use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{InputMode, MonoSignal, TriaxialSignal};
use crate::error::{Error, Result};

/// Spectral fusion of three axes into one channel.
///
/// Per frequency bin the output magnitude is the root-sum-square of the
/// three axis magnitudes and the phase is that of the summed spectrum, so
/// the total energy equals the sum of the axis energies.
pub fn dft321(signal: &TriaxialSignal) -> Result<MonoSignal> {
    let n = signal.len();
    if n == 0 {
        return Err(Error::Data("dft321 of empty signal".into()));
    }
    if signal.y.len() != n || signal.z.len() != n {
        return Err(Error::Shape {
            op: "dft321",
            left: vec![n, signal.y.len()],
            right: vec![signal.z.len()],
        });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |axis: &[f64]| {
        let mut buf: Vec<Complex64> = axis.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fwd.process(&mut buf);
        buf
    };
    let (sx, sy, sz) = (spectrum(&signal.x), spectrum(&signal.y), spectrum(&signal.z));
    let mut fused: Vec<Complex64> = (0..n)
        .map(|k| {
            let mag = (sx[k].norm_sqr() + sy[k].norm_sqr() + sz[k].norm_sqr()).sqrt();
            let sum = sx[k] + sy[k] + sz[k];
            let phase = if sum.norm_sqr() > 0.0 { sum.arg() } else { 0.0 };
            Complex64::from_polar(mag, phase)
        })
        .collect();
    inv.process(&mut fused);
    let scale = 1.0 / n as f64;
    let samples = fused.iter().map(|c| c.re * scale).collect();
    Ok(MonoSignal::new(samples, signal.sample_rate, InputMode::Dft321))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> TriaxialSignal {
        TriaxialSignal::new("t", 1000, x, y, z).unwrap()
    }

    /// Naive O(N²) DFT321 built from the definition.
    fn direct(x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let n = x.len();
        let dft = |a: &[f64], k: usize| {
            a.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                (re + v * ang.cos(), im + v * ang.sin())
            })
        };
        let spec: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let (a, b, c) = (dft(x, k), dft(y, k), dft(z, k));
                let mag = (a.0 * a.0 + a.1 * a.1 + b.0 * b.0 + b.1 * b.1 + c.0 * c.0 + c.1 * c.1).sqrt();
                let (sr, si) = (a.0 + b.0 + c.0, a.1 + b.1 + c.1);
                let ph = if sr * sr + si * si > 0.0 { si.atan2(sr) } else { 0.0 };
                (mag * ph.cos(), mag * ph.sin())
            })
            .collect();
        (0..n)
            .map(|t| {
                spec.iter().enumerate().fold(0.0, |acc, (k, &(re, im))| {
                    let ang = 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    acc + re * ang.cos() - im * ang.sin()
                }) / n as f64
            })
            .collect()
    }

    #[test]
    fn single_axis_passes_through() {
        let x: Vec<f64> = (0..257)
            .map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64 % 3.0)
            .collect();
        let out = dft321(&tri(x.clone(), vec![0.0; 257], vec![0.0; 257])).unwrap();
        let rms = (x.iter().zip(&out.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 257.0).sqrt();
        assert!(rms < 1e-9, "{rms}");
    }

    #[test]
    fn matches_direct_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2, 7, 16, 33] {
            let mut r = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (x, y, z) = (r(), r(), r());
            let fast = dft321(&tri(x.clone(), y.clone(), z.clone())).unwrap();
            for (a, b) in fast.samples.iter().zip(direct(&x, &y, &z)) {
                assert!((a - b).abs() < 1e-9, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn energy_is_sum_of_axis_energies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut r = |n| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let (x, y, z) = (r(500), r(500), r(500));
        let e: f64 = [&x, &y, &z].iter().map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum();
        let out = dft321(&tri(x, y, z)).unwrap();
        assert!((out.energy() - e).abs() / e < 1e-9);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(TriaxialSignal::new("e", 10, vec![], vec![], vec![])
            .map(|s| dft321(&s))
            .map_or(true, |r| r.is_err()));
    }
}
