//! Synthetic stand-in corpus: textured-surface vibration prototypes with
//! parameter-determined captions.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{write_manifest, CaptionRecord, Split, CAPTIONS_PER_SAMPLE};
use crate::dsp::{write_triaxial_csv, TriaxialSignal};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialClass {
    Periodic,
    Aperiodic,
    Mixed,
}

impl fmt::Display for MaterialClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaterialClass::Periodic => "periodic",
            MaterialClass::Aperiodic => "aperiodic",
            MaterialClass::Mixed => "mixed",
        })
    }
}

/// Class shares of the material population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMix {
    pub periodic: f64,
    pub aperiodic: f64,
    pub mixed: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self {
            periodic: 0.4,
            aperiodic: 0.3,
            mixed: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub materials: usize,
    pub samples_per_material: usize,
    pub sample_rate: u32,
    /// Seconds per recording.
    pub duration: f64,
    pub class_mix: ClassMix,
    /// RMS of the broadband component added to periodic prototypes.
    pub noise_level: f64,
    /// RMS of independent per-axis noise, relative to the prototype.
    pub axis_noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            materials: 40,
            samples_per_material: 10,
            sample_rate: 10_000,
            duration: 0.4096,
            class_mix: ClassMix::default(),
            noise_level: 0.05,
            axis_noise: 0.02,
            test_fraction: 0.3,
            seed: 7,
        }
    }
}

/// Shortest recording accepted: four analysis windows of 256 samples.
pub const MIN_SAMPLES: usize = 1024;

impl SynthConfig {
    pub fn samples(&self) -> usize {
        (self.sample_rate as f64 * self.duration).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.materials == 0 {
            return Err(Error::config("materials", "must be positive"));
        }
        if self.samples_per_material < 2 {
            return Err(Error::config("samples_per_material", "must be at least 2"));
        }
        if self.sample_rate < 1000 {
            return Err(Error::config("sample_rate", "must be at least 1000 Hz"));
        }
        if !(self.duration.is_finite() && self.samples() >= MIN_SAMPLES) {
            return Err(Error::config(
                "duration",
                format!(
                    "{} s yields {} samples; at least {MIN_SAMPLES} are needed",
                    self.duration,
                    self.samples()
                ),
            ));
        }
        let m = &self.class_mix;
        let shares = [m.periodic, m.aperiodic, m.mixed];
        if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || shares.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config(
                "class_mix",
                "shares must be non-negative with a positive sum",
            ));
        }
        if !(self.noise_level >= 0.0 && self.axis_noise >= 0.0) {
            return Err(Error::config("noise_level", "must be non-negative"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// Number of materials per class, largest-remainder rounding.
    pub fn class_counts(&self) -> [(MaterialClass, usize); 3] {
        let m = &self.class_mix;
        let shares = [m.periodic, m.aperiodic, m.mixed];
        let total: f64 = shares.iter().sum();
        let exact: Vec<f64> = shares.iter().map(|s| s / total * self.materials as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - exact[b].floor())
                .total_cmp(&(exact[a] - exact[a].floor()))
                .then(a.cmp(&b))
        });
        let mut left = self.materials - counts.iter().sum::<usize>();
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        [
            (MaterialClass::Periodic, counts[0]),
            (MaterialClass::Aperiodic, counts[1]),
            (MaterialClass::Mixed, counts[2]),
        ]
    }

    pub fn test_per_material(&self) -> usize {
        ((self.samples_per_material as f64 * self.test_fraction).round() as usize)
            .clamp(1, self.samples_per_material - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Roughness {
    Smooth,
    Rough,
    Gritty,
}

impl Roughness {
    pub fn of(r: f64) -> Self {
        if r < 1.0 / 3.0 {
            Roughness::Smooth
        } else if r < 2.0 / 3.0 {
            Roughness::Rough
        } else {
            Roughness::Gritty
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Generating parameters of one material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub class: MaterialClass,
    /// Ridge fundamental in Hz (unused by aperiodic materials).
    pub f0: f64,
    /// Texture roughness in [0, 1].
    pub roughness: f64,
}

pub const FINE_HZ: (f64, f64) = (120.0, 300.0);
pub const COARSE_HZ: (f64, f64) = (30.0, 75.0);

impl MaterialParams {
    pub fn spacing(&self) -> Option<Spacing> {
        match self.class {
            MaterialClass::Aperiodic => None,
            _ => Some(if self.f0 >= FINE_HZ.0 {
                Spacing::Fine
            } else {
                Spacing::Coarse
            }),
        }
    }

    pub fn roughness_bucket(&self) -> Roughness {
        Roughness::of(self.roughness)
    }

    /// Category label: one group per (class, roughness bucket).
    pub fn category(&self) -> String {
        let class = match self.class {
            MaterialClass::Periodic => 0,
            MaterialClass::Aperiodic => 1,
            MaterialClass::Mixed => 2,
        };
        format!("G{}", class * 3 + self.roughness_bucket().index() + 1)
    }

    /// The five captions shared by every sample of this material.
    pub fn captions(&self) -> Vec<String> {
        let structure: [&str; 5] = match (self.class, self.spacing()) {
            (MaterialClass::Aperiodic, _) => [
                "has an irregular texture with no repeating pattern",
                "shows irregular random bumps",
                "carries an irregular unpatterned texture",
                "has random irregular grain without any order",
                "feels irregular with no repeating ridges",
            ],
            (MaterialClass::Periodic, Some(Spacing::Fine)) => [
                "has fine regular ridges",
                "shows fine evenly spaced ridges",
                "carries a fine regular ridge pattern",
                "has fine ridges repeating at regular intervals",
                "feels like fine regular ridges",
            ],
            (MaterialClass::Periodic, _) => [
                "has coarse widely spaced ridges",
                "shows coarse evenly spaced ridges",
                "carries a coarse regular ridge pattern",
                "has coarse ridges repeating at wide intervals",
                "feels like coarse regular ridges",
            ],
            (MaterialClass::Mixed, Some(Spacing::Fine)) => [
                "has fine ridges within an irregular texture",
                "shows fine ridges mixed with random bumps",
                "carries fine ridges over irregular grain",
                "has fine regular ridges and irregular bumps",
                "feels like fine ridges on an irregular base",
            ],
            (MaterialClass::Mixed, _) => [
                "has coarse ridges within an irregular texture",
                "shows coarse ridges mixed with random bumps",
                "carries coarse ridges over irregular grain",
                "has coarse regular ridges and irregular bumps",
                "feels like coarse ridges on an irregular base",
            ],
        };
        let feel: [&str; 5] = match self.roughness_bucket() {
            Roughness::Smooth => [
                "and feels smooth",
                "with a smooth finish",
                "that is smooth to touch",
                "and a smooth feel",
                "and is mostly smooth",
            ],
            Roughness::Rough => [
                "and feels rough",
                "with a rough finish",
                "that is rough to touch",
                "and a rough feel",
                "and is fairly rough",
            ],
            Roughness::Gritty => [
                "and feels gritty",
                "with a gritty finish",
                "that is gritty to touch",
                "and a gritty feel",
                "and is very gritty",
            ],
        };
        (0..CAPTIONS_PER_SAMPLE)
            .map(|i| format!("This material surface {} {}.", structure[i], feel[i]))
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_rms(mut v: Vec<f64>) -> Vec<f64> {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
    v
}

pub const NOISE_BAND_HZ: (f64, f64) = (150.0, 4000.0);

/// Band-limited noise whose spectral slope rises with `roughness`
/// (amplitude ∝ f^(2r − 1)); unit RMS.
pub fn textured_noise(rng: &mut ChaCha8Rng, n: usize, sample_rate: u32, roughness: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = gaussian(rng, n).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let slope = 2.0 * roughness - 1.0;
    let df = sample_rate as f64 / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * df;
        let gain = if f >= NOISE_BAND_HZ.0 && f <= NOISE_BAND_HZ.1 {
            (f / 1000.0).powf(slope)
        } else {
            0.0
        };
        *c *= gain;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    unit_rms(buf.into_iter().map(|c| c.re).collect())
}

/// Ridge vibration: fundamental plus two harmonics whose weight grows with
/// roughness; unit RMS before the broadband component.
pub fn ridge_tone(rng: &mut ChaCha8Rng, n: usize, sample_rate: u32, f0: f64, roughness: f64) -> Vec<f64> {
    let amps = [1.0, 0.15 + 0.5 * roughness, 0.05 + 0.4 * roughness];
    let phases: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let sr = sample_rate as f64;
    unit_rms(
        (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                (0..3)
                    .map(|h| amps[h] * (2.0 * PI * f0 * (h + 1) as f64 * t + phases[h]).sin())
                    .sum()
            })
            .collect(),
    )
}

/// One mono recording of a material, unit RMS.
pub fn prototype(
    rng: &mut ChaCha8Rng,
    params: &MaterialParams,
    n: usize,
    sample_rate: u32,
    noise_level: f64,
) -> Vec<f64> {
    let f0 = params.f0 * rng.gen_range(0.97..1.03);
    let r = params.roughness;
    let v: Vec<f64> = match params.class {
        MaterialClass::Periodic => {
            let tone = ridge_tone(rng, n, sample_rate, f0, r);
            let noise = textured_noise(rng, n, sample_rate, r);
            tone.iter().zip(&noise).map(|(a, b)| a + noise_level * b).collect()
        }
        MaterialClass::Aperiodic => textured_noise(rng, n, sample_rate, r),
        MaterialClass::Mixed => {
            let w = rng.gen_range(0.4..0.6);
            let tone = ridge_tone(rng, n, sample_rate, f0, r);
            let noise = textured_noise(rng, n, sample_rate, r);
            tone.iter().zip(&noise).map(|(a, b)| w * a + (1.0 - w) * b).collect()
        }
    };
    unit_rms(v)
}

/// Spreads a mono prototype over three axes along a random unit direction
/// and adds independent axis noise.
pub fn project_axes(
    rng: &mut ChaCha8Rng,
    id: &str,
    mono: &[f64],
    sample_rate: u32,
    gain: f64,
    axis_noise: f64,
) -> Result<TriaxialSignal> {
    let dir: [f64; 3] = loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            break [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    };
    let mut axes: [Vec<f64>; 3] = Default::default();
    for (a, axis) in axes.iter_mut().enumerate() {
        let noise = gaussian(rng, mono.len());
        *axis = mono
            .iter()
            .zip(&noise)
            .map(|(s, e)| gain * (dir[a] * s + axis_noise * e))
            .collect();
    }
    let [x, y, z] = axes;
    TriaxialSignal::new(id, sample_rate, x, y, z)
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub materials: Vec<MaterialParams>,
    /// Sample records in material-major order, `signal_path` relative.
    pub records: Vec<CaptionRecord>,
    pub signals: Vec<TriaxialSignal>,
    /// Material index of each record.
    pub material_of: Vec<usize>,
}

fn material_rng(seed: u64, material: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(material as u64 + 1);
    rng
}

fn material_params(cfg: &SynthConfig) -> Vec<MaterialParams> {
    let mut out = Vec::with_capacity(cfg.materials);
    for (class, count) in cfg.class_counts() {
        for j in 0..count {
            let mut rng = material_rng(cfg.seed ^ 0x5eed, out.len());
            // Stratify so every roughness and spacing bucket is populated.
            let roughness = ((j % 3) as f64 + rng.gen_range(0.1..0.9)) / 3.0;
            let (lo, hi) = if (j / 3) % 2 == 0 { FINE_HZ } else { COARSE_HZ };
            let f0 = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
            out.push(MaterialParams { class, f0, roughness });
        }
    }
    out
}

/// Generates the corpus in memory. Materials are processed in parallel, each
/// with its own RNG stream, so output does not depend on scheduling.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let materials = material_params(cfg);
    let n = cfg.samples();
    let per = cfg.samples_per_material;
    let n_test = cfg.test_per_material();
    let built = exec::map_range(
        Execution::Parallel,
        materials.len(),
        |m| -> Result<Vec<(CaptionRecord, TriaxialSignal)>> {
            let params = &materials[m];
            let mut rng = material_rng(cfg.seed, m);
            let mut order: Vec<usize> = (0..per).collect();
            order.shuffle(&mut rng);
            let test: Vec<usize> = order[..n_test].to_vec();
            let captions = params.captions();
            (0..per)
                .map(|s| {
                    let id = format!("m{m:03}_s{s:02}");
                    let mono = prototype(&mut rng, params, n, cfg.sample_rate, cfg.noise_level);
                    let gain = rng.gen_range(0.5..2.0);
                    let signal = project_axes(&mut rng, &id, &mono, cfg.sample_rate, gain, cfg.axis_noise)?;
                    let record = CaptionRecord {
                        signal_path: format!("signals/{id}.csv"),
                        id,
                        category: params.category(),
                        split: if test.contains(&s) { Split::Test } else { Split::Train },
                        captions: captions.clone(),
                    };
                    Ok((record, signal))
                })
                .collect()
        },
    );
    let mut records = Vec::with_capacity(materials.len() * per);
    let mut signals = Vec::with_capacity(materials.len() * per);
    let mut material_of = Vec::with_capacity(materials.len() * per);
    for (m, items) in built.into_iter().enumerate() {
        for (r, s) in items? {
            records.push(r);
            signals.push(s);
            material_of.push(m);
        }
    }
    Ok(SynthCorpus {
        config: cfg.clone(),
        materials,
        records,
        signals,
        material_of,
    })
}

/// Writes `manifest.jsonl`, `signals/*.csv` and `synth.json` under `dir`;
/// returns the manifest path.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let sig_dir = dir.join("signals");
    std::fs::create_dir_all(&sig_dir).map_err(|e| Error::io(&sig_dir, e))?;
    for (r, s) in corpus.records.iter().zip(&corpus.signals) {
        write_triaxial_csv(dir.join(&r.signal_path), s)?;
    }
    let cfg_path = dir.join("synth.json");
    let json = serde_json::to_string_pretty(&corpus.config).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&cfg_path, json + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &corpus.records)?;
    Ok(manifest)
}
