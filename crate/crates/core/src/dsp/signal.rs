use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw three-axis acceleration recording (m/s²).
#[derive(Debug, Clone, PartialEq)]
pub struct TriaxialSignal {
    pub id: String,
    pub sample_rate: u32,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl TriaxialSignal {
    pub fn new(id: impl Into<String>, sample_rate: u32, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if x.is_empty() {
            return Err(Error::Data("empty signal".into()));
        }
        if x.len() != y.len() || x.len() != z.len() {
            return Err(Error::Shape {
                op: "triaxial",
                left: vec![x.len(), y.len()],
                right: vec![z.len()],
            });
        }
        if !x.iter().chain(&y).chain(&z).all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
        Ok(Self {
            id: id.into(),
            sample_rate,
            x,
            y,
            z,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// How three axes become the single channel the encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    #[default]
    Dft321,
    XOnly,
    YOnly,
    ZOnly,
    Mean,
}

impl InputMode {
    pub const ALL: [InputMode; 5] = [
        InputMode::XOnly,
        InputMode::YOnly,
        InputMode::ZOnly,
        InputMode::Mean,
        InputMode::Dft321,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Dft321 => "dft321",
            InputMode::XOnly => "x-only",
            InputMode::YOnly => "y-only",
            InputMode::ZOnly => "z-only",
            InputMode::Mean => "mean",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("input-mode", format!("unknown mode `{s}`")))
    }
}

/// Single-channel signal derived from a [`TriaxialSignal`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonoSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub mode: InputMode,
}

impl MonoSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32, mode: InputMode) -> Self {
        Self {
            samples,
            sample_rate,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    /// Copy scaled to unit RMS; silent signals are returned unchanged.
    pub fn normalized(&self) -> MonoSignal {
        let rms = (self.energy() / self.len().max(1) as f64).sqrt();
        if rms <= 1e-12 {
            return self.clone();
        }
        MonoSignal {
            samples: self.samples.iter().map(|v| v / rms).collect(),
            ..self.clone()
        }
    }
}

/// Collapses three axes into one channel according to `mode`.
pub fn to_mono(signal: &TriaxialSignal, mode: InputMode) -> Result<MonoSignal> {
    let samples = match mode {
        InputMode::Dft321 => return super::dft321(signal),
        InputMode::XOnly => signal.x.clone(),
        InputMode::YOnly => signal.y.clone(),
        InputMode::ZOnly => signal.z.clone(),
        InputMode::Mean => signal
            .x
            .iter()
            .zip(&signal.y)
            .zip(&signal.z)
            .map(|((a, b), c)| (a + b + c) / 3.0)
            .collect(),
    };
    Ok(MonoSignal::new(samples, signal.sample_rate, mode))
}

const HEADER_PREFIX: &str = "# sample_rate=";

fn parse_header(path: &Path, line: Option<&str>) -> Result<u32> {
    let perr = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: msg.into(),
    };
    let line = line.ok_or_else(|| perr("empty file"))?;
    let rate = line
        .trim()
        .strip_prefix(HEADER_PREFIX)
        .ok_or_else(|| perr("expected `# sample_rate=<Hz>` header"))?;
    let rate: u32 = rate.trim().parse().map_err(|_| perr("sample rate is not an integer"))?;
    if rate == 0 {
        return Err(perr("sample rate must be positive"));
    }
    Ok(rate)
}

fn parse_rows(path: &Path, text: &str, columns: usize) -> Result<(u32, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let rate = parse_header(path, lines.next())?;
    let mut cols = vec![Vec::new(); columns];
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected {columns} fields, found {}", fields.len()),
            });
        }
        for (c, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("column {}: `{}` is not a number", c + 1, f.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("column {}: non-finite value", c + 1),
                });
            }
            cols[c].push(v);
        }
    }
    if cols[0].is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            msg: "no samples".into(),
        });
    }
    Ok((rate, cols))
}

pub fn read_triaxial_csv(path: impl AsRef<Path>) -> Result<TriaxialSignal> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (rate, mut cols) = parse_rows(path, &text, 3)?;
    let z = cols.pop().unwrap_or_default();
    let y = cols.pop().unwrap_or_default();
    let x = cols.pop().unwrap_or_default();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    TriaxialSignal::new(id, rate, x, y, z)
}

fn fmt_sample(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

pub fn write_triaxial_csv(path: impl AsRef<Path>, signal: &TriaxialSignal) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(signal.len() * 32 + 32);
    out.push_str(&format!("{HEADER_PREFIX}{}\n", signal.sample_rate));
    for i in 0..signal.len() {
        out.push_str(&fmt_sample(signal.x[i]));
        out.push(',');
        out.push_str(&fmt_sample(signal.y[i]));
        out.push(',');
        out.push_str(&fmt_sample(signal.z[i]));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_mono_csv(path: impl AsRef<Path>, mode: InputMode) -> Result<MonoSignal> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (rate, mut cols) = parse_rows(path, &text, 1)?;
    Ok(MonoSignal::new(cols.pop().unwrap_or_default(), rate, mode))
}

pub fn write_mono_csv(path: impl AsRef<Path>, signal: &MonoSignal) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{HEADER_PREFIX}{}\n", signal.sample_rate);
    for v in &signal.samples {
        out.push_str(&fmt_sample(*v));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
