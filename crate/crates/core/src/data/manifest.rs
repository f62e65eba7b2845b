use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{caption_problems, CAPTIONS_PER_SAMPLE};
use crate::dsp::{read_triaxial_csv, TriaxialSignal};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::config("split", format!("expected `train` or `test`, got `{s}`"))),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub signal_path: String,
    pub category: String,
    pub split: Split,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<CaptionRecord>,
}

impl Manifest {
    pub fn resolve(&self, record: &CaptionRecord) -> PathBuf {
        let p = Path::new(&record.signal_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn load_signal(&self, record: &CaptionRecord) -> Result<TriaxialSignal> {
        let mut s = read_triaxial_csv(self.resolve(record))?;
        s.id = record.id.clone();
        Ok(s)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CaptionRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.records.iter().map(|r| r.category.clone()).collect();
        c.sort_by_key(|a| natural_key(a));
        c.dedup();
        c
    }
}

fn natural_key(s: &str) -> (String, u64) {
    let digits = s.trim_start_matches(|c: char| !c.is_ascii_digit());
    let prefix = &s[..s.len() - digits.len()];
    (prefix.to_string(), digits.parse().unwrap_or(u64::MAX))
}

/// Parses a JSON-lines manifest. Blank lines are skipped; duplicate ids and
/// malformed lines are errors.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records: Vec<CaptionRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("duplicate sample id `{}`", rec.id),
            });
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: manifest has no records", path.display())));
    }
    Ok(Manifest {
        path: path.to_path_buf(),
        records,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[CaptionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub errors: Vec<String>,
    /// Caption-style issues; reported but not fatal for external data.
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks every record: signal file parses, five captions, both splits
/// present. Caption-constraint violations become warnings.
pub fn validate_manifest(path: impl AsRef<Path>) -> Result<ValidationReport> {
    let manifest = load_manifest(path)?;
    let mut report = ValidationReport {
        records: manifest.records.len(),
        ..Default::default()
    };
    for r in &manifest.records {
        if r.captions.len() != CAPTIONS_PER_SAMPLE {
            report.errors.push(format!(
                "{}: expected {CAPTIONS_PER_SAMPLE} captions, found {}",
                r.id,
                r.captions.len()
            ));
        }
        if r.category.trim().is_empty() {
            report.errors.push(format!("{}: empty category", r.id));
        }
        if let Err(e) = manifest.load_signal(r) {
            report.errors.push(format!("{}: {e}", r.id));
        }
        for (i, c) in r.captions.iter().enumerate() {
            for p in caption_problems(c) {
                report.warnings.push(format!("{} caption {}: {p}", r.id, i + 1));
            }
        }
    }
    for split in [Split::Train, Split::Test] {
        if manifest.split(split).next().is_none() {
            report.errors.push(format!("no {split} records"));
        }
    }
    Ok(report)
}
