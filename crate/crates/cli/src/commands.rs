use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use tactcap::data::{load_manifest, synth_corpus, validate_manifest, write_corpus, Split, SynthConfig};
use tactcap::decoder::DecodeMode;
use tactcap::dsp::{read_triaxial_csv, to_mono, InputMode};
use tactcap::encoder::{EncoderInput, Variant};
use tactcap::exec::Execution;
use tactcap::gradgate::run_gate;
use tactcap::retrieval::{fingerprint, RetrievalIndex};
use tactcap::training::{
    evaluate, load_checkpoint, run_ablation, save_checkpoint, AblationGrid, AblationResult, Checkpoint, Dataset,
    EvalControl, ModelConfig, TrainConfig, Trainer,
};

/// Bad flags or config contents (exit 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Gradient gate failure (exit 3).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct GateFailed(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads a JSON config, or the defaults when no path is given.
fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| tactcap::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| tactcap::Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json + "\n").map_err(|e| tactcap::Error::io(path, e))?;
    Ok(())
}

fn split_list<T: std::str::FromStr<Err = tactcap::Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(|x| Ok(x.trim().parse::<T>()?)).collect()
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for signals/, manifest.jsonl and synth.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    materials: Option<usize>,
    #[arg(long)]
    samples_per_material: Option<usize>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_json(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.materials {
        cfg.materials = m;
    }
    if let Some(n) = a.samples_per_material {
        cfg.samples_per_material = n;
    }
    let corpus = synth_corpus(&cfg)?;
    let manifest = write_corpus(&corpus, &a.out)?;
    let report = validate_manifest(&manifest)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !report.is_ok() {
        bail!(tactcap::Error::Data(report.errors.join("; ")));
    }
    println!("wrote {} samples to {}", corpus.records.len(), manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model config (JSON).
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Shared feature width; rescales every layer to its default for this width.
    #[arg(long)]
    width: Option<usize>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        match (self.width, &self.model_config) {
            (Some(_), Some(_)) => Err(usage("--width and --model-config are mutually exclusive")),
            (Some(w), None) => Ok(ModelConfig::with_width(w)),
            (None, p) => load_json(p.as_deref()),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Training config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// full, periodic-only, aperiodic-only or no-fusion.
    #[arg(long)]
    variant: Option<Variant>,
    /// dft321, x-only, y-only, z-only or mean.
    #[arg(long)]
    input_mode: Option<InputMode>,
    /// Withhold one category from training and evaluate on it.
    #[arg(long)]
    exclude: Option<String>,
    /// greedy or beamN.
    #[arg(long)]
    decode: Option<DecodeMode>,
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c: TrainConfig = load_json(self.config.as_deref())?;
        self.apply(&mut c);
        Ok(c)
    }

    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.variant {
            c.variant = v;
        }
        if let Some(v) = self.input_mode {
            c.input_mode = v;
        }
        if let Some(v) = &self.exclude {
            c.exclude_category = Some(v.clone());
        }
        if let Some(v) = self.decode {
            c.decode = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Continue from a checkpoint; its configs apply unless overridden.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run per-sample work on one thread.
    #[arg(long)]
    sequential: bool,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let signals = Dataset::load_signals(&manifest)?;
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let resumed = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let (model, cfg) = match &resumed {
        Some(ck) => {
            if a.model.width.is_some() || a.model.model_config.is_some() {
                return Err(usage("the model config of a resumed run comes from its checkpoint"));
            }
            let mut cfg = ck.train.clone();
            a.train.apply(&mut cfg);
            (ck.model.clone(), cfg)
        }
        None => (a.model.resolve()?, a.train.resolve()?),
    };
    model.validate()?;
    cfg.validate()?;
    let dsp = &model.encoder.dsp;
    let exclude = cfg.exclude_category.as_deref();
    let data = match &resumed {
        Some(ck) => Dataset::with_vocab(
            &manifest.records,
            &signals,
            cfg.input_mode,
            exclude,
            dsp,
            model.decoder.max_len,
            ck.vocab.clone(),
        )?,
        None => Dataset::build(
            &manifest.records,
            &signals,
            cfg.input_mode,
            exclude,
            dsp,
            model.decoder.max_len,
        )?,
    };
    eprintln!(
        "training {} / {} on {} samples, vocabulary {}",
        cfg.variant,
        cfg.input_mode,
        data.train.len(),
        data.vocab.len()
    );
    let mut trainer = match resumed {
        Some(mut ck) => {
            ck.train = cfg;
            Trainer::resume(ck, &data.train)?
        }
        None => Trainer::new(model, cfg, data.vocab.clone(), &data.train)?,
    }
    .with_execution(exec);
    let mut log = String::new();
    trainer.train(|e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  ce {:.4}  per {:.4}  aper {:.4}  orth {:.5}  {:.1}s",
            e.epoch, e.loss.total, e.loss.ce, e.loss.periodicity, e.loss.aperiodicity, e.loss.orthogonality, e.seconds
        );
        log.push_str(&serde_json::to_string(e).unwrap_or_default());
        log.push('\n');
    })?;
    save_checkpoint(&trainer.checkpoint(), &a.out)?;
    let log_path = a.out.with_extension("log.jsonl");
    fs::write(&log_path, log).map_err(|e| tactcap::Error::io(&log_path, e))?;
    println!("saved {}", a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// greedy or beamN; defaults to the checkpoint's setting.
    #[arg(long)]
    decode: Option<DecodeMode>,
    /// Triaxial signal CSV files.
    #[arg(required = true)]
    signals: Vec<PathBuf>,
}

pub fn caption(a: CaptionArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = ck.model();
    let mode = a.decode.unwrap_or(ck.train.decode);
    for path in &a.signals {
        let s = read_triaxial_csv(path)?;
        let mono = to_mono(&s, ck.train.input_mode)?;
        let input =
            EncoderInput::from_signal(&mono, &ck.model.encoder.dsp).with_context(|| format!("{}", path.display()))?;
        println!("{}\t{}", path.display(), model.caption(&input, mode)?);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// model, echo, shuffled or empty.
    #[arg(long, default_value = "model", value_parser = parse_control)]
    control: EvalControl,
    #[arg(long)]
    decode: Option<DecodeMode>,
    /// Directory for eval.json and eval.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_control(s: &str) -> std::result::Result<EvalControl, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown control `{s}` (model, echo, shuffled, empty)"))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut ck = load_checkpoint(&a.checkpoint)?;
    if let Some(d) = a.decode {
        ck.train.decode = d;
    }
    let manifest = load_manifest(&a.manifest)?;
    let report = evaluate(&ck, &manifest, a.split, a.control)?;
    print!("{}", report.to_table());
    if let Some(dir) = &a.out {
        report.write(dir, "eval")?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Grid spec (JSON): variants, input_modes, exclude, seeds.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Comma-separated variants.
    #[arg(long)]
    variants: Option<String>,
    /// Comma-separated input modes.
    #[arg(long)]
    input_modes: Option<String>,
    /// Comma-separated categories to hold out; `none` trains on everything.
    #[arg(long)]
    exclude_grid: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Run grid cells concurrently.
    #[arg(long)]
    parallel_cells: bool,
    /// Directory for ablation.json and ablation.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut grid: AblationGrid = load_json(a.grid.as_deref())?;
    if let Some(v) = &a.variants {
        grid.variants = split_list(v)?;
    }
    if let Some(v) = &a.input_modes {
        grid.input_modes = split_list(v)?;
    }
    if let Some(v) = &a.exclude_grid {
        grid.exclude = v
            .split(',')
            .map(|c| match c.trim() {
                "none" => None,
                c => Some(c.to_string()),
            })
            .collect();
    }
    if let Some(v) = &a.seeds {
        grid.seeds = v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| usage(format!("bad seed `{s}`"))))
            .collect::<Result<_>>()?;
    }
    let model = a.model.resolve()?;
    let base = a.train.resolve()?;
    let manifest = load_manifest(&a.manifest)?;
    let signals = Dataset::load_signals(&manifest)?;
    let exec = if a.parallel_cells {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let results = run_ablation(&manifest.records, &signals, &model, &base, &grid, exec, |r| {
        match &r.report {
            Some(rep) => eprintln!("{}: CIDEr {:.4} ({:.0}s)", r.cell.label(), rep.cider, r.seconds),
            None => eprintln!("{}: FAILED {}", r.cell.label(), r.error.as_deref().unwrap_or("")),
        }
    })?;
    let table = AblationResult::table(&results);
    print!("{table}");
    if let Some(dir) = &a.out {
        write_json(&dir.join("ablation.json"), &results)?;
        fs::write(dir.join("ablation.txt"), &table).map_err(|e| tactcap::Error::io(dir, e))?;
    }
    if results.iter().all(|r| r.report.is_none()) {
        bail!(tactcap::Error::Data("every ablation cell failed".into()));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Index directory.
    #[arg(long)]
    index: PathBuf,
    /// (Re)build the index from --checkpoint and --manifest first.
    #[arg(long)]
    build: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    decode: Option<DecodeMode>,
    /// Print at most this many matches.
    #[arg(long)]
    limit: Option<usize>,
    /// Keyword or sentence.
    query: Vec<String>,
}

pub fn retrieve(a: RetrieveArgs) -> Result<()> {
    let ck_bytes = a
        .checkpoint
        .as_deref()
        .map(|p| fs::read(p).map_err(|e| tactcap::Error::io(p, e)))
        .transpose()?;
    let index = if a.build {
        let (Some(bytes), Some(mpath)) = (&ck_bytes, &a.manifest) else {
            return Err(usage("--build needs --checkpoint and --manifest"));
        };
        let ck = Checkpoint::from_bytes(bytes)?;
        let manifest = load_manifest(mpath)?;
        let idx = RetrievalIndex::from_checkpoint(&ck, bytes, &manifest, a.decode.unwrap_or(ck.train.decode))?;
        idx.save(&a.index)?;
        eprintln!("indexed {} captions into {}", idx.entries.len(), a.index.display());
        idx
    } else {
        let idx = RetrievalIndex::load(&a.index)?;
        if let Some(bytes) = &ck_bytes {
            idx.ensure_fresh(&fingerprint(bytes))?;
        }
        idx
    };
    if a.query.is_empty() {
        if a.build {
            return Ok(());
        }
        return Err(usage("a query is required"));
    }
    let hits = index.query(&a.query.join(" "))?;
    if hits.is_empty() {
        eprintln!("no matches");
    }
    for h in hits.iter().take(a.limit.unwrap_or(usize::MAX)) {
        println!("{}\t{}\t{}\t{}", h.id, h.matched, h.caption, h.signal_path);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 3)]
    seed: u64,
    /// Write the report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let checks = run_gate(a.seed)?;
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "{:<16} {}  max rel {:.2e}  {:.1}% < {:.0e}",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.max_rel,
            100.0 * c.fraction,
            c.tol
        );
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    if let Some(p) = &a.json {
        write_json(p, &checks)?;
    }
    if !failed.is_empty() {
        bail!(GateFailed(format!("gradient gate failed: {}", failed.join(", "))));
    }
    Ok(())
}
