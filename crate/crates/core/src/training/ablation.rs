use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_with, Dataset, EvalControl, ModelConfig, TrainConfig, Trainer};
use crate::data::CaptionRecord;
use crate::dsp::{InputMode, TriaxialSignal};
use crate::encoder::Variant;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::metrics::{EvalReport, TABLE_HEADER};

/// Cartesian grid of training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub variants: Vec<Variant>,
    pub input_modes: Vec<InputMode>,
    /// `None` trains on the full training split.
    pub exclude: Vec<Option<String>>,
    pub seeds: Vec<u64>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            input_modes: vec![InputMode::Dft321],
            exclude: vec![None],
            seeds: vec![17],
        }
    }
}

impl AblationGrid {
    pub fn cells(&self) -> Vec<AblationCell> {
        let mut out = Vec::new();
        for exclude in &self.exclude {
            for &input_mode in &self.input_modes {
                for &variant in &self.variants {
                    for &seed in &self.seeds {
                        out.push(AblationCell {
                            variant,
                            input_mode,
                            exclude: exclude.clone(),
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("variants", self.variants.is_empty()),
            ("input_modes", self.input_modes.is_empty()),
            ("exclude", self.exclude.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::config(name, "grid axis must not be empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub input_mode: InputMode,
    pub exclude: Option<String>,
    pub seed: u64,
}

impl AblationCell {
    pub fn label(&self) -> String {
        let mut s = format!("{} / {}", self.variant, self.input_mode);
        if let Some(c) = &self.exclude {
            let _ = write!(s, " / -{c}");
        }
        let _ = write!(s, " / seed {}", self.seed);
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub cell: AblationCell,
    pub report: Option<EvalReport>,
    /// Set when the cell failed; other cells still run.
    pub error: Option<String>,
    pub seconds: f64,
}

impl AblationResult {
    /// Aligned table, one row per cell; failed cells are marked.
    pub fn table(results: &[AblationResult]) -> String {
        let width = results.iter().map(|r| r.cell.label().len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}", "Cell");
        for h in TABLE_HEADER {
            let _ = write!(out, "  {h:>7}");
        }
        out.push('\n');
        for r in results {
            let _ = write!(out, "{:<width$}", r.cell.label());
            match &r.report {
                Some(rep) => {
                    for v in rep.scores() {
                        let _ = write!(out, "  {v:>7.4}");
                    }
                }
                None => {
                    let _ = write!(out, "  FAILED: {}", r.error.as_deref().unwrap_or("unknown"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates every grid cell with identical model settings.
/// Datasets are prepared once per (input mode, excluded category).
pub fn run_ablation(
    records: &[CaptionRecord],
    signals: &[TriaxialSignal],
    model: &ModelConfig,
    base: &TrainConfig,
    grid: &AblationGrid,
    cells_exec: Execution,
    on_cell: impl Fn(&AblationResult) + Sync,
) -> Result<Vec<AblationResult>> {
    grid.validate()?;
    model.validate()?;
    let mut datasets: HashMap<(InputMode, Option<String>), std::result::Result<Dataset, String>> = HashMap::new();
    for ex in &grid.exclude {
        for &mode in &grid.input_modes {
            let d = Dataset::build(
                records,
                signals,
                mode,
                ex.as_deref(),
                &model.encoder.dsp,
                model.decoder.max_len,
            )
            .map_err(|e| e.to_string());
            datasets.insert((mode, ex.clone()), d);
        }
    }
    let cells = grid.cells();
    let results = exec::map(cells_exec, &cells, |cell| {
        let start = std::time::Instant::now();
        let outcome = (|| -> std::result::Result<EvalReport, String> {
            let data = datasets[&(cell.input_mode, cell.exclude.clone())].as_ref()?;
            let cfg = TrainConfig {
                variant: cell.variant,
                input_mode: cell.input_mode,
                exclude_category: cell.exclude.clone(),
                seed: cell.seed,
                ..base.clone()
            };
            let run = || -> Result<EvalReport> {
                let mut trainer = Trainer::new(model.clone(), cfg.clone(), data.vocab.clone(), &data.train)?;
                trainer.train(|_| {})?;
                evaluate_with(
                    &trainer.model(),
                    &data.eval,
                    cfg.decode,
                    EvalControl::Model,
                    &cell.label(),
                )
            };
            run().map_err(|e| e.to_string())
        })();
        let result = match outcome {
            Ok(r) => AblationResult {
                cell: cell.clone(),
                report: Some(r),
                error: None,
                seconds: start.elapsed().as_secs_f64(),
            },
            Err(e) => AblationResult {
                cell: cell.clone(),
                report: None,
                error: Some(e),
                seconds: start.elapsed().as_secs_f64(),
            },
        };
        on_cell(&result);
        result
    });
    Ok(results)
}
