use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::caption_choice;
use super::{sample_loss, Adam, Checkpoint, LossBreakdown, Model, ModelConfig, Sample, TrainConfig};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::numerics::{Gradients, Graph, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Batch mean of `|⟨u, v⟩| / D` (0 when the term is not computed).
    pub branch_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Step-averaged loss terms.
    pub loss: LossBreakdown,
    /// Mean `|⟨u, v⟩| / D` of the pooled branch features.
    pub branch_overlap: f64,
    pub seconds: f64,
}

/// Mini-batch Adam over prepared samples. Batch order depends only on
/// `(seed, epoch)`, so a run resumed from a checkpoint replays the same
/// batches as an uninterrupted one.
pub struct Trainer<'a> {
    model: ModelConfig,
    config: TrainConfig,
    vocab: Vocab,
    data: &'a [Sample],
    params: ParamStore<f32>,
    opt: Adam,
    step: u64,
    exec: Execution,
}

impl<'a> Trainer<'a> {
    pub fn new(model: ModelConfig, config: TrainConfig, vocab: Vocab, data: &'a [Sample]) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let params = model.init_params(vocab.len(), config.seed)?;
        let opt = Adam::new(config.learning_rate);
        Ok(Self {
            model,
            config,
            vocab,
            data,
            params,
            opt,
            step: 0,
            exec: Execution::Parallel,
        })
    }

    /// Continues from a saved state.
    pub fn resume(ckpt: Checkpoint, data: &'a [Sample]) -> Result<Self> {
        let mut t = Self::new(ckpt.model, ckpt.train, ckpt.vocab, data)?;
        t.params = ckpt.params;
        if let Some(s) = ckpt.adam {
            t.opt.set_state(s);
        }
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.config.batch_size)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One optimizer update.
    pub fn step(&mut self) -> Result<StepLog> {
        let spe = self.steps_per_epoch();
        let epoch = (self.step / spe as u64) as usize;
        let pos = (self.step % spe as u64) as usize;
        let order = self.epoch_order(epoch);
        let bs = self.config.batch_size;
        let batch = &order[pos * bs..((pos + 1) * bs).min(order.len())];
        let weights = self.config.weights();
        let scale = 1.0 / batch.len() as f64;
        let (model, variant, policy, params) = (&self.model, self.config.variant, self.config.captions, &self.params);
        let data = self.data;
        let per_sample = exec::map(self.exec, batch, |&i| -> Result<(Gradients<f32>, LossBreakdown)> {
            let s = &data[i];
            let caps = caption_choice(policy, s.targets.len(), epoch, i);
            let g = Graph::new();
            let (l, b) = sample_loss(&g, params, model, &weights, variant, s, &caps)?;
            let l = g.scale(l, scale);
            g.backward(l)?;
            Ok((g.param_grads(params), b))
        });
        let mut grads = Gradients::zeros_like(&self.params);
        let mut loss = LossBreakdown::default();
        let mut branch_overlap = 0.0;
        for r in per_sample {
            let (g, b) = r?;
            grads.merge(&g);
            loss.add_scaled(&b, scale);
            branch_overlap += scale * b.orthogonality.sqrt();
        }
        if !loss.total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite {
                context: format!(
                    "training step {} (total {}, ce {}, periodicity {}, aperiodicity {}, orthogonality {})",
                    self.step, loss.total, loss.ce, loss.periodicity, loss.aperiodicity, loss.orthogonality
                ),
            });
        }
        let grad_norm = grads.clip_global_norm(self.config.clip_norm);
        self.opt.step(&mut self.params, &grads)?;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            epoch,
            loss,
            grad_norm,
            branch_overlap,
        })
    }

    /// Runs steps until the current epoch is complete.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = std::time::Instant::now();
        let spe = self.steps_per_epoch() as u64;
        let epoch = (self.step / spe) as usize;
        let mut loss = LossBreakdown::default();
        let mut overlap = 0.0;
        let mut steps = 0;
        while (self.step / spe) as usize == epoch {
            let s = self.step()?;
            loss.add_scaled(&s.loss, 1.0);
            overlap += s.branch_overlap;
            steps += 1;
        }
        let n = steps as f64;
        let mut mean = LossBreakdown::default();
        mean.add_scaled(&loss, 1.0 / n);
        Ok(EpochLog {
            epoch,
            steps,
            loss: mean,
            branch_overlap: overlap / n,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains until the configured epoch count, reporting each epoch.
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let spe = self.steps_per_epoch() as u64;
        let mut logs = Vec::new();
        while self.step < spe * self.config.epochs as u64 {
            let log = self.run_epoch()?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.config.clone(),
            vocab: self.vocab.clone(),
            step: self.step,
            params: self.params.clone(),
            adam: self.opt.state().cloned(),
        }
    }

    pub fn model(&self) -> Model {
        Model {
            config: self.model.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
            variant: self.config.variant,
        }
    }
}
