//! Training: two forward passes per item (upsampling and reconstruction)
//! sharing one encoding, a single backward pass, global-norm clipping and
//! AdamW with a cosine learning-rate schedule.

pub mod augment;
pub mod config;
pub mod optim;
pub mod step;

use rand::seq::index::sample;
use rand::Rng;

pub use augment::{augment, augment_with, random_rotation, Rotation, TrainingPair, IDENTITY};
pub use config::{TrainConfig, UpsamplingLoss};
pub use optim::{adamw_step, clip_global_norm, cosine_lr, global_norm, AdamState, AdamWConfig};
pub use step::{item_graph, item_graph_with_samples, item_rng, item_step, prepare_pair, ItemTerms};

use crate::autodiff::{Checkpoint, Real};
use crate::error::{Error, Result};
use crate::network::Model;

pub const LOG_HEADER: &str = "step,lr,loss,loss_proj_coarse,loss_proj_refined,loss_acd,grad_norm";

const STEP_KEY: &str = "train.step";

/// Batch means of the loss terms for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub proj_coarse: f64,
    pub proj_refined: Option<f64>,
    pub acd: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm handed to the optimizer.
    pub clipped_norm: f64,
    /// `false` when the update was skipped for a non-finite gradient.
    pub applied: bool,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        let refined = self.proj_refined.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.lr, self.loss, self.proj_coarse, refined, self.acd, self.grad_norm
        )
    }
}

/// Model, optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    model: Model<T>,
    config: TrainConfig,
    state: AdamState<T>,
    step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = AdamState::new(model.params());
        Ok(Self {
            model,
            config,
            state,
            step: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::to_checkpoint`].
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::from_checkpoint(ck)?;
        let state = AdamState::read_from(model.params(), ck)?;
        let step = ck
            .header
            .get(STEP_KEY)
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state".into()))?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad value for {STEP_KEY}")))?;
        Ok(Self {
            model,
            config,
            state,
            step,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.header.insert(STEP_KEY.into(), self.step.to_string());
        self.state.write_to(self.model.params(), &mut ck);
        ck
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer_state(&self) -> &AdamState<T> {
        &self.state
    }

    /// Index of the next step.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.iterations
    }

    /// Dataset indices for step `step`: without replacement when the dataset
    /// is at least as large as the batch.
    pub fn batch_indices(&self, dataset_len: usize, step: usize) -> Vec<usize> {
        let mut rng = step::item_rng(self.config.seed, step, 0xff_ffff);
        let b = self.config.batch_size;
        if dataset_len >= b {
            sample(&mut rng, dataset_len, b).into_vec()
        } else {
            (0..b).map(|_| rng.gen_range(0..dataset_len)).collect()
        }
    }

    /// One optimizer step on `batch`; the loss is the mean over items.
    pub fn train_step(&mut self, batch: &[TrainingPair]) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let c = &self.config;
        let lr = cosine_lr(self.step, c.iterations, c.lr_start, c.lr_end);
        let inv = 1.0 / batch.len() as f64;
        let mut grads: Vec<Vec<T>> = self
            .model
            .params()
            .iter()
            .map(|(_, p)| vec![T::zero(); p.values.len()])
            .collect();
        let (mut loss, mut coarse, mut refined, mut recon) = (0.0, 0.0, Some(0.0), 0.0);
        for (i, pair) in batch.iter().enumerate() {
            let r = item_step(&self.model, pair, c, self.step, i)?;
            loss += r.loss * inv;
            coarse += r.coarse * inv;
            refined = refined.zip(r.refined).map(|(a, b)| a + b * inv);
            recon += r.recon * inv;
            let s = T::from_f64(inv);
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v * s;
                }
            }
        }
        let grad_norm = clip_global_norm(&mut grads, c.grad_clip_norm);
        let clipped_norm = global_norm(&grads);
        let applied = adamw_step(
            self.model.params_mut(),
            &grads,
            &mut self.state,
            lr,
            &c.optimizer,
        )?;
        let log = StepLog {
            step: self.step,
            lr,
            loss,
            proj_coarse: coarse,
            proj_refined: refined,
            acd: recon,
            grad_norm,
            clipped_norm,
            applied,
        };
        self.step += 1;
        Ok(log)
    }

    /// Trains on `data` until the configured iteration count; `on_step`
    /// sees the trainer after every step (for logging and checkpointing).
    pub fn run<F>(&mut self, data: &[TrainingPair], mut on_step: F) -> Result<()>
    where
        F: FnMut(&Self, &StepLog) -> Result<()>,
    {
        if data.is_empty() {
            return Err(Error::Empty("training dataset"));
        }
        while !self.is_finished() {
            let batch: Vec<TrainingPair> = self
                .batch_indices(data.len(), self.step)
                .into_iter()
                .map(|i| data[i].clone())
                .collect();
            let log = self.train_step(&batch)?;
            on_step(self, &log)?;
        }
        Ok(())
    }
}
