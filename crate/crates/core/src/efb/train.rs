use log::debug;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::model::{EfbModel, ForwardOptions};
use crate::nn::{cosine_lr, Adam, AdamConfig, Tape};
use crate::rng::train_batch_rng;
use crate::sysmodel::{sample_batch, ChannelRealization};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, batches_per_epoch: 200, batch_size: 1000, lr0: 1e-3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config("training needs at least one epoch and one batch".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch normalisation needs a batch size of at least 2".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    pub mean_loss: f64,
}

/// Adam with a cosine schedule over `epochs * batches_per_epoch` steps.
/// Every batch draws its channels and noise from its own random stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: Adam,
}

impl Trainer {
    pub fn new(model: &EfbModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, adam: Adam::new(&model.store, AdamConfig::default()) })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step_count()
    }

    /// Channels and pilot noise of batch `batch` in epoch `epoch`.
    pub fn batch(
        &self,
        model: &EfbModel,
        epoch: usize,
        batch: usize,
    ) -> (Vec<ChannelRealization>, Vec<DMatrix<Complex64>>) {
        let mut rng = train_batch_rng(self.config.seed, epoch, batch, self.config.batches_per_epoch);
        let channels = sample_batch(&model.config, &mut rng, self.config.batch_size);
        let noise = model.draw_noise(&mut rng, channels.len(), model.config.noise_var());
        (channels, noise)
    }

    /// One forward, backward and update. Returns the loss before the update.
    /// A non-finite loss or beamformer leaves the model untouched and is
    /// reported as [`Error::Diverged`].
    pub fn step(
        &mut self,
        model: &mut EfbModel,
        channels: &[ChannelRealization],
        noise: &[DMatrix<Complex64>],
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let out = match model.loss_with_noise(&mut tape, channels, noise, model.config.noise_var(), ForwardOptions::TRAIN) {
            Ok(out) => out,
            // Non-finite decoder outputs surface here before any loss exists.
            Err(Error::DegenerateBeamformer(_)) => {
                return Err(Error::Diverged { step: self.step_count(), loss: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        let loss = tape.value(out.loss).item();
        if !loss.is_finite() {
            return Err(Error::Diverged { step: self.step_count(), loss });
        }
        tape.backward(out.loss)?;
        model.store.zero_grads();
        model.store.accumulate_grads(&tape);
        let lr = self.next_lr();
        self.adam.step(&mut model.store, lr);
        model.store.apply_stat_updates(&tape.take_stat_updates());
        Ok(loss)
    }

    fn next_lr(&self) -> f64 {
        cosine_lr(self.step_count() as usize, self.config.total_steps(), self.config.lr0)
    }

    pub fn run_epoch(&mut self, model: &mut EfbModel, epoch: usize) -> Result<EpochStats> {
        let mut total = 0.0;
        let mut lr = 0.0;
        for b in 0..self.config.batches_per_epoch {
            let (channels, noise) = self.batch(model, epoch, b);
            lr = self.next_lr();
            let loss = self.step(model, &channels, &noise)?;
            debug!("epoch {epoch} batch {b}: loss {loss:.5}");
            total += loss;
        }
        Ok(EpochStats {
            epoch,
            step: self.step_count(),
            lr,
            mean_loss: total / self.config.batches_per_epoch as f64,
        })
    }

    /// Runs every epoch, reporting each to `on_epoch`.
    pub fn run(
        &mut self,
        model: &mut EfbModel,
        mut on_epoch: impl FnMut(&EfbModel, &EpochStats) -> Result<()>,
    ) -> Result<Vec<EpochStats>> {
        (0..self.config.epochs)
            .map(|e| {
                let stats = self.run_epoch(model, e)?;
                on_epoch(model, &stats)?;
                Ok(stats)
            })
            .collect()
    }
}
