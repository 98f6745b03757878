//! Supervised training: schedules, AdamW, per-image channel sampling and the
//! mixed channel-availability objectives.

mod optim;
mod schedule;

pub use optim::{adamw_step, clip_grad_norm, AdamWConfig, OptimState};
pub use schedule::{lr_at, wd_at, ScheduleConfig};

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::models::{ModelParams, Session};
use crate::parallel;
use crate::rng::{self, Rng};
use crate::sampling::{ChannelCombination, ChannelSampler, SamplerConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub adamw: AdamWConfig,
    pub batch_size: usize,
    /// Drives shuffling; the sampler has its own seed.
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            adamw: AdamWConfig::default(),
            batch_size: 32,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.sampler.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// One training image with its loss weight and, for partially observed
/// data, the channels that exist.
#[derive(Clone, Debug)]
pub struct Example {
    pub image: MultiChannelImage,
    pub label: usize,
    pub weight: f64,
    pub available: Option<ChannelCombination>,
}

impl Example {
    pub fn new(image: MultiChannelImage, label: usize) -> Self {
        Example {
            image,
            label,
            weight: 1.0,
            available: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub wd: f64,
    pub loss: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,epoch,lr,wd,loss\n");
    for r in rows {
        writeln!(out, "{},{},{:e},{:e},{:.17e}", r.step, r.epoch, r.lr, r.wd, r.loss).unwrap();
    }
    out
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, log_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixedObjective {
    /// One shuffled pool over both datasets.
    Average,
    /// Alternating single-dataset batches, reweighted so both datasets
    /// contribute equally.
    Upsample,
}

impl FromStr for MixedObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(MixedObjective::Average),
            "upsample" => Ok(MixedObjective::Upsample),
            other => Err(Error::Config(format!(
                "unknown objective '{other}' (expected average or upsample)"
            ))),
        }
    }
}

/// Batch weights `(|D1|+|D2|) / (2|Di|)` for the two datasets.
pub fn upsample_weights(n1: usize, n2: usize) -> (f64, f64) {
    let total = (n1 + n2) as f64;
    let w = |n: usize| if n == 0 { 0.0 } else { total / (2.0 * n as f64) };
    (w(n1), w(n2))
}

/// Weighted cross-entropy and parameter gradients for one example.
fn example_grad(
    params: &ModelParams,
    ex: &Example,
    combo: &ChannelCombination,
) -> Result<(f64, Vec<Tensor>)> {
    let mut s = Session::new(params);
    let out = s.forward(&ex.image, combo, false)?;
    let loss = s.graph.cross_entropy(out.logits, &[ex.label])?;
    let value = s.graph.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss {value} for label {}", ex.label)));
    }
    let grads = s.graph.backward_with_seed(loss, ex.weight)?;
    Ok((ex.weight * value, s.param_grads(&grads)))
}

pub struct Trainer {
    params: ModelParams,
    config: TrainConfig,
    opt: OptimState,
    sampler: ChannelSampler,
    shuffle: Rng,
    steps_per_epoch: usize,
    step: usize,
    epoch: usize,
    log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig, steps_per_epoch: usize) -> Result<Self> {
        config.validate()?;
        if steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        let opt = OptimState::new(&params, config.adamw.clone());
        let sampler = ChannelSampler::new(config.sampler.clone())?;
        Ok(Trainer {
            params,
            shuffle: rng::seeded(config.seed),
            config,
            opt,
            sampler,
            steps_per_epoch,
            step: 0,
            epoch: 0,
            log: Vec::new(),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn optim_state(&self) -> &OptimState {
        &self.opt
    }

    /// Draws each example's channel combination, in batch order.
    pub fn sample_combinations(&mut self, batch: &[Example]) -> Result<Vec<ChannelCombination>> {
        let channels = self.params.config().channels;
        batch
            .iter()
            .map(|ex| match &ex.available {
                Some(avail) => self.sampler.sample_from(avail),
                None => self.sampler.sample(channels),
            })
            .collect()
    }

    /// Forward, backward and one optimizer step; returns the weighted mean
    /// loss over the batch.
    pub fn train_step(&mut self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Input("empty training batch".into()));
        }
        let combos = self.sample_combinations(batch)?;
        let params = &self.params;
        let results = parallel::map_range(batch.len(), |i| example_grad(params, &batch[i], &combos[i]));

        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor>> = None;
        for r in results {
            let (l, g) = r?;
            loss += l;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.add_scaled(b, 1.0)?;
                    }
                }
            }
        }
        let mut grads = grads.expect("batch is nonempty");
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        loss /= n;
        if let Some(max) = self.config.grad_clip {
            clip_grad_norm(&mut grads, max);
        }

        let lr = lr_at(self.step, self.steps_per_epoch, &self.config.schedule);
        let wd = wd_at(self.step, self.steps_per_epoch, &self.config.schedule);
        adamw_step(&mut self.params, &grads, &mut self.opt, lr, wd)?;
        self.log.push(LogRow {
            step: self.step,
            epoch: self.epoch,
            lr,
            wd,
            loss,
        });
        self.step += 1;
        Ok(loss)
    }

    fn run_batches(&mut self, batches: Vec<Vec<Example>>) -> Result<f64> {
        let mut total = 0.0;
        let count = batches.len();
        for b in batches {
            total += self.train_step(&b)?;
        }
        self.epoch += 1;
        Ok(total / count.max(1) as f64)
    }

    /// One shuffled pass over `ds`; returns the mean batch loss.
    pub fn train_epoch(&mut self, ds: &Dataset) -> Result<f64> {
        self.check_dataset(ds, ds.channels() == self.params.config().channels)?;
        let order = rng::permutation(&mut self.shuffle, ds.len());
        let batches = order
            .chunks(self.config.batch_size)
            .map(|idx| idx.iter().map(|&i| Example::new(ds.image(i), ds.label(i))).collect())
            .collect();
        self.run_batches(batches)
    }

    /// Trains for the configured number of epochs.
    pub fn fit(&mut self, ds: &Dataset) -> Result<Vec<f64>> {
        (0..self.config.schedule.total_epochs)
            .map(|_| self.train_epoch(ds))
            .collect()
    }

    fn check_dataset(&self, ds: &Dataset, channels_ok: bool) -> Result<()> {
        let cfg = self.params.config();
        if !channels_ok || ds.height() != cfg.image_h || ds.width() != cfg.image_w {
            return Err(Error::Dimension {
                op: "training data",
                left: vec![ds.channels(), ds.height(), ds.width()],
                right: vec![cfg.channels, cfg.image_h, cfg.image_w],
            });
        }
        if ds.num_classes() != cfg.num_classes {
            return Err(Error::Input(format!(
                "dataset has {} classes, model expects {}",
                ds.num_classes(),
                cfg.num_classes
            )));
        }
        Ok(())
    }

    /// One epoch over a fully observed dataset and one whose channels are a
    /// prefix of it. Partial images are zero-padded and only their observed
    /// channels are ever selected.
    pub fn mixed_train_epoch(
        &mut self,
        full: &Dataset,
        partial: &Dataset,
        objective: MixedObjective,
    ) -> Result<f64> {
        let c = self.params.config().channels;
        self.check_dataset(full, full.channels() == c)?;
        self.check_dataset(partial, partial.channels() <= c)?;
        if partial.channel_names() != &full.channel_names()[..partial.channels()] {
            return Err(Error::Input(format!(
                "partial dataset channels {:?} are not a prefix of {:?}",
                partial.channel_names(),
                full.channel_names()
            )));
        }
        let avail = ChannelCombination::new((0..partial.channels()).collect(), c)?;
        let make = |from_partial: bool, i: usize, weight: f64| -> Example {
            if from_partial {
                let src = partial.image(i);
                let mut img = MultiChannelImage::zeros(c, src.height(), src.width());
                img.data_mut()[..src.data().len()].copy_from_slice(src.data());
                Example {
                    image: img,
                    label: partial.label(i),
                    weight,
                    available: Some(avail.clone()),
                }
            } else {
                Example {
                    weight,
                    ..Example::new(full.image(i), full.label(i))
                }
            }
        };

        let bs = self.config.batch_size;
        let batches: Vec<Vec<Example>> = match objective {
            MixedObjective::Average => {
                let pool: Vec<(bool, usize)> = (0..full.len())
                    .map(|i| (false, i))
                    .chain((0..partial.len()).map(|i| (true, i)))
                    .collect();
                let order = rng::permutation(&mut self.shuffle, pool.len());
                order
                    .chunks(bs)
                    .map(|idx| idx.iter().map(|&j| make(pool[j].0, pool[j].1, 1.0)).collect())
                    .collect()
            }
            MixedObjective::Upsample => {
                let (w1, w2) = upsample_weights(full.len(), partial.len());
                let o1 = rng::permutation(&mut self.shuffle, full.len());
                let o2 = rng::permutation(&mut self.shuffle, partial.len());
                let b1: Vec<Vec<Example>> = o1
                    .chunks(bs)
                    .map(|idx| idx.iter().map(|&i| make(false, i, w1)).collect())
                    .collect();
                let b2: Vec<Vec<Example>> = o2
                    .chunks(bs)
                    .map(|idx| idx.iter().map(|&i| make(true, i, w2)).collect())
                    .collect();
                let mut out = Vec::with_capacity(b1.len() + b2.len());
                let (mut i1, mut i2) = (b1.into_iter(), b2.into_iter());
                loop {
                    match (i1.next(), i2.next()) {
                        (None, None) => break,
                        (a, b) => out.extend(a.into_iter().chain(b)),
                    }
                }
                out
            }
        };
        if batches.is_empty() {
            return Err(Error::Input("both datasets are empty".into()));
        }
        self.run_batches(batches)
    }
}
