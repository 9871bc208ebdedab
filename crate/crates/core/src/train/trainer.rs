use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, RngState};
use super::loss::loss_total;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::numerics::{Adam, Graph, ParamId, Tensor};
use crate::restorer::Model;
use crate::synth::Sample;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Side of the square random crop.
    pub crop: usize,
    pub perceptual_weight: f64,
    /// Transition point of the smooth L1 loss. Small values keep the loss
    /// L1-like over the [0, 1] pixel range.
    pub smooth_beta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            crop: 64,
            perceptual_weight: 0.04,
            smooth_beta: 0.02,
            batch_size: 2,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] =
    &["epochs", "lr", "beta1", "beta2", "eps", "crop", "perceptual_weight", "smooth_beta", "batch_size", "seed"];

impl TrainConfig {
    pub fn apply_kv(&mut self, c: &KvConfig) -> Result<()> {
        self.epochs = c.get_or("epochs", self.epochs)?;
        self.lr = c.get_or("lr", self.lr)?;
        self.beta1 = c.get_or("beta1", self.beta1)?;
        self.beta2 = c.get_or("beta2", self.beta2)?;
        self.eps = c.get_or("eps", self.eps)?;
        self.crop = c.get_or("crop", self.crop)?;
        self.perceptual_weight = c.get_or("perceptual_weight", self.perceptual_weight)?;
        self.smooth_beta = c.get_or("smooth_beta", self.smooth_beta)?;
        self.batch_size = c.get_or("batch_size", self.batch_size)?;
        self.seed = c.get_or("seed", self.seed)?;
        Ok(())
    }

    pub fn validate(&self, divisibility: usize) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.perceptual_weight >= 0.0) {
            return Err(Error::Config(format!("perceptual weight must be ≥ 0, got {}", self.perceptual_weight)));
        }
        if !(self.smooth_beta > 0.0) {
            return Err(Error::Config("smooth L1 beta must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.crop == 0 || self.crop % divisibility != 0 {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of {divisibility}",
                self.crop
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub id: String,
    pub degraded: ImageBuffer,
    pub clean: ImageBuffer,
}

impl From<&Sample> for TrainPair {
    fn from(s: &Sample) -> Self {
        TrainPair { id: s.id.clone(), degraded: s.degraded.clone(), clean: s.clean.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// 1-based epoch the step belongs to.
    pub epoch: u64,
    pub step: u64,
    pub loss: f64,
}

impl LossRecord {
    /// `epoch,step,loss`
    pub fn line(&self) -> String {
        format!("{},{},{}", self.epoch, self.step, self.loss)
    }
}

/// Owns the model during training. Only restorer parameters (including the
/// descriptor projections) are updated; the encoder is frozen on entry.
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub adam: Adam<f32>,
    rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    pub log: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(mut model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(model.config.divisibility())?;
        model.freeze_encoder();
        let adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer { model, cfg, adam, rng, epoch: 0, step: 0, log: Vec::new() })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The
    /// learning rate comes from `cfg`; moments and RNG position from the
    /// checkpoint.
    pub fn resume(ckpt: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(ckpt.model.config.divisibility())?;
        let mut adam = ckpt
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        adam.lr = cfg.lr;
        let rng = ckpt.rng.ok_or_else(|| Error::Checkpoint("checkpoint has no RNG state".into()))?.restore();
        let mut model = ckpt.model;
        model.freeze_encoder();
        Ok(Trainer { model, cfg, adam, rng, epoch: ckpt.epoch, step: ckpt.step, log: Vec::new() })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.adam.clone()),
            rng: Some(RngState::capture(&self.rng)),
            epoch: self.epoch,
            step: self.step,
        }
    }

    /// One optimizer step on already-cropped `(degraded, clean)` pairs.
    /// Returns the batch-mean loss.
    pub fn step_on(&mut self, batch: &[(ImageBuffer, ImageBuffer)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let model = &self.model;
        let mut grads: Vec<Option<Tensor<f32>>> = vec![None; model.params.len()];
        let mut loss_sum = 0.0;
        for (deg, clean) in batch {
            deg.same_extent(clean)?;
            let (h, w) = (deg.height(), deg.width());
            let d = model.describe(deg)?;
            let mut g = Graph::<f32>::new();
            let x = g.constant(deg.to_tensor());
            let y = model.forward(&mut g, &model.params, x, h, w, &d)?;
            let t = g.constant(clean.to_tensor());
            let loss = loss_total(
                &mut g,
                &model.encoder,
                &model.params,
                y,
                t,
                h,
                w,
                self.cfg.perceptual_weight,
                self.cfg.smooth_beta,
            )?;
            loss_sum += g.value(loss).item() as f64;
            g.backward(loss)?;
            for (id, gr) in g.param_grads() {
                match &mut grads[id.index()] {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(gr.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(gr.clone()),
                }
            }
        }
        let inv = 1.0 / batch.len() as f32;
        let grads: Vec<_> = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (ParamId(i), g.map(|v| v * inv))))
            .collect();
        let loss = loss_sum / batch.len() as f64;
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.data().iter())
            .map(|&v| (v as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::NonFinite { step: self.step, lr: self.adam.lr, grad_norm: norm });
        }
        self.adam.step(&mut self.model.params, &grads)?;
        self.step += 1;
        self.log.push(LossRecord { epoch: self.epoch + 1, step: self.step, loss });
        Ok(loss)
    }

    fn crop_pair(&mut self, p: &TrainPair) -> Result<(ImageBuffer, ImageBuffer)> {
        let c = self.cfg.crop;
        p.degraded.same_extent(&p.clean).map_err(|e| Error::Dataset(format!("row {}: {e}", p.id)))?;
        let (w, h) = (p.degraded.width(), p.degraded.height());
        if w < c || h < c {
            return Err(Error::Dataset(format!("row {}: {w}×{h} image is smaller than crop {c}", p.id)));
        }
        let x0 = self.rng.gen_range(0..=w - c);
        let y0 = self.rng.gen_range(0..=h - c);
        Ok((p.degraded.crop(x0, y0, c, c)?, p.clean.crop(x0, y0, c, c)?))
    }

    /// One pass over `data` in a seeded random order. Returns the mean loss.
    pub fn run_epoch(&mut self, data: &[TrainPair]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = chunk.iter().map(|&i| self.crop_pair(&data[i])).collect::<Result<Vec<_>>>()?;
            sum += self.step_on(&batch)? * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(sum / data.len() as f64)
    }

    /// Runs epochs until `cfg.epochs` are complete, calling `on_epoch` with
    /// the epoch mean loss after each.
    pub fn fit(
        &mut self,
        data: &[TrainPair],
        mut on_epoch: impl FnMut(&Trainer, f64) -> Result<()>,
    ) -> Result<Vec<f64>> {
        let mut means = Vec::new();
        while (self.epoch as usize) < self.cfg.epochs {
            let m = self.run_epoch(data)?;
            means.push(m);
            on_epoch(self, m)?;
        }
        Ok(means)
    }
}
