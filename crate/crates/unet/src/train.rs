use meltpool_core::metrics::{mean_scores, score_pair, Scores};
use meltpool_core::raster::{resize_pair, to_grayscale, BinaryMask, Raster};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnetError};
use crate::loss::{bce_grad, bce_loss};
use crate::model::UNet;
use crate::optim::RmsProp;
use crate::tensor::Tensor;

/// Optimizer is RMSprop and the loss binary cross entropy; neither is
/// configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-4,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(UnetError::TrainConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(UnetError::TrainConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Grayscale inputs and 0/1 labels at the network's input side.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub side: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<f32>,
}

/// Grayscale pixels of `image` resized to `side x side`.
pub fn prepare_input(image: &Raster, side: usize) -> Result<Vec<f32>> {
    let image = if image.width() == side && image.height() == side {
        image.clone()
    } else {
        meltpool_core::raster::resize_raster(image, side, side)?
    };
    Ok(to_grayscale(&image).into_data())
}

impl Dataset {
    pub fn from_pairs(pairs: &[(Raster, BinaryMask)], side: usize) -> Result<Self> {
        let mut d = Dataset {
            side,
            ..Default::default()
        };
        for (image, mask) in pairs {
            d.push(image, mask)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, image: &Raster, mask: &BinaryMask) -> Result<()> {
        let (image, mask) = resize_pair(image, Some(mask), self.side)?;
        let mask = mask.expect("mask was given");
        self.inputs.extend(prepare_input(&image, self.side)?);
        self.labels.extend(mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }));
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.side == 0 {
            0
        } else {
            self.labels.len() / (self.side * self.side)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs and labels of the listed items, in order.
    pub fn batch(&self, items: &[usize]) -> (Tensor<f32>, Vec<f32>) {
        let px = self.side * self.side;
        let mut x = Vec::with_capacity(items.len() * px);
        let mut y = Vec::with_capacity(items.len() * px);
        for &i in items {
            x.extend_from_slice(&self.inputs[i * px..(i + 1) * px]);
            y.extend_from_slice(&self.labels[i * px..(i + 1) * px]);
        }
        (Tensor::from_vec(items.len(), 1, self.side, self.side, x), y)
    }

    pub fn mask(&self, i: usize) -> BinaryMask {
        let px = self.side * self.side;
        BinaryMask::new(self.side, self.side, self.labels[i * px..(i + 1) * px].iter().map(|&v| v >= 0.5).collect())
            .expect("square mask")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    /// Fraction of pixels classified correctly at threshold 0.5, before the update.
    pub accuracy: f64,
}

/// A model with its optimizer state.
pub struct Trainer {
    pub model: UNet<f32>,
    pub optimizer: RmsProp<f32>,
}

impl Trainer {
    pub fn new(model: UNet<f32>, learning_rate: f64) -> Self {
        let n = model.param_count();
        Self {
            model,
            optimizer: RmsProp::new(learning_rate, n),
        }
    }

    /// One forward, backward and update. A non-finite loss leaves the
    /// weights untouched and is reported as `None`.
    pub fn step(&mut self, x: &Tensor<f32>, labels: &[f32]) -> Result<Option<StepStats>> {
        let cache = self.model.forward(x)?;
        let loss = bce_loss(&cache.probs.data, labels)? as f64;
        if !loss.is_finite() || cache.logits.data.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let accuracy = pixel_accuracy(&cache.probs.data, labels);
        let d = bce_grad(&cache.probs.data, labels)?;
        let dlogits = Tensor::from_vec(x.n, 1, x.h, x.w, d);
        let grads = self.model.backward(&cache, &dlogits);
        if grads.iter().any(|g| !g.is_finite()) {
            return Ok(None);
        }
        self.optimizer.step(&mut self.model.params, &grads);
        Ok(Some(StepStats { loss, accuracy }))
    }
}

fn pixel_accuracy(probs: &[f32], labels: &[f32]) -> f64 {
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &z)| (p >= 0.5) == (z >= 0.5))
        .count();
    correct as f64 / probs.len().max(1) as f64
}

/// Loss, pixel accuracy and mean per-image scores over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub iou: f64,
}

pub fn evaluate(model: &UNet<f32>, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(UnetError::EmptyDataset);
    }
    let (mut loss, mut correct, mut scores) = (0.0, 0.0, Vec::with_capacity(data.len()));
    let idx: Vec<usize> = (0..data.len()).collect();
    let side = data.side;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let probs = model.predict(&x)?;
        let n = y.len() as f64;
        loss += bce_loss(&probs.data, &y)? as f64 * n;
        correct += pixel_accuracy(&probs.data, &y) * n;
        for (k, &i) in chunk.iter().enumerate() {
            let px = &probs.data[k * side * side..(k + 1) * side * side];
            let pred = BinaryMask::new(side, side, px.iter().map(|&p| p >= 0.5).collect())?;
            scores.push(score_pair(&pred, &data.mask(i))?);
        }
    }
    let total = data.labels.len() as f64;
    let mean: Scores = mean_scores(&scores).unwrap_or_else(Scores::zero);
    Ok(Evaluation {
        loss: loss / total,
        accuracy: correct / total,
        f1: mean.f1,
        iou: mean.iou,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub val_iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainingHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochStats>, e| match best {
                Some(b) if b.val_f1 >= e.val_f1 => Some(b),
                _ => Some(e),
            })
    }
}

pub struct TrainOutcome {
    /// Weights after the last epoch.
    pub model: UNet<f32>,
    /// Weights from the epoch with the highest validation F1.
    pub best: UNet<f32>,
    pub best_epoch: Option<usize>,
    pub history: TrainingHistory,
}

/// Mini-batch training with per-epoch validation.
///
/// Batches are drawn from a per-epoch shuffle seeded by `config.seed`. When
/// `val` is empty the training set stands in for it. `on_epoch` sees each
/// epoch's statistics as soon as they are known.
pub fn train(
    model: UNet<f32>,
    train_set: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(UnetError::EmptyDataset);
    }
    let side = model.config().input_side;
    if train_set.side != side || (!val.is_empty() && val.side != side) {
        return Err(UnetError::Shape(format!(
            "datasets at side {} / {} for a network of side {side}",
            train_set.side, val.side
        )));
    }
    let val = if val.is_empty() {
        log::warn!("no validation data; scoring on the training set");
        train_set
    } else {
        val
    };

    let mut trainer = Trainer::new(model, config.learning_rate);
    let mut best = trainer.model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut loss, mut acc, mut seen) = (0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train_set.batch(chunk);
            let stats = trainer
                .step(&x, &y)?
                .ok_or(UnetError::Diverged { epoch, step })?;
            loss += stats.loss * chunk.len() as f64;
            acc += stats.accuracy * chunk.len() as f64;
            seen += chunk.len();
        }
        let v = evaluate(&trainer.model, val, config.batch_size)?;
        if !v.loss.is_finite() {
            return Err(UnetError::Diverged {
                epoch,
                step: order.len().div_ceil(config.batch_size),
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss / seen as f64,
            train_accuracy: acc / seen as f64,
            val_loss: v.loss,
            val_accuracy: v.accuracy,
            val_f1: v.f1,
            val_iou: v.iou,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} | val loss {:.4} acc {:.4} f1 {:.4} iou {:.4}",
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy,
            stats.val_f1,
            stats.val_iou
        );
        if stats.val_f1 > best_f1 {
            best_f1 = stats.val_f1;
            best = trainer.model.clone();
            best_epoch = Some(epoch);
        }
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        best,
        best_epoch,
        history,
    })
}
