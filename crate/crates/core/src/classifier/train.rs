use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, predict_with, Layout, ModelParams, TrainMeta};
use crate::error::{Error, Result};
use crate::iip::{bin_class, ClassId};
use crate::tiling::{DatasetMeta, PixelDataset, PixelSample, Split, TilingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    SgdMomentum,
}

pub const MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.02,
            optimizer: Optimizer::SgdMomentum,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("train.learning_rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy of the train split, measured during the epoch.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:e},{}\n", e.epoch, e.train_loss, e.val_accuracy));
        }
        s
    }
}

/// Accuracy of `weights` over a set of samples.
pub(crate) fn accuracy(layout: &Layout, weights: &[f32], samples: &[(&[f32], ClassId)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for &(img, label) in samples {
        correct += (predict_with(layout, weights, img)? == label) as usize;
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mini-batch SGD with momentum over the train split. Batch order comes
/// from one seeded RNG, batches run sequentially and per-sample losses are
/// summed in sample order, so a fixed seed reproduces history and weights
/// bit for bit. Returns the weights of the epoch with the best validation
/// accuracy (earliest on ties).
pub fn train(model: &ModelParams, d: &PixelDataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let layout = model.layout()?;
    if model.arch.input_side != d.image_side {
        return Err(Error::Shape(format!(
            "model input side {} but dataset images are {}",
            model.arch.input_side, d.image_side
        )));
    }
    if model.arch.num_classes != d.meta.num_classes {
        return Err(Error::Shape(format!(
            "model has {} classes but dataset has {}",
            model.arch.num_classes, d.meta.num_classes
        )));
    }
    let train_set: Vec<(&[f32], ClassId)> =
        d.split(Split::Train).map(|s| (s.image.as_slice(), s.label)).collect();
    let val_set: Vec<(&[f32], ClassId)> =
        d.split(Split::Val).map(|s| (s.image.as_slice(), s.label)).collect();
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("no validation samples".into()));
    }

    let lr = cfg.learning_rate as f32;
    let mut weights = model.weights.clone();
    let mut velocity = vec![0.0f32; weights.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut sample_loss = vec![0.0f64; train_set.len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f32], ClassId)> = chunk.iter().map(|&i| train_set[i]).collect();
            let (grad, losses) = backward(&layout, &weights, &batch)?;
            for (&i, l) in chunk.iter().zip(losses) {
                sample_loss[i] = l;
            }
            for ((w, v), g) in weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = MOMENTUM * *v + g;
                *w -= lr * *v;
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                step: epoch,
                loss: f64::NAN,
            });
        }
        let train_loss = sample_loss.iter().sum::<f64>() / train_set.len() as f64;
        let val_accuracy = accuracy(&layout, &weights, &val_set)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy,
        });
        if best.as_ref().map_or(true, |(acc, ..)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, weights.clone()));
        }
    }

    let (best_acc, best_epoch, best_weights) = best.expect("at least one epoch");
    Ok((
        ModelParams {
            arch: model.arch.clone(),
            weights: best_weights,
            seed: model.seed,
            train_meta: TrainMeta {
                epochs: cfg.epochs,
                learning_rate: cfg.learning_rate,
                final_val_accuracy: best_acc,
            },
        },
        TrainHistory {
            epochs: history,
            best_epoch,
        },
    ))
}

/// Synthetic task that is learnable by construction: each image is a
/// uniform brightness plus small noise and its label is the class bin of
/// the image mean. Samples cycle through train, val and test 3:1:1.
pub fn brightness_task(n: usize, side: usize, classes: usize, seed: u64) -> Result<PixelDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let level: f32 = rng.gen_range(0.05..0.95);
        let image: Vec<f32> = (0..side * side)
            .map(|_| (level + rng.gen_range(-0.05f32..0.05)).clamp(0.0, 1.0))
            .collect();
        let mean = image.iter().map(|&v| v as f64).sum::<f64>() / image.len() as f64;
        samples.push(PixelSample {
            label: bin_class(mean, classes)?,
            image,
            coord: (i as u32, 0),
            source: 0,
            split: match i % 5 {
                0..=2 => Split::Train,
                3 => Split::Val,
                _ => Split::Test,
            },
        });
    }
    Ok(PixelDataset {
        image_side: side,
        samples,
        meta: DatasetMeta {
            tiling: TilingConfig::default(),
            num_classes: classes,
            iik_checksum: String::new(),
            sources: Vec::new(),
        },
    })
}
