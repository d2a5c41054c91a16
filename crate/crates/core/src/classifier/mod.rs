//! Small convolutional per-pixel classifier.
//!
//! Architecture: a stack of 3x3 same-padded convolutions with ReLU, each
//! with its own stride, then either global average pooling or flattening,
//! then a dense head to class logits and softmax. The architecture is plain
//! data ([`ArchDescriptor`]) so alternates can be configured without code.

mod io;
mod knn;
mod net;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use knn::knn_predict;
pub use net::{backward, forward, loss, Gradients, Layout};
pub use train::{brightness_task, train, EpochStats, Optimizer, TrainConfig, TrainHistory};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iip::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    GlobalAverage,
    /// Keeps spatial position: the head sees every final activation.
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub input_side: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub pool: Pool,
    pub num_classes: usize,
}

impl ArchDescriptor {
    /// Three stride-2 blocks of 8, 16 and 32 filters with global average
    /// pooling.
    pub fn default_for(input_side: usize, num_classes: usize) -> Self {
        ArchDescriptor {
            input_side,
            conv_blocks: [8, 16, 32]
                .into_iter()
                .map(|filters| ConvBlock { filters, stride: 2 })
                .collect(),
            pool: Pool::GlobalAverage,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::Arch("at least one conv block is required".into()));
        }
        if self.input_side == 0 {
            return Err(Error::Arch("input_side must be >= 1".into()));
        }
        if self.num_classes < 2 || self.num_classes > ClassId::MAX as usize {
            return Err(Error::Arch(format!(
                "num_classes must lie in [2, {}], got {}",
                ClassId::MAX,
                self.num_classes
            )));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.stride == 0 {
                return Err(Error::Arch(format!(
                    "conv block {i} needs filters >= 1 and stride >= 1"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ArchDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks: Vec<String> = self
            .conv_blocks
            .iter()
            .map(|b| format!("{}/{}", b.filters, b.stride))
            .collect();
        let pool = match self.pool {
            Pool::GlobalAverage => "global_average",
            Pool::Flatten => "flatten",
        };
        write!(
            f,
            "input={} classes={} pool={} blocks={}",
            self.input_side,
            self.num_classes,
            pool,
            blocks.join(",")
        )
    }
}

impl FromStr for ArchDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad architecture descriptor {s:?}"));
        let (mut input, mut classes, mut pool, mut blocks) = (None, None, None, None);
        for part in s.split_whitespace() {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "input" => input = Some(v.parse().map_err(|_| bad())?),
                "classes" => classes = Some(v.parse().map_err(|_| bad())?),
                "pool" => {
                    pool = Some(match v {
                        "global_average" => Pool::GlobalAverage,
                        "flatten" => Pool::Flatten,
                        _ => return Err(bad()),
                    })
                }
                "blocks" => {
                    let mut out = Vec::new();
                    for b in v.split(',').filter(|b| !b.is_empty()) {
                        let (f, st) = b.split_once('/').ok_or_else(bad)?;
                        out.push(ConvBlock {
                            filters: f.parse().map_err(|_| bad())?,
                            stride: st.parse().map_err(|_| bad())?,
                        });
                    }
                    blocks = Some(out);
                }
                _ => return Err(bad()),
            }
        }
        Ok(ArchDescriptor {
            input_side: input.ok_or_else(bad)?,
            num_classes: classes.ok_or_else(bad)?,
            pool: pool.ok_or_else(bad)?,
            conv_blocks: blocks.ok_or_else(bad)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub final_val_accuracy: f64,
}

/// Architecture plus flat f32 weights in declaration order: for each conv
/// block `weights[out][in][3][3]` then `bias[out]`, then the head's
/// `weights[class][feature]` and `bias[class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchDescriptor,
    pub weights: Vec<f32>,
    pub seed: u64,
    pub train_meta: TrainMeta,
}

/// Seeded fan-in scaled uniform initialization; biases start at zero.
pub fn init_model(arch: &ArchDescriptor, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let layout = Layout::new(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0f32; layout.total];
    for conv in &layout.convs {
        let fan_in = (conv.in_channels * 9) as f32;
        let bound = (6.0 / fan_in).sqrt();
        for w in &mut weights[conv.w_off..conv.b_off] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    let head = &layout.head;
    let bound = (3.0 / head.features as f32).sqrt();
    for w in &mut weights[head.w_off..head.b_off] {
        *w = rng.gen_range(-bound..bound);
    }
    Ok(ModelParams {
        arch: arch.clone(),
        weights,
        seed,
        train_meta: TrainMeta::default(),
    })
}

impl ModelParams {
    pub fn layout(&self) -> Result<Layout> {
        Layout::new(&self.arch)
    }

    /// Class probabilities and logits for one image.
    pub fn forward(&self, image: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        let layout = self.layout()?;
        let out = forward(&layout, &self.weights, image)?;
        Ok((out.probs, out.logits))
    }

    pub fn predict(&self, image: &[f32]) -> Result<ClassId> {
        let layout = self.layout()?;
        predict_with(&layout, &self.weights, image)
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w as f64).collect()
    }

    /// Zeroes the dense head so every input gets uniform probabilities.
    pub fn zero_head(&mut self) -> Result<()> {
        let layout = self.layout()?;
        self.weights[layout.head.w_off..].fill(0.0);
        Ok(())
    }

    pub fn checksum(&self) -> String {
        crate::checksum::digest_f32s(&self.weights)
    }
}

/// Argmax of the logits with ties going to the lower class.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> ClassId {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best as ClassId
}

/// Prediction with a prebuilt layout, for hot loops.
pub fn predict_with(layout: &Layout, weights: &[f32], image: &[f32]) -> Result<ClassId> {
    let out = forward(layout, weights, image)?;
    Ok(argmax(&out.logits))
}
