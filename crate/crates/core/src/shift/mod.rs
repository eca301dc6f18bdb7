//! Real-vs-generated classifiers as a distribution-shift probe.
//!
//! Accuracy near 1/2 on held-out data means the classifier cannot tell the
//! two sets apart; accuracy above it quantifies the shift.

mod augment;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{apply_augment, augment, AugmentDraw};

use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};
use crate::nn::{adam_step, bce_loss, sigmoid, Activation, AdamState, Layer, Mode, Network, Tape};
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Linear,
    /// Small stand-in for ResNet-18: four conv-relu blocks, global pooling, dense head.
    Convnet,
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierKind::Linear => "linear",
            ClassifierKind::Convnet => "convnet",
        })
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ClassifierKind::Linear),
            "convnet" => Ok(ClassifierKind::Convnet),
            _ => Err(Error::Parse(format!("unknown classifier {s:?} (expected linear or convnet)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftStudyConfig {
    pub classifier: ClassifierKind,
    pub augment: bool,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Training fraction of each class.
    pub split: f64,
    pub seed: u64,
}

impl Default for ShiftStudyConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierKind::Linear,
            augment: false,
            epochs: 50,
            lr: 1e-4,
            batch_size: 64,
            split: 0.9,
            seed: 0,
        }
    }
}

impl ShiftStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidArgument(format!("split must be in (0, 1), got {}", self.split)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Logit-producing network for the given classifier kind.
pub fn classifier_network(kind: ClassifierKind, shape: ItemShape, seed: u64) -> Result<Network> {
    let layers = match kind {
        ClassifierKind::Linear => vec![Layer::Flatten, Layer::Dense { inputs: shape.len(), outputs: 1 }],
        ClassifierKind::Convnet => {
            let widths = [shape.channels, 8, 16, 16, 32];
            let mut layers = Vec::new();
            for b in 0..4 {
                layers.push(Layer::Conv {
                    in_channels: widths[b],
                    out_channels: widths[b + 1],
                    kernel: 3,
                    stride: if b == 0 { 1 } else { 2 },
                });
                layers.push(Layer::Activation(Activation::Relu));
            }
            layers.push(Layer::GlobalAvgPool);
            layers.push(Layer::Dense { inputs: 32, outputs: 1 });
            layers
        }
    };
    Network::init(layers, seed)
}

/// Stratified split of `n` items: the first `fraction` of a seeded permutation
/// trains. Both classes use the same permutation for equal sizes, so paired
/// datasets split identically.
pub fn stratified_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split, n as u64));
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InsufficientData(format!(
            "split of {n} items at {fraction} leaves an empty side"
        )));
    }
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct ShiftResult {
    pub model: Network,
    /// Epoch with the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub log: Vec<ClassifierEpoch>,
}

fn accuracy(net: &Network, x: &ImageBatch, labels: &[f64]) -> Result<f64> {
    let logits = net.forward_eval(x)?;
    let correct = logits
        .as_slice()
        .iter()
        .zip(labels)
        .filter(|(l, y)| (**l >= 0.0) == (**y == 1.0))
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Trains a classifier to output 1 on `real` and 0 on `generated` with BCE and Adam.
pub fn train_shift_classifier(real: &ImageBatch, generated: &ImageBatch, cfg: &ShiftStudyConfig) -> Result<ShiftResult> {
    cfg.validate()?;
    if real.is_empty() || generated.is_empty() {
        return Err(Error::InsufficientData("classifier needs non-empty real and generated sets".into()));
    }
    if real.shape() != generated.shape() {
        return Err(Error::Shape(format!(
            "real items {} vs generated items {}",
            real.shape(),
            generated.shape()
        )));
    }
    let shape = real.shape();
    let (real_train, real_val) = stratified_split(real.len(), cfg.split, cfg.seed)?;
    let (gen_train, gen_val) = stratified_split(generated.len(), cfg.split, cfg.seed)?;
    let train_x = ImageBatch::concat(&[&real.select(&real_train), &generated.select(&gen_train)])?;
    let train_y: Vec<f64> = (0..train_x.len()).map(|i| f64::from(u8::from(i < real_train.len()))).collect();
    let val_x = ImageBatch::concat(&[&real.select(&real_val), &generated.select(&gen_val)])?;
    let val_y: Vec<f64> = (0..val_x.len()).map(|i| f64::from(u8::from(i < real_val.len()))).collect();

    let mut net = classifier_network(cfg.classifier, shape, derive_seed(cfg.seed, Stream::Init, 0))?;
    let mut adam = AdamState::new(net.param_count(), cfg.lr);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut tape = Tape::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = (0usize, f64::NEG_INFINITY, net.clone());
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, Stream::Training, epoch as u64);
        let mut aug_rng = stream_rng(cfg.seed, Stream::Augment, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = train_x.select(chunk);
            if cfg.augment {
                for i in 0..batch.len() {
                    let a = augment(batch.item(i), shape, &mut aug_rng);
                    batch.item_mut(i).copy_from_slice(&a);
                }
            }
            let labels: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let logits = net.forward_with_tape(&batch, Mode::Train, &mut rng, &mut tape)?;
            let p: Vec<f64> = logits.as_slice().iter().map(|&l| sigmoid(l)).collect();
            let (loss, _) = bce_loss(&p, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("classifier training loss"));
            }
            let n = p.len() as f64;
            let mut upstream = logits.map(|_| 0.0);
            for ((u, pi), yi) in upstream.as_mut_slice().iter_mut().zip(&p).zip(&labels) {
                *u = (pi - yi) / n;
            }
            let grads = net.backward(&tape, &upstream)?;
            adam_step(net.params_mut(), &grads.params, &mut adam)?;
            total += loss;
            batches += 1;
        }
        let val_accuracy = accuracy(&net, &val_x, &val_y)?;
        if val_accuracy > best.1 {
            best = (epoch, val_accuracy, net.clone());
        }
        log.push(ClassifierEpoch {
            epoch,
            train_loss: total / batches as f64,
            val_accuracy,
        });
    }
    let final_accuracy = log.last().map(|e| e.val_accuracy).unwrap_or(0.0);
    Ok(ShiftResult {
        model: best.2,
        best_epoch: best.0,
        best_accuracy: best.1,
        final_accuracy,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub classifier: ClassifierKind,
    pub augment: bool,
    pub phase: Phase,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub final_accuracy: f64,
}

pub const SHIFT_HEADER: &str = "classifier,augment,phase,seed,best_epoch,val_accuracy";

/// Runs every (config, phase) cell in parallel. Rows come back in config
/// order with `pre` before `post`.
pub fn shift_report(
    real: &ImageBatch,
    gen_pre: &ImageBatch,
    gen_post: &ImageBatch,
    cfgs: &[ShiftStudyConfig],
) -> Result<Vec<ShiftRow>> {
    if real.is_empty() || gen_pre.is_empty() || gen_post.is_empty() {
        return Err(Error::InsufficientData("shift report needs non-empty datasets".into()));
    }
    let cells: Vec<(ShiftStudyConfig, Phase)> = cfgs
        .iter()
        .flat_map(|c| [(*c, Phase::Pre), (*c, Phase::Post)])
        .collect();
    cells
        .par_iter()
        .map(|(cfg, phase)| {
            let gen = match phase {
                Phase::Pre => gen_pre,
                Phase::Post => gen_post,
            };
            let r = train_shift_classifier(real, gen, cfg)?;
            Ok(ShiftRow {
                classifier: cfg.classifier,
                augment: cfg.augment,
                phase: *phase,
                seed: cfg.seed,
                best_epoch: r.best_epoch,
                val_accuracy: r.best_accuracy,
                final_accuracy: r.final_accuracy,
            })
        })
        .collect()
}

pub fn write_shift_csv(rows: &[ShiftRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{SHIFT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.classifier, r.augment, r.phase, r.seed, r.best_epoch, r.val_accuracy
        )?;
    }
    Ok(())
}
