use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::discriminator::{discriminator_network, Discriminator, NeuralDiscriminator};
use crate::batch::ImageBatch;
use crate::diffusion::{with_noise_channel, NoiseSchedule, Precondition};
use crate::error::{Error, Result};
use crate::nn::{adam_step, bce_loss, sigmoid, AdamState, Layer, Mode, Network, Tape};
use crate::rng::{fill_normal, stream_rng, Stream};
use crate::shift::stratified_split;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    /// Fraction of each class used for training; the rest is validation.
    pub train_fraction: f64,
    pub sigma_data: f64,
    pub seed: u64,
}

impl Default for DiscriminatorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 128,
            hidden: 32,
            train_fraction: 0.9,
            sigma_data: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub struct DiscriminatorTraining {
    pub discriminator: Discriminator,
    pub checkpoints: Vec<Network>,
    /// Validation BCE of the untrained network.
    pub initial_loss: f64,
    pub log: Vec<DiscriminatorEpoch>,
}

/// Noisy examples with a per-item noise level and a 0/1 label.
struct Noised {
    x: ImageBatch,
    sigmas: Vec<f64>,
    labels: Vec<f64>,
}

fn noised<R: rand::Rng + ?Sized>(x: ImageBatch, labels: Vec<f64>, schedule: &NoiseSchedule, rng: &mut R) -> Noised {
    let sigmas: Vec<f64> = (0..x.len()).map(|_| schedule.sample_training_sigma(rng)).collect();
    let mut noise = ImageBatch::zeros(x.len(), x.shape());
    fill_normal(rng, noise.as_mut_slice());
    let mut x = x;
    let len = x.item_len();
    for (i, (xi, ni)) in x.as_mut_slice().chunks_exact_mut(len).zip(noise.items()).enumerate() {
        for (a, b) in xi.iter_mut().zip(ni) {
            *a += sigmas[i] * b;
        }
    }
    Noised { x, sigmas, labels }
}

fn network_input(batch: &Noised, pre: &Precondition) -> Result<ImageBatch> {
    let c_in: Vec<f64> = batch.sigmas.iter().map(|&s| pre.c_in(s)).collect();
    let c_noise: Vec<f64> = batch.sigmas.iter().map(|&s| Precondition::c_noise(s)).collect();
    with_noise_channel(&batch.x, &c_in, &c_noise)
}

fn evaluate(net: &Network, batch: &Noised, pre: &Precondition) -> Result<(f64, f64)> {
    let logits = net.forward_eval(&network_input(batch, pre)?)?;
    let p: Vec<f64> = logits.as_slice().iter().map(|&l| sigmoid(l)).collect();
    let (loss, _) = bce_loss(&p, &batch.labels)?;
    let correct = p
        .iter()
        .zip(&batch.labels)
        .filter(|(p, y)| (**p >= 0.5) == (**y == 1.0))
        .count();
    Ok((loss, correct as f64 / p.len() as f64))
}

/// Trains a neural discriminator on noisy real (label 1) vs generated (label 0)
/// samples, one noise level per example drawn from the schedule's training
/// distribution. Every epoch's weights are retained.
pub fn train_discriminator(
    real: &ImageBatch,
    generated: &ImageBatch,
    schedule: &NoiseSchedule,
    cfg: &DiscriminatorTrainConfig,
) -> Result<DiscriminatorTraining> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::InsufficientData("discriminator needs non-empty real and generated sets".into()));
    }
    if real.shape() != generated.shape() {
        return Err(Error::Shape(format!(
            "real items {} vs generated items {}",
            real.shape(),
            generated.shape()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidArgument("epochs, batch_size and hidden must be positive".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {}",
            cfg.train_fraction
        )));
    }
    schedule.validate()?;
    let shape = real.shape();
    let pre = Precondition::new(cfg.sigma_data);

    let (real_train, real_val) = stratified_split(real.len(), cfg.train_fraction, cfg.seed)?;
    let (gen_train, gen_val) = stratified_split(generated.len(), cfg.train_fraction, cfg.seed)?;
    let train_x = ImageBatch::concat(&[&real.select(&real_train), &generated.select(&gen_train)])?;
    let train_y: Vec<f64> = (0..train_x.len())
        .map(|i| if i < real_train.len() { 1.0 } else { 0.0 })
        .collect();
    let val_x = ImageBatch::concat(&[&real.select(&real_val), &generated.select(&gen_val)])?;
    let val_y: Vec<f64> = (0..val_x.len()).map(|i| if i < real_val.len() { 1.0 } else { 0.0 }).collect();
    let val = noised(val_x, val_y, schedule, &mut stream_rng(cfg.seed, Stream::Protocol, 1));

    let mut net = discriminator_network(shape, cfg.hidden, cfg.seed)?;
    // Zero the output head so the untrained discriminator says 1/2 everywhere.
    if let (Some(Layer::Dense { .. }), Some(range)) = (net.layers().last(), net.param_layout().last().cloned()) {
        net.params_mut()[range].fill(0.0);
    }
    let (initial_loss, _) = evaluate(&net, &val, &pre)?;
    let mut adam = AdamState::new(net.param_count(), cfg.lr);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut tape = Tape::new();
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, Stream::Training, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let labels: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            let batch = noised(train_x.select(chunk), labels, schedule, &mut rng);
            let input = network_input(&batch, &pre)?;
            let logits = net.forward_with_tape(&input, Mode::Train, &mut rng, &mut tape)?;
            let p: Vec<f64> = logits.as_slice().iter().map(|&l| sigmoid(l)).collect();
            let (loss, _) = bce_loss(&p, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("discriminator training loss"));
            }
            // d BCE / d logit = (p - y) / n, without the probability clamp.
            let n = p.len() as f64;
            let mut upstream = logits.map(|_| 0.0);
            for ((u, pi), yi) in upstream.as_mut_slice().iter_mut().zip(&p).zip(&batch.labels) {
                *u = (pi - yi) / n;
            }
            let grads = net.backward(&tape, &upstream)?;
            adam_step(net.params_mut(), &grads.params, &mut adam)?;
            total += loss;
            batches += 1;
        }
        let (val_loss, val_accuracy) = evaluate(&net, &val, &pre)?;
        log.push(DiscriminatorEpoch {
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            val_accuracy,
        });
        checkpoints.push(net.clone());
    }
    Ok(DiscriminatorTraining {
        discriminator: Discriminator::Neural(NeuralDiscriminator::new(net, shape, cfg.sigma_data)?),
        checkpoints,
        initial_loss,
        log,
    })
}

/// Index of the smallest value; ties go to the earliest index.
pub fn select_best_epoch(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints to select from".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("epoch selection metric"));
    }
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSelection {
    pub best: usize,
    pub fids: Vec<f64>,
}

/// Scores every checkpoint with `evaluate` (typically guided FID at desk scale)
/// and returns the argmin together with the per-epoch table.
pub fn epoch_selection<T>(checkpoints: &[T], mut evaluate: impl FnMut(usize, &T) -> Result<f64>) -> Result<EpochSelection> {
    let fids = checkpoints
        .iter()
        .enumerate()
        .map(|(i, c)| evaluate(i, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochSelection {
        best: select_best_epoch(&fids)?,
        fids,
    })
}
