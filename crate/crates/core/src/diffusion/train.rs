use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::loss::edm_loss_with;
use super::precondition::Precondition;
use super::schedule::NoiseSchedule;
use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Layer, Mode, Network};
use crate::rng::{fill_normal, stream_rng, Stream};

/// Small stand-in for the U-Net: an MLP for vector data, a same-resolution
/// conv stack for images. Input carries one extra noise-embedding channel.
pub fn denoiser_network(shape: ItemShape, hidden: usize, dropout: f64, seed: u64) -> Result<Network> {
    let c = shape.channels;
    let layers = if shape.plane() == 1 {
        vec![
            Layer::Flatten,
            Layer::Dense { inputs: c + 1, outputs: hidden },
            Layer::Activation(Activation::Silu),
            Layer::Dropout { rate: dropout },
            Layer::Dense { inputs: hidden, outputs: hidden },
            Layer::Activation(Activation::Silu),
            Layer::Dense { inputs: hidden, outputs: c },
        ]
    } else {
        vec![
            Layer::Conv { in_channels: c + 1, out_channels: hidden, kernel: 3, stride: 1 },
            Layer::Activation(Activation::Silu),
            Layer::Dropout { rate: dropout },
            Layer::Conv { in_channels: hidden, out_channels: hidden, kernel: 3, stride: 1 },
            Layer::Activation(Activation::Silu),
            Layer::Conv { in_channels: hidden, out_channels: c, kernel: 3, stride: 1 },
        ]
    };
    Network::init(layers, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub sigma_data: f64,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 512,
            dropout: 0.05,
            hidden: 64,
            sigma_data: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    /// Loss on a fixed held-in probe set with frozen noise draws.
    pub eval_loss: f64,
}

pub struct DenoiserTraining {
    pub denoiser: Denoiser,
    /// Network after each epoch.
    pub checkpoints: Vec<Network>,
    pub log: Vec<EpochLoss>,
}

const PROBE_ITEMS: usize = 512;

pub fn train_denoiser(data: &ImageBatch, schedule: &NoiseSchedule, cfg: &DenoiserTrainConfig) -> Result<DenoiserTraining> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
    }
    schedule.validate()?;
    let pre = Precondition::new(cfg.sigma_data);
    let mut net = denoiser_network(data.shape(), cfg.hidden, cfg.dropout, cfg.seed)?;
    let mut adam = AdamState::new(net.param_count(), cfg.lr);

    // Frozen probe: first items, fixed sigmas and noise.
    let probe_idx: Vec<usize> = (0..data.len().min(PROBE_ITEMS)).collect();
    let probe = data.select(&probe_idx);
    let mut probe_rng = stream_rng(cfg.seed, Stream::Protocol, 0);
    let probe_sigmas: Vec<f64> = (0..probe.len()).map(|_| schedule.sample_training_sigma(&mut probe_rng)).collect();
    let mut probe_noise = ImageBatch::zeros(probe.len(), probe.shape());
    fill_normal(&mut probe_rng, probe_noise.as_mut_slice());

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, Stream::Training, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let sigmas: Vec<f64> = (0..batch.len()).map(|_| schedule.sample_training_sigma(&mut rng)).collect();
            let mut noise = ImageBatch::zeros(batch.len(), batch.shape());
            fill_normal(&mut rng, noise.as_mut_slice());
            let (loss, grads) = edm_loss_with(&net, &pre, &batch, &sigmas, &noise, Mode::Train, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("denoiser training loss"));
            }
            adam_step(net.params_mut(), &grads, &mut adam)?;
            total += loss;
            batches += 1;
        }
        let (eval_loss, _) = edm_loss_with(&net, &pre, &probe, &probe_sigmas, &probe_noise, Mode::Eval, &mut rng)?;
        log.push(EpochLoss {
            epoch,
            train_loss: total / batches as f64,
            eval_loss,
        });
        checkpoints.push(net.clone());
    }
    Ok(DenoiserTraining {
        denoiser: Denoiser::neural(net, cfg.sigma_data, data.shape())?,
        checkpoints,
        log,
    })
}
