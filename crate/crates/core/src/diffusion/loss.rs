use rand::Rng;

use super::denoiser::Denoiser;
use super::precondition::{with_noise_channel, Precondition};
use super::schedule::NoiseSchedule;
use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::{Mode, Network, Tape};
use crate::rng::fill_normal;

/// `mean_i lambda(sigma_i) * ||denoised_i - clean_i||^2`.
pub fn weighted_denoising_loss(
    denoised: &ImageBatch,
    clean: &ImageBatch,
    sigmas: &[f64],
    pre: &Precondition,
) -> Result<f64> {
    if !denoised.same_layout(clean) || sigmas.len() != clean.len() {
        return Err(Error::Shape("denoised, clean and sigma counts must agree".into()));
    }
    let total: f64 = denoised
        .items()
        .zip(clean.items())
        .zip(sigmas)
        .map(|((d, c), &s)| pre.loss_weight(s) * d.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    Ok(total / clean.len() as f64)
}

/// EDM denoising loss for explicit noise levels and noise draws, with its
/// gradient with respect to the network parameters.
pub fn edm_loss_with<R: Rng + ?Sized>(
    net: &Network,
    pre: &Precondition,
    clean: &ImageBatch,
    sigmas: &[f64],
    noise: &ImageBatch,
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if clean.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if !noise.same_layout(clean) || sigmas.len() != clean.len() {
        return Err(Error::Shape("clean, noise and sigma counts must agree".into()));
    }
    let n = clean.len();
    let len = clean.item_len();
    let mut noisy = clean.clone();
    for (i, (y, e)) in noisy
        .as_mut_slice()
        .chunks_exact_mut(len)
        .zip(noise.as_slice().chunks_exact(len))
        .enumerate()
    {
        for (yv, ev) in y.iter_mut().zip(e) {
            *yv += sigmas[i] * ev;
        }
    }
    let c_in: Vec<f64> = sigmas.iter().map(|&s| pre.c_in(s)).collect();
    let c_noise: Vec<f64> = sigmas.iter().map(|&s| Precondition::c_noise(s)).collect();
    let input = with_noise_channel(&noisy, &c_in, &c_noise)?;
    let mut tape = Tape::new();
    let f = net.forward_with_tape(&input, mode, rng, &mut tape)?;
    if f.item_len() != len {
        return Err(Error::Shape(format!("network output {} vs data {}", f.shape(), clean.shape())));
    }
    let mut loss = 0.0;
    let mut upstream = ImageBatch::zeros(n, f.shape());
    for i in 0..n {
        let s = sigmas[i];
        let (skip, cout, lambda) = (pre.c_skip(s), pre.c_out(s), pre.loss_weight(s));
        let (y, x, fi) = (noisy.item(i), clean.item(i), f.item(i));
        let up = upstream.item_mut(i);
        for k in 0..len {
            let r = skip * y[k] + cout * fi[k] - x[k];
            loss += lambda * r * r;
            up[k] = 2.0 * lambda * cout * r / n as f64;
        }
    }
    let grads = net.backward(&tape, &upstream)?;
    Ok((loss / n as f64, grads.params))
}

/// Draws per-item noise levels from the schedule's training distribution and
/// Gaussian noise, then evaluates [`edm_loss_with`] in training mode.
pub fn edm_train_loss<R: Rng + ?Sized>(
    d: &Denoiser,
    batch: &ImageBatch,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let Denoiser::Neural(nd) = d else {
        return Err(Error::NotNeural);
    };
    let sigmas: Vec<f64> = (0..batch.len()).map(|_| schedule.sample_training_sigma(rng)).collect();
    let mut noise = ImageBatch::zeros(batch.len(), batch.shape());
    fill_normal(rng, noise.as_mut_slice());
    edm_loss_with(&nd.net, &Precondition::new(nd.sigma_data), batch, &sigmas, &noise, Mode::Train, rng)
}
