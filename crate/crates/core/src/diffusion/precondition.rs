use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};
use crate::nn::Network;

/// EDM preconditioning coefficients:
/// `D(x; sigma) = c_skip x + c_out F(c_in x, c_noise)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precondition {
    pub sigma_data: f64,
}

pub const DEFAULT_SIGMA_DATA: f64 = 0.5;

impl Default for Precondition {
    fn default() -> Self {
        Self::new(DEFAULT_SIGMA_DATA)
    }
}

impl Precondition {
    pub fn new(sigma_data: f64) -> Self {
        Self { sigma_data }
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (sigma * sigma + sd2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        sigma * self.sigma_data / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        1.0 / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }

    pub fn c_noise(sigma: f64) -> f64 {
        sigma.ln() / 4.0
    }

    /// Training weight `lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma sigma_data)^2`.
    pub fn loss_weight(&self, sigma: f64) -> f64 {
        (sigma * sigma + self.sigma_data * self.sigma_data) / (sigma * self.sigma_data).powi(2)
    }
}

/// Stacks `scales[i] * x_i` with a constant plane holding `noise_feature[i]`,
/// giving items of `channels + 1` channels.
pub fn with_noise_channel(x: &ImageBatch, scales: &[f64], noise_feature: &[f64]) -> Result<ImageBatch> {
    let shape = x.shape();
    let in_shape = ItemShape::new(shape.channels + 1, shape.height, shape.width);
    let mut data = Vec::with_capacity(x.len() * in_shape.len());
    for (i, item) in x.items().take(x.len()).enumerate() {
        data.extend(item.iter().map(|v| v * scales[i]));
        data.extend(std::iter::repeat_n(noise_feature[i], shape.plane()));
    }
    ImageBatch::from_vec(x.len(), in_shape, data)
}

/// Evaluates the preconditioned denoiser with a possibly different noise level per item.
pub fn precondition_apply_per_item(
    net: &Network,
    x: &ImageBatch,
    sigmas: &[f64],
    pre: &Precondition,
) -> Result<ImageBatch> {
    if sigmas.len() != x.len() {
        return Err(Error::Length {
            expected: x.len(),
            got: sigmas.len(),
        });
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::InvalidArgument(format!("preconditioning needs sigma > 0, got {s}")));
    }
    let c_in: Vec<f64> = sigmas.iter().map(|&s| pre.c_in(s)).collect();
    let c_noise: Vec<f64> = sigmas.iter().map(|&s| Precondition::c_noise(s)).collect();
    let input = with_noise_channel(x, &c_in, &c_noise)?;
    let f = net.forward_eval(&input)?;
    if f.item_len() != x.item_len() {
        return Err(Error::Shape(format!(
            "network output {} does not match denoiser item {}",
            f.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    let len = x.item_len();
    for (i, (o, fi)) in out
        .as_mut_slice()
        .chunks_exact_mut(len)
        .zip(f.as_slice().chunks_exact(len))
        .enumerate()
    {
        let (skip, cout) = (pre.c_skip(sigmas[i]), pre.c_out(sigmas[i]));
        for (ov, fv) in o.iter_mut().zip(fi) {
            *ov = skip * *ov + cout * fv;
        }
    }
    Ok(out)
}

pub fn precondition_apply(net: &Network, x: &ImageBatch, sigma: f64, pre: &Precondition) -> Result<ImageBatch> {
    precondition_apply_per_item(net, x, &vec![sigma; x.len()], pre)
}
