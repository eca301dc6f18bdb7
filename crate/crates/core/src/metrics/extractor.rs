use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Network};
use crate::rng::{derive_seed, fill_normal, rng_from_seed, Stream};

/// Items pushed through the random conv net at once.
const CONV_BLOCK: usize = 256;

/// Deterministic feature maps standing in for a pretrained embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureExtractor {
    /// Pixels, optionally average-pooled by an integer factor.
    RawPixels { downsample: usize },
    /// Gaussian random projection to `dim` features.
    RandomProjection { dim: usize, seed: u64 },
    /// Fixed random two-block conv net with global pooling and a dense head.
    RandomConv { seed: u64, dim: usize },
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::RawPixels { downsample: 1 }
    }
}

impl fmt::Display for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureExtractor::RawPixels { downsample } => write!(f, "raw_pixels(downsample={downsample})"),
            FeatureExtractor::RandomProjection { dim, seed } => write!(f, "random_projection(dim={dim},seed={seed})"),
            FeatureExtractor::RandomConv { seed, dim } => write!(f, "random_conv(seed={seed},dim={dim})"),
        }
    }
}

impl FeatureExtractor {
    /// Identity string stamped into result records and stats caches.
    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FeatureExtractor::RawPixels { downsample } => downsample >= 1,
            FeatureExtractor::RandomProjection { dim, .. } | FeatureExtractor::RandomConv { dim, .. } => dim >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid feature extractor {self}")))
        }
    }

    pub fn extract(&self, x: &ImageBatch) -> Result<ImageBatch> {
        self.validate()?;
        match *self {
            FeatureExtractor::RawPixels { downsample } => downsample_pixels(x, downsample),
            FeatureExtractor::RandomProjection { dim, seed } => random_projection(x, dim, seed),
            FeatureExtractor::RandomConv { seed, dim } => random_conv(x, seed, dim),
        }
    }
}

fn downsample_pixels(x: &ImageBatch, factor: usize) -> Result<ImageBatch> {
    let s = x.shape();
    if factor == 1 {
        return x.clone().reshaped(ItemShape::vector(s.len()));
    }
    if !s.height.is_multiple_of(factor) || !s.width.is_multiple_of(factor) {
        return Err(Error::Shape(format!("{s} is not divisible by downsample factor {factor}")));
    }
    let (oh, ow) = (s.height / factor, s.width / factor);
    let out_len = s.channels * oh * ow;
    let norm = 1.0 / (factor * factor) as f64;
    let mut data = vec![0.0; x.len() * out_len];
    data.par_chunks_mut(out_len).zip(x.as_slice().par_chunks(s.len())).for_each(|(o, item)| {
        for c in 0..s.channels {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for di in 0..factor {
                        let row = (c * s.height + i * factor + di) * s.width + j * factor;
                        acc += item[row..row + factor].iter().sum::<f64>();
                    }
                    o[(c * oh + i) * ow + j] = acc * norm;
                }
            }
        }
    });
    ImageBatch::from_vec(x.len(), ItemShape::vector(out_len), data)
}

fn random_projection(x: &ImageBatch, dim: usize, seed: u64) -> Result<ImageBatch> {
    let d = x.item_len();
    let mut w = vec![0.0; dim * d];
    fill_normal(&mut rng_from_seed(derive_seed(seed, Stream::Features, d as u64)), &mut w);
    let scale = 1.0 / (d as f64).sqrt();
    let mut data = vec![0.0; x.len() * dim];
    data.par_chunks_mut(dim).zip(x.as_slice().par_chunks(d)).for_each(|(o, item)| {
        for (k, ok) in o.iter_mut().enumerate() {
            *ok = scale * w[k * d..(k + 1) * d].iter().zip(item).map(|(a, b)| a * b).sum::<f64>();
        }
    });
    ImageBatch::from_vec(x.len(), ItemShape::vector(dim), data)
}

/// The fixed random network used by [`FeatureExtractor::RandomConv`] for a given input shape.
pub fn random_conv_network(shape: ItemShape, seed: u64, dim: usize) -> Result<Network> {
    let layers = vec![
        Layer::Conv { in_channels: shape.channels, out_channels: 16, kernel: 3, stride: 2 },
        Layer::Activation(Activation::Relu),
        Layer::Conv { in_channels: 16, out_channels: 32, kernel: 3, stride: 2 },
        Layer::Activation(Activation::Relu),
        Layer::GlobalAvgPool,
        Layer::Dense { inputs: 32, outputs: dim },
    ];
    Network::init(layers, derive_seed(seed, Stream::Features, shape.len() as u64))
}

fn random_conv(x: &ImageBatch, seed: u64, dim: usize) -> Result<ImageBatch> {
    let net = random_conv_network(x.shape(), seed, dim)?;
    let mut data = Vec::with_capacity(x.len() * dim);
    let idx: Vec<usize> = (0..x.len()).collect();
    for chunk in idx.chunks(CONV_BLOCK) {
        data.extend_from_slice(net.forward_eval(&x.select(chunk))?.as_slice());
    }
    ImageBatch::from_vec(x.len(), ItemShape::vector(dim), data)
}
