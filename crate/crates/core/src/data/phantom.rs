//! Synthetic ultrasound-like frames: a cone-shaped sector over a dark
//! background, a smooth tissue field and multiplicative Rayleigh speckle.
//!
//! Inside the sector the latent intensity `field * speckle^grain` is mapped
//! through its within-image ranks onto quantiles of the configured intensity
//! mixture, so the in-sector pixel histogram follows that mixture by
//! construction while spatial structure comes from the latent.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::dataset::{FrameDataset, ManifestEntry};
use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Stream};

/// One-dimensional Gaussian mixture over native pixel intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Default for IntensityMixture {
    fn default() -> Self {
        Self {
            weights: vec![0.55, 0.45],
            means: vec![0.3, 0.7],
            variances: vec![0.008, 0.004],
        }
    }
}

impl IntensityMixture {
    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(Error::InvalidMixture("intensity mixture arrays must be non-empty and equal length".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMixture("intensity weights must be >= 0".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture("intensity weights must sum to 1".into()));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidMixture("intensity variances must be > 0".into()));
        }
        Ok(())
    }

    fn components(&self) -> Vec<(f64, Normal)> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| (*w, Normal::new(*m, v.sqrt()).expect("validated mixture")))
            .collect()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components().iter().map(|(w, n)| w * n.cdf(x)).sum()
    }

    /// Quantiles at each probability in `ps` (bisection on the CDF).
    pub fn quantiles(&self, ps: &[f64]) -> Vec<f64> {
        let comps = self.components();
        let cdf = |x: f64| comps.iter().map(|(w, n)| w * n.cdf(x)).sum::<f64>();
        let spread = self.variances.iter().fold(0.0_f64, |a, v| a.max(v.sqrt()));
        let lo0 = self.means.iter().fold(f64::INFINITY, |a, m| a.min(*m)) - 40.0 * spread;
        let hi0 = self.means.iter().fold(f64::NEG_INFINITY, |a, m| a.max(*m)) + 40.0 * spread;
        ps.par_iter()
            .map(|&p| {
                let (mut lo, mut hi) = (lo0, hi0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub height: usize,
    pub width: usize,
    /// Full opening angle of the sector, degrees, in (0, 180).
    pub sector_angle: f64,
    /// Apex in normalized image coordinates (x right, y down).
    pub apex: (f64, f64),
    /// Sector radius as a fraction of image height.
    pub depth: f64,
    /// Speckle exponent; 0 removes speckle.
    pub speckle_grain: f64,
    pub intensity: IntensityMixture,
    /// Native value outside the sector.
    pub background: f64,
    pub structure_seed: u64,
    /// Number of smooth blobs in the tissue field.
    pub blobs: usize,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            sector_angle: 75.0,
            apex: (0.5, 0.05),
            depth: 0.9,
            speckle_grain: 1.0,
            intensity: IntensityMixture::default(),
            background: 0.0,
            structure_seed: 0,
            blobs: 6,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sector_angle > 0.0 && self.sector_angle < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "sector angle must be in (0, 180) degrees, got {}",
                self.sector_angle
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("phantom size must be positive".into()));
        }
        if !(self.speckle_grain.is_finite() && self.speckle_grain >= 0.0) {
            return Err(Error::InvalidArgument("speckle grain must be finite and >= 0".into()));
        }
        if !(self.depth > 0.0 && self.depth.is_finite()) || !self.background.is_finite() {
            return Err(Error::InvalidArgument("depth must be > 0 and background finite".into()));
        }
        self.intensity.validate()
    }

    /// Row-major mask of pixels inside the sector.
    pub fn sector_mask(&self) -> Vec<bool> {
        let half = self.sector_angle.to_radians() / 2.0;
        let (ax, ay) = self.apex;
        let mut mask = Vec::with_capacity(self.height * self.width);
        for i in 0..self.height {
            for j in 0..self.width {
                // Distances measured in units of image height so the cone is not stretched.
                let dx = ((j as f64 + 0.5) / self.width as f64 - ax) * self.width as f64 / self.height as f64;
                let dy = (i as f64 + 0.5) / self.height as f64 - ay;
                let inside = dy > 0.0 && dx.atan2(dy).abs() <= half && (dx * dx + dy * dy).sqrt() <= self.depth;
                mask.push(inside);
            }
        }
        mask
    }

    /// Smooth positive tissue field determined by the structure seed.
    fn field(&self) -> Vec<f64> {
        let mut rng = rng_from_seed(derive_seed(self.structure_seed, Stream::Dataset, u64::MAX));
        let blobs: Vec<(f64, f64, f64, f64)> = (0..self.blobs)
            .map(|_| {
                (
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.05..0.25),
                    rng.random_range(0.3..1.0),
                )
            })
            .collect();
        let mut f = Vec::with_capacity(self.height * self.width);
        for i in 0..self.height {
            for j in 0..self.width {
                let (x, y) = ((j as f64 + 0.5) / self.width as f64, (i as f64 + 0.5) / self.height as f64);
                let v: f64 = blobs
                    .iter()
                    .map(|(cx, cy, r, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp())
                    .sum();
                f.push(0.2 + v);
            }
        }
        f
    }
}

/// Rayleigh draw with unit mean.
fn rayleigh<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let scale = (2.0 / std::f64::consts::PI).sqrt();
    scale * (-2.0 * u.ln()).sqrt()
}

/// `n` phantom frames; image `i` draws its speckle from `(seed, i)`.
pub fn generate_phantoms(params: &PhantomParams, n: usize, seed: u64) -> Result<FrameDataset> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mask = params.sector_mask();
    let inside: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
    if inside.is_empty() {
        return Err(Error::InvalidArgument("sector mask contains no pixels".into()));
    }
    let m = inside.len();
    let probs: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
    let levels = params.intensity.quantiles(&probs);
    let field = params.field();
    let shape = ItemShape::new(1, params.height, params.width);
    let mut data = vec![params.background; n * shape.len()];
    data.par_chunks_mut(shape.len()).enumerate().for_each(|(i, img)| {
        let mut rng = rng_from_seed(derive_seed(seed, Stream::Dataset, i as u64));
        let latent: Vec<f64> = inside
            .iter()
            .map(|&p| {
                let s = rayleigh(&mut rng);
                field[p] * s.powf(params.speckle_grain)
            })
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]).then(a.cmp(&b)));
        for (rank, &k) in order.iter().enumerate() {
            img[inside[k]] = levels[rank];
        }
    });
    let images = ImageBatch::from_vec(n, shape, data)?;
    let manifest = (0..n)
        .map(|i| ManifestEntry {
            source_id: format!("phantom-{}", params.structure_seed),
            frame_index: i as u64,
        })
        .collect();
    let (lo, hi) = native_range(&params.intensity, params.background);
    FrameDataset::from_native(images, manifest, lo, hi)
}

/// Native range used for normalization: background plus six standard
/// deviations around the mixture components.
fn native_range(mix: &IntensityMixture, background: f64) -> (f64, f64) {
    let mut lo = background;
    let mut hi = background;
    for (m, v) in mix.means.iter().zip(&mix.variances) {
        lo = lo.min(m - 6.0 * v.sqrt());
        hi = hi.max(m + 6.0 * v.sqrt());
    }
    (lo, hi)
}
