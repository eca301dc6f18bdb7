//! Discriminator guidance.
//!
//! A discriminator `d(x, sigma)` trained to tell real from generated noisy
//! samples yields the log density ratio `log(d / (1 - d))`; its input gradient
//! is added to the model score during sampling:
//!
//! ```text
//! s_guided(x, sigma) = s(x, sigma) + w_stage * dg_scale * grad_x log(d / (1 - d))
//! ```
//!
//! where `w_stage` is `weight_first_order` on predictor evaluations and
//! `weight_correction` on corrector evaluations. In denoiser space this shifts
//! the output by `sigma^2` times the same vector.

mod discriminator;
mod train;

use serde::{Deserialize, Serialize};

pub use discriminator::{discriminator_network, Discriminator, NeuralDiscriminator, SATURATION_LOGIT};
pub use train::{
    epoch_selection, select_best_epoch, train_discriminator, DiscriminatorEpoch, DiscriminatorTrainConfig,
    DiscriminatorTraining, EpochSelection,
};

use crate::batch::{ImageBatch, ItemShape};
use crate::diffusion::{Denoise, Stage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub weight_first_order: f64,
    pub weight_correction: f64,
    pub dg_scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            weight_first_order: 5.0,
            weight_correction: 0.0,
            dg_scale: 2.0,
        }
    }
}

impl GuidanceConfig {
    pub fn new(weight_first_order: f64, weight_correction: f64, dg_scale: f64) -> Result<Self> {
        let cfg = Self {
            weight_first_order,
            weight_correction,
            dg_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("weight_first_order", self.weight_first_order),
            ("weight_correction", self.weight_correction),
            ("dg_scale", self.dg_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("guidance {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Composite multiplier on the density-ratio gradient for a sampler stage.
    pub fn multiplier(&self, stage: Stage) -> f64 {
        let w = match stage {
            Stage::Predictor => self.weight_first_order,
            Stage::Corrector => self.weight_correction,
        };
        w * self.dg_scale
    }
}

/// Wraps a denoiser so that every evaluation carries the discriminator correction.
pub struct GuidedDenoiser<'a> {
    inner: &'a dyn Denoise,
    disc: &'a Discriminator,
    cfg: GuidanceConfig,
}

pub fn guided_denoiser<'a>(
    inner: &'a dyn Denoise,
    disc: &'a Discriminator,
    cfg: GuidanceConfig,
) -> Result<GuidedDenoiser<'a>> {
    cfg.validate()?;
    if disc.item_shape().len() != inner.item_shape().len() {
        return Err(Error::Shape(format!(
            "discriminator items {} vs denoiser items {}",
            disc.item_shape(),
            inner.item_shape()
        )));
    }
    Ok(GuidedDenoiser { inner, disc, cfg })
}

impl GuidedDenoiser<'_> {
    pub fn config(&self) -> GuidanceConfig {
        self.cfg
    }
}

impl Denoise for GuidedDenoiser<'_> {
    fn item_shape(&self) -> ItemShape {
        self.inner.item_shape()
    }

    fn denoise(&self, x: &ImageBatch, sigma: f64) -> Result<ImageBatch> {
        self.denoise_at(x, sigma, Stage::Predictor)
    }

    fn denoise_at(&self, x: &ImageBatch, sigma: f64, stage: Stage) -> Result<ImageBatch> {
        let mut out = self.inner.denoise_at(x, sigma, stage)?;
        let m = self.cfg.multiplier(stage);
        if m == 0.0 || sigma == 0.0 {
            return Ok(out);
        }
        let g = self.disc.density_ratio_grad(x, sigma)?;
        out.axpy(sigma * sigma * m, &g)?;
        Ok(out)
    }

    fn guidance(&self) -> Option<GuidanceConfig> {
        Some(self.cfg)
    }
}
