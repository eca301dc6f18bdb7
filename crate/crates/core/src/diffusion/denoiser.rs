use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gaussian::{Gaussian, GaussianMixture};
use super::precondition::{precondition_apply, Precondition};
use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::nn::Network;

/// Which sampler evaluation a denoiser call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// First-order (Euler) slope evaluation.
    Predictor,
    /// Second-order correction evaluation.
    Corrector,
}

/// Anything that maps a noisy batch and a noise level to a clean estimate.
pub trait Denoise: Send + Sync {
    fn item_shape(&self) -> ItemShape;

    fn denoise(&self, x: &ImageBatch, sigma: f64) -> Result<ImageBatch>;

    /// Stage-aware evaluation used by samplers. Plain denoisers ignore the stage.
    fn denoise_at(&self, x: &ImageBatch, sigma: f64, _stage: Stage) -> Result<ImageBatch> {
        self.denoise(x, sigma)
    }

    /// Guidance applied by this denoiser, if any.
    fn guidance(&self) -> Option<GuidanceConfig> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct NeuralDenoiser {
    pub net: Network,
    pub sigma_data: f64,
    pub shape: ItemShape,
}

/// Data-space denoiser: two exact posterior-mean oracles and a trained network.
#[derive(Debug, Clone)]
pub enum Denoiser {
    AnalyticGaussian { shape: ItemShape, dist: Gaussian },
    AnalyticGmm { shape: ItemShape, dist: GaussianMixture },
    Neural(NeuralDenoiser),
}

pub(crate) fn check_input(x: &ImageBatch, shape: ItemShape, sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if x.shape().len() != shape.len() {
        return Err(Error::Shape(format!("denoiser expects items of {shape}, got {}", x.shape())));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("denoiser input"));
    }
    Ok(())
}

/// Applies `f(item, out)` to every item in parallel, preserving order.
pub(crate) fn map_items(x: &ImageBatch, f: impl Fn(&[f64], &mut [f64]) + Sync) -> ImageBatch {
    let len = x.item_len();
    let mut out = ImageBatch::zeros(x.len(), x.shape());
    out.as_mut_slice()
        .par_chunks_mut(len)
        .zip(x.as_slice().par_chunks(len))
        .for_each(|(o, xi)| f(xi, o));
    out
}

impl Denoiser {
    pub fn gaussian(shape: ItemShape, dist: Gaussian) -> Result<Self> {
        if dist.dim() != shape.len() {
            return Err(Error::DimMismatch(shape.len(), dist.dim()));
        }
        Ok(Self::AnalyticGaussian { shape, dist })
    }

    pub fn gmm(shape: ItemShape, dist: GaussianMixture) -> Result<Self> {
        if dist.dim() != shape.len() {
            return Err(Error::DimMismatch(shape.len(), dist.dim()));
        }
        Ok(Self::AnalyticGmm { shape, dist })
    }

    pub fn neural(net: Network, sigma_data: f64, shape: ItemShape) -> Result<Self> {
        if !(sigma_data.is_finite() && sigma_data > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_data must be positive, got {sigma_data}")));
        }
        let input = ItemShape::new(shape.channels + 1, shape.height, shape.width);
        let out = net.output_shape(input)?;
        if out.len() != shape.len() {
            return Err(Error::Shape(format!(
                "network maps {input} to {out}, denoiser needs {shape}"
            )));
        }
        Ok(Self::Neural(NeuralDenoiser { net, sigma_data, shape }))
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, Denoiser::Neural(_))
    }

    /// The analytic data distribution as a mixture (a Gaussian is a one-component mixture).
    pub fn mixture(&self) -> Option<GaussianMixture> {
        match self {
            Denoiser::AnalyticGaussian { dist, .. } => Some(GaussianMixture::single(dist.clone())),
            Denoiser::AnalyticGmm { dist, .. } => Some(dist.clone()),
            Denoiser::Neural(_) => None,
        }
    }

    /// Exact noisy-marginal score `grad log p_sigma(x)` for analytic variants.
    pub fn analytic_score(&self, x: &ImageBatch, sigma: f64) -> Result<ImageBatch> {
        check_input(x, self.item_shape(), sigma)?;
        match self {
            Denoiser::AnalyticGaussian { dist, .. } => Ok(map_items(x, |xi, o| dist.noisy_score(xi, sigma, o))),
            Denoiser::AnalyticGmm { dist, .. } => Ok(map_items(x, |xi, o| dist.noisy_score(xi, sigma, o))),
            Denoiser::Neural(_) => Err(Error::InvalidArgument("analytic score of a neural denoiser".into())),
        }
    }

    /// Exact `log p_sigma(x)` per item for analytic variants.
    pub fn analytic_log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        match self {
            Denoiser::AnalyticGaussian { dist, .. } => Ok(dist.noisy_log_density(x, sigma)),
            Denoiser::AnalyticGmm { dist, .. } => Ok(dist.noisy_log_density(x, sigma)),
            Denoiser::Neural(_) => Err(Error::InvalidArgument("log density of a neural denoiser".into())),
        }
    }
}

impl Denoise for Denoiser {
    fn item_shape(&self) -> ItemShape {
        match self {
            Denoiser::AnalyticGaussian { shape, .. } | Denoiser::AnalyticGmm { shape, .. } => *shape,
            Denoiser::Neural(n) => n.shape,
        }
    }

    fn denoise(&self, x: &ImageBatch, sigma: f64) -> Result<ImageBatch> {
        check_input(x, self.item_shape(), sigma)?;
        if sigma == 0.0 {
            return Ok(x.clone());
        }
        match self {
            Denoiser::AnalyticGaussian { dist, .. } => Ok(map_items(x, |xi, o| dist.posterior_mean(xi, sigma, o))),
            Denoiser::AnalyticGmm { dist, .. } => Ok(map_items(x, |xi, o| dist.posterior_mean(xi, sigma, o))),
            Denoiser::Neural(n) => precondition_apply(&n.net, x, sigma, &Precondition::new(n.sigma_data)),
        }
    }
}

/// Tweedie conversion `(D(x; sigma) - x) / sigma^2`.
pub fn score_from_denoiser(d: &dyn Denoise, x: &ImageBatch, sigma: f64) -> Result<ImageBatch> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "score conversion needs sigma > 0, got {sigma}"
        )));
    }
    let mut s = d.denoise(x, sigma)?;
    s.axpy(-1.0, x)?;
    s.scale(1.0 / (sigma * sigma));
    Ok(s)
}

/// Plain-text parameter block for analytic denoisers.
///
/// ```toml
/// kind = "gmm"
/// shape = [2, 1, 1]
/// weights = [0.5, 0.5]
/// means = [[-1.0, 0.0], [1.0, 0.0]]
/// covariances = [[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.0], [0.0, 0.5]]]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSpec {
    pub kind: String,
    pub shape: [usize; 3],
    #[serde(default)]
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Parse("covariance must be square".into()));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl AnalyticSpec {
    pub fn from_denoiser(d: &Denoiser) -> Option<Self> {
        let shape = d.item_shape();
        let shape = [shape.channels, shape.height, shape.width];
        match d {
            Denoiser::AnalyticGaussian { dist, .. } => Some(Self {
                kind: "gaussian".into(),
                shape,
                weights: vec![1.0],
                means: vec![dist.mean().iter().copied().collect()],
                covariances: vec![rows_from_matrix(dist.cov())],
            }),
            Denoiser::AnalyticGmm { dist, .. } => Some(Self {
                kind: "gmm".into(),
                shape,
                weights: dist.weights().to_vec(),
                means: dist.components().iter().map(|c| c.mean().iter().copied().collect()).collect(),
                covariances: dist.components().iter().map(|c| rows_from_matrix(c.cov())).collect(),
            }),
            Denoiser::Neural(_) => None,
        }
    }

    pub fn build(&self) -> Result<Denoiser> {
        let shape = ItemShape::new(self.shape[0], self.shape[1], self.shape[2]);
        if self.means.len() != self.covariances.len() || self.means.is_empty() {
            return Err(Error::Parse("means and covariances must be non-empty and paired".into()));
        }
        let comps = self
            .means
            .iter()
            .zip(&self.covariances)
            .map(|(m, c)| Gaussian::new(m.clone(), matrix_from_rows(c)?))
            .collect::<Result<Vec<_>>>()?;
        match self.kind.as_str() {
            "gaussian" => {
                if comps.len() != 1 {
                    return Err(Error::Parse("gaussian spec needs exactly one component".into()));
                }
                Denoiser::gaussian(shape, comps.into_iter().next().unwrap())
            }
            "gmm" => Denoiser::gmm(shape, GaussianMixture::new(self.weights.clone(), comps)?),
            other => Err(Error::Parse(format!("unknown analytic kind `{other}`"))),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(d: usize) -> Denoiser {
        Denoiser::gaussian(ItemShape::vector(d), Gaussian::isotropic(vec![0.0; d], 1.0).unwrap()).unwrap()
    }

    #[test]
    fn sigma_zero_is_identity() {
        let x = ImageBatch::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.0]]).unwrap();
        assert_eq!(iso(2).denoise(&x, 0.0).unwrap(), x);
    }

    #[test]
    fn isotropic_score_at_unit_sigma() {
        let x = ImageBatch::from_rows(&[vec![0.3, -2.0, 4.0]]).unwrap();
        let s = score_from_denoiser(&iso(3), &x, 1.0).unwrap();
        for (si, xi) in s.as_slice().iter().zip(x.as_slice()) {
            assert!((si + xi / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn score_vanishes_at_mean() {
        let mu = vec![1.0, -0.5];
        let d = Denoiser::gaussian(
            ItemShape::vector(2),
            Gaussian::new(mu.clone(), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5])).unwrap(),
        )
        .unwrap();
        let x = ImageBatch::from_rows(&[mu]).unwrap();
        let s = score_from_denoiser(&d, &x, 0.8).unwrap();
        assert!(s.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn score_rejects_zero_sigma() {
        let x = ImageBatch::from_rows(&[vec![0.0]]).unwrap();
        assert!(score_from_denoiser(&iso(1), &x, 0.0).is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let x = ImageBatch::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(iso(2).denoise(&x, 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn analytic_spec_text_round_trip() {
        let d = Denoiser::gmm(
            ItemShape::vector(2),
            GaussianMixture::new(
                vec![0.25, 0.75],
                vec![
                    Gaussian::isotropic(vec![-1.0, 0.5], 0.5).unwrap(),
                    Gaussian::new(vec![2.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.3])).unwrap(),
                ],
            )
            .unwrap(),
        )
        .unwrap();
        let spec = AnalyticSpec::from_denoiser(&d).unwrap();
        let text = spec.to_text().unwrap();
        let back = AnalyticSpec::from_text(&text).unwrap();
        assert_eq!(back, spec);
        let x = ImageBatch::from_rows(&[vec![0.1, 0.2]]).unwrap();
        assert_eq!(back.build().unwrap().denoise(&x, 0.7).unwrap(), d.denoise(&x, 0.7).unwrap());
    }
}
