use crate::batch::{ImageBatch, ItemShape};
use crate::diffusion::{check_input, map_items, with_noise_channel, GaussianMixture, Precondition};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Network};

/// Beyond this logit magnitude a learned discriminator's gradient is not trusted.
pub const SATURATION_LOGIT: f64 = 30.0;

/// Small conv encoder (images) or MLP (vectors) producing one logit. The input
/// carries an extra channel holding the noise embedding `ln(sigma) / 4`.
pub fn discriminator_network(shape: ItemShape, hidden: usize, seed: u64) -> Result<Network> {
    let c = shape.channels + 1;
    let layers = if shape.plane() == 1 {
        vec![
            Layer::Flatten,
            Layer::Dense { inputs: c, outputs: hidden },
            Layer::Activation(Activation::Silu),
            Layer::Dense { inputs: hidden, outputs: hidden },
            Layer::Activation(Activation::Silu),
            Layer::Dense { inputs: hidden, outputs: 1 },
        ]
    } else {
        vec![
            Layer::Conv { in_channels: c, out_channels: hidden, kernel: 3, stride: 1 },
            Layer::Activation(Activation::Silu),
            Layer::Conv { in_channels: hidden, out_channels: hidden, kernel: 3, stride: 2 },
            Layer::Activation(Activation::Silu),
            Layer::Conv { in_channels: hidden, out_channels: hidden, kernel: 3, stride: 2 },
            Layer::Activation(Activation::Silu),
            Layer::GlobalAvgPool,
            Layer::Dense { inputs: hidden, outputs: 1 },
        ]
    };
    Network::init(layers, seed)
}

#[derive(Debug, Clone)]
pub struct NeuralDiscriminator {
    pub net: Network,
    pub shape: ItemShape,
    /// Input scaling `c_in(sigma)` uses the same data scale as the denoiser.
    pub sigma_data: f64,
}

impl NeuralDiscriminator {
    pub fn new(net: Network, shape: ItemShape, sigma_data: f64) -> Result<Self> {
        let input = ItemShape::new(shape.channels + 1, shape.height, shape.width);
        let out = net.output_shape(input)?;
        if out.len() != 1 {
            return Err(Error::Shape(format!("discriminator must output one logit, got {out}")));
        }
        Ok(Self { net, shape, sigma_data })
    }

    fn input(&self, x: &ImageBatch, sigma: f64) -> Result<(ImageBatch, f64)> {
        let c_in = Precondition::new(self.sigma_data).c_in(sigma);
        let n = x.len();
        let inp = with_noise_channel(x, &vec![c_in; n], &vec![Precondition::c_noise(sigma); n])?;
        Ok((inp, c_in))
    }
}

/// Real-vs-generated classifier over noisy samples.
#[derive(Debug, Clone)]
pub enum Discriminator {
    Neural(NeuralDiscriminator),
    /// Bayes-optimal discriminator `p_sigma / (p_sigma + q_sigma)` between a
    /// known real density `p` and model density `q`.
    Analytic {
        shape: ItemShape,
        real: GaussianMixture,
        model: GaussianMixture,
    },
}

impl Discriminator {
    pub fn analytic(shape: ItemShape, real: GaussianMixture, model: GaussianMixture) -> Result<Self> {
        if real.dim() != shape.len() || model.dim() != shape.len() {
            return Err(Error::DimMismatch(real.dim(), model.dim()));
        }
        Ok(Self::Analytic { shape, real, model })
    }

    pub fn item_shape(&self) -> ItemShape {
        match self {
            Discriminator::Neural(n) => n.shape,
            Discriminator::Analytic { shape, .. } => *shape,
        }
    }

    /// Per-item logit `log(d / (1 - d))`.
    pub fn logits(&self, x: &ImageBatch, sigma: f64) -> Result<Vec<f64>> {
        check_input(x, self.item_shape(), sigma)?;
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument("discriminator needs sigma > 0".into()));
        }
        match self {
            Discriminator::Neural(n) => {
                let (inp, _) = n.input(x, sigma)?;
                Ok(n.net.forward_eval(&inp)?.into_vec())
            }
            Discriminator::Analytic { real, model, .. } => Ok(x
                .items()
                .take(x.len())
                .map(|xi| real.noisy_log_density(xi, sigma) - model.noisy_log_density(xi, sigma))
                .collect()),
        }
    }

    /// Per-item probability of "real".
    pub fn probabilities(&self, x: &ImageBatch, sigma: f64) -> Result<Vec<f64>> {
        Ok(self.logits(x, sigma)?.into_iter().map(crate::nn::sigmoid).collect())
    }

    /// `grad_x log(d / (1 - d))`.
    ///
    /// The analytic variant returns the exact score difference
    /// `grad log p_sigma - grad log q_sigma`. The neural variant backpropagates
    /// to its input and refuses to answer when any logit is saturated.
    pub fn density_ratio_grad(&self, x: &ImageBatch, sigma: f64) -> Result<ImageBatch> {
        check_input(x, self.item_shape(), sigma)?;
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument("density ratio gradient needs sigma > 0".into()));
        }
        match self {
            Discriminator::Analytic { real, model, .. } => Ok(map_items(x, |xi, o| {
                let mut tmp = vec![0.0; o.len()];
                real.noisy_score(xi, sigma, o);
                model.noisy_score(xi, sigma, &mut tmp);
                for (a, b) in o.iter_mut().zip(&tmp) {
                    *a -= b;
                }
            })),
            Discriminator::Neural(n) => {
                let (inp, c_in) = n.input(x, sigma)?;
                let logits = n.net.forward_eval(&inp)?;
                if let Some(l) = logits.as_slice().iter().find(|l| l.abs() > SATURATION_LOGIT) {
                    return Err(Error::SaturatedDiscriminator {
                        logit: *l,
                        limit: SATURATION_LOGIT,
                    });
                }
                let ones = logits.map(|_| 1.0);
                let g = n.net.input_gradient(&inp, &ones)?;
                // Drop the noise-embedding channel and apply the chain rule through c_in.
                let len = x.item_len();
                let mut out = ImageBatch::zeros(x.len(), x.shape());
                for (o, gi) in out.as_mut_slice().chunks_exact_mut(len).zip(g.items()) {
                    for (ov, gv) in o.iter_mut().zip(&gi[..len]) {
                        *ov = c_in * gv;
                    }
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Gaussian;

    fn iso(mean: Vec<f64>, var: f64) -> GaussianMixture {
        GaussianMixture::single(Gaussian::isotropic(mean, var).unwrap())
    }

    #[test]
    fn identical_densities_give_zero_gradient() {
        let p = iso(vec![0.5, -1.0], 0.7);
        let disc = Discriminator::analytic(ItemShape::vector(2), p.clone(), p).unwrap();
        let x = ImageBatch::from_rows(&[vec![3.0, 1.0], vec![-0.2, 0.0]]).unwrap();
        for sigma in [0.1, 1.0, 10.0] {
            let g = disc.density_ratio_grad(&x, sigma).unwrap();
            assert!(g.as_slice().iter().all(|v| *v == 0.0));
            assert!(disc.probabilities(&x, sigma).unwrap().iter().all(|p| *p == 0.5));
        }
    }

    #[test]
    fn variance_mismatch_gradient() {
        // p = N(0, I), q = N(0, 2I); at sigma = 1 the marginals have variances 2 and 3.
        let disc =
            Discriminator::analytic(ItemShape::vector(3), iso(vec![0.0; 3], 1.0), iso(vec![0.0; 3], 2.0)).unwrap();
        let x = ImageBatch::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let g = disc.density_ratio_grad(&x, 1.0).unwrap();
        for (gi, xi) in g.as_slice().iter().zip(x.as_slice()) {
            assert!((gi - xi * (1.0 / 3.0 - 0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_neural_discriminator_is_rejected() {
        let shape = ItemShape::vector(2);
        let mut net = Network::zeros(vec![Layer::Dense { inputs: 3, outputs: 1 }]).unwrap();
        net.params_mut()[3] = 100.0; // bias
        let disc = Discriminator::Neural(NeuralDiscriminator::new(net, shape, 0.5).unwrap());
        let x = ImageBatch::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            disc.density_ratio_grad(&x, 1.0),
            Err(Error::SaturatedDiscriminator { .. })
        ));
    }
}
