use rand::Rng;
use rayon::prelude::*;

use crate::batch::{ImageBatch, ItemShape};
use crate::diffusion::GaussianMixture;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, fill_normal, rng_from_seed, Stream};

/// Draws together with the component each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSamples {
    pub data: ImageBatch,
    pub components: Vec<usize>,
}

/// `n` iid draws; draw `i` uses its own sub-seed from `(seed, i)`.
pub fn generate_gmm_dataset(mix: &GaussianMixture, n: usize, seed: u64) -> Result<GmmSamples> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let d = mix.dim();
    let mut cum = Vec::with_capacity(mix.weights().len());
    let mut acc = 0.0;
    for w in mix.weights() {
        acc += w;
        cum.push(acc);
    }
    let last_positive = mix.weights().iter().rposition(|w| *w > 0.0).unwrap_or(0);
    let mut data = vec![0.0; n * d];
    let components: Vec<usize> = data
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, out)| {
            let mut rng = rng_from_seed(derive_seed(seed, Stream::Dataset, i as u64));
            let u: f64 = rng.random();
            // Zero-weight components have an empty interval and are never chosen.
            let k = cum.iter().position(|c| u < *c).unwrap_or(last_positive);
            let mut z = vec![0.0; d];
            fill_normal(&mut rng, &mut z);
            mix.components()[k].transform_standard(&z, out);
            k
        })
        .collect();
    Ok(GmmSamples {
        data: ImageBatch::from_vec(n, ItemShape::vector(d), data)?,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Gaussian;

    #[test]
    fn degenerate_weights_pick_first() {
        let mix = GaussianMixture::new(
            vec![1.0, 0.0],
            vec![
                Gaussian::isotropic(vec![-3.0], 0.1).unwrap(),
                Gaussian::isotropic(vec![3.0], 0.1).unwrap(),
            ],
        )
        .unwrap();
        let s = generate_gmm_dataset(&mix, 500, 4).unwrap();
        assert!(s.components.iter().all(|k| *k == 0));
    }

    #[test]
    fn prefix_stable_in_n() {
        let mix = GaussianMixture::single(Gaussian::isotropic(vec![0.0; 2], 1.0).unwrap());
        let a = generate_gmm_dataset(&mix, 10, 1).unwrap();
        let b = generate_gmm_dataset(&mix, 20, 1).unwrap();
        assert_eq!(a.data.as_slice(), &b.data.as_slice()[..20]);
    }
}
