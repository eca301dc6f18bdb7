//! Closed-form Gaussian and Gaussian-mixture quantities under additive
//! isotropic noise: noisy-marginal log-density, score, and posterior mean.
//!
//! Each component caches the eigendecomposition `Sigma = U diag(l) U^T`, so
//! every noise level costs two matrix-vector products.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("zero-dimensional Gaussian".into()));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimMismatch(d, cov.nrows()));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian parameters"));
        }
        let scale = cov.amax().max(1.0);
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let eig = SymmetricEigen::new(cov.clone());
        let min = eig.eigenvalues.min();
        if min <= 0.0 {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            basis: eig.eigenvectors,
            eigenvalues: eig.eigenvalues,
        })
    }

    /// `N(mean, variance * I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::from_diagonal_element(d, d, variance))
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        Self::new(mean, DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Same covariance, mean moved by `delta`.
    pub fn shifted(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.dim() {
            return Err(Error::DimMismatch(self.dim(), delta.len()));
        }
        let mut out = self.clone();
        for (m, d) in out.mean.iter_mut().zip(delta) {
            *m += d;
        }
        Ok(out)
    }

    /// Coordinates of `x - mean` in the eigenbasis.
    fn project(&self, x: &[f64]) -> DVector<f64> {
        let centered = DVector::from_iterator(self.dim(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        self.basis.tr_mul(&centered)
    }

    /// `log N(x; mean, Sigma + sigma^2 I)`.
    pub fn noisy_log_density(&self, x: &[f64], sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        let z = self.project(x);
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for (zi, li) in z.iter().zip(self.eigenvalues.iter()) {
            let v = li + s2;
            quad += zi * zi / v;
            logdet += v.ln();
        }
        -0.5 * (quad + logdet + self.dim() as f64 * LN_2PI)
    }

    /// `grad_x log N(x; mean, Sigma + sigma^2 I) = -(Sigma + sigma^2 I)^{-1} (x - mean)`.
    pub fn noisy_score(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let s2 = sigma * sigma;
        let mut z = self.project(x);
        for (zi, li) in z.iter_mut().zip(self.eigenvalues.iter()) {
            *zi /= -(li + s2);
        }
        let r = &self.basis * z;
        out.copy_from_slice(r.as_slice());
    }

    /// `E[x0 | x0 + sigma eps = x] = mean + Sigma (Sigma + sigma^2 I)^{-1} (x - mean)`.
    pub fn posterior_mean(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let s2 = sigma * sigma;
        let mut z = self.project(x);
        for (zi, li) in z.iter_mut().zip(self.eigenvalues.iter()) {
            *zi *= li / (li + s2);
        }
        let r = &self.basis * z;
        for ((o, ri), m) in out.iter_mut().zip(r.iter()).zip(self.mean.iter()) {
            *o = m + ri;
        }
    }

    /// Writes `Sigma^{1/2} z + mean` for a standard-normal `z`.
    pub fn transform_standard(&self, z: &[f64], out: &mut [f64]) {
        let mut w = self.basis.tr_mul(&DVector::from_column_slice(z));
        for (wi, li) in w.iter_mut().zip(self.eigenvalues.iter()) {
            *wi *= li.sqrt();
        }
        let r = &self.basis * w;
        for ((o, ri), m) in out.iter_mut().zip(r.iter()).zip(self.mean.iter()) {
            *o = m + ri;
        }
    }
}

/// Finite mixture of full-covariance Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMixture(format!("weight {i} = {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("weights sum to {sum}, not 1")));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimMismatch(d, c.dim()));
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            components,
        })
    }

    pub fn single(component: Gaussian) -> Self {
        Self {
            log_weights: vec![0.0],
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    /// Every component moved by the same `delta`.
    pub fn shifted(&self, delta: &[f64]) -> Result<Self> {
        let components = self
            .components
            .iter()
            .map(|c| c.shifted(delta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            ..self.clone()
        })
    }

    /// Mixture mean and covariance (law of total covariance).
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            mean += c.mean() * *w;
        }
        let mut cov = DMatrix::zeros(d, d);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let dm = c.mean() - &mean;
            cov += (c.cov() + &dm * dm.transpose()) * *w;
        }
        (mean, cov)
    }

    /// Component log-joint terms `log w_k + log N_k(x; sigma)`. Zero-weight
    /// components contribute `-inf`.
    fn log_joint(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| {
                if lw.is_finite() {
                    lw + c.noisy_log_density(x, sigma)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    pub fn noisy_log_density(&self, x: &[f64], sigma: f64) -> f64 {
        logsumexp(&self.log_joint(x, sigma))
    }

    /// Posterior component responsibilities at noise level `sigma`.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let lj = self.log_joint(x, sigma);
        let lse = logsumexp(&lj);
        lj.iter().map(|v| (v - lse).exp()).collect()
    }

    pub fn noisy_score(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        self.mix(x, sigma, out, |c, x, s, o| c.noisy_score(x, s, o));
    }

    pub fn posterior_mean(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        self.mix(x, sigma, out, |c, x, s, o| c.posterior_mean(x, s, o));
    }

    fn mix(&self, x: &[f64], sigma: f64, out: &mut [f64], f: impl Fn(&Gaussian, &[f64], f64, &mut [f64])) {
        if self.components.len() == 1 {
            f(&self.components[0], x, sigma, out);
            return;
        }
        let r = self.responsibilities(x, sigma);
        out.fill(0.0);
        let mut tmp = vec![0.0; out.len()];
        for (c, rk) in self.components.iter().zip(&r) {
            if *rk == 0.0 {
                continue;
            }
            f(c, x, sigma, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += rk * t;
            }
        }
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(d: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(seed);
        let b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let mut m = DMatrix::identity(2, 2);
        m[(1, 1)] = -1.0;
        assert!(matches!(Gaussian::new(vec![0.0; 2], m), Err(Error::NotPsd { .. })));
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = 0.5;
        assert!(matches!(Gaussian::new(vec![0.0; 2], m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn posterior_mean_matches_direct_solve() {
        let cov = spd(3, 1);
        let mu = vec![0.3, -1.0, 2.0];
        let g = Gaussian::new(mu.clone(), cov.clone()).unwrap();
        let x = [1.0, 0.5, -0.5];
        let sigma = 0.7;
        let mut out = [0.0; 3];
        g.posterior_mean(&x, sigma, &mut out);
        // mu + Sigma (Sigma + s^2 I)^{-1} (x - mu) via LU.
        let a = &cov + DMatrix::identity(3, 3) * (sigma * sigma);
        let rhs = DVector::from_iterator(3, x.iter().zip(&mu).map(|(a, b)| a - b));
        let sol = a.lu().solve(&rhs).unwrap();
        let want = DVector::from_vec(mu) + &cov * sol;
        for i in 0..3 {
            assert!((out[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_validation() {
        let c = || Gaussian::isotropic(vec![0.0], 1.0).unwrap();
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![c(), c()]).is_err());
        assert!(GaussianMixture::new(vec![1.5, -0.5], vec![c(), c()]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![c(), c()]).is_err());
        assert!(GaussianMixture::new(vec![1.0, 0.0], vec![c(), c()]).is_ok());
    }

    #[test]
    fn responsibilities_stay_finite_at_tiny_sigma() {
        let m = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![
                Gaussian::isotropic(vec![-50.0, 0.0], 1e-4).unwrap(),
                Gaussian::isotropic(vec![50.0, 0.0], 1e-4).unwrap(),
            ],
        )
        .unwrap();
        let r = m.responsibilities(&[1.0, 0.0], 1e-3);
        assert!(r.iter().all(|v| v.is_finite()));
        assert!((r[1] - 1.0).abs() < 1e-12);
        let mut out = [0.0; 2];
        m.posterior_mean(&[1.0, 0.0], 1e-3, &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
