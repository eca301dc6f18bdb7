use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::batch::ImageBatch;
use crate::digest::{hex, Fnv1a};
use crate::error::{Error, Result};

/// Rows per partial sum. Partial results are combined in block order, so the
/// reduction is identical for any thread count.
const STATS_BLOCK: usize = 256;

/// Eigenvalues of the Fréchet cross term below this are treated as zero.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Gaussian fit of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimMismatch(d, cov.nrows()));
        }
        if count < 2 {
            return Err(Error::InsufficientData(format!("stats need at least 2 samples, got {count}")));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature statistics"));
        }
        Ok(Self { mean, cov, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.update(&(self.count as u64).to_le_bytes());
        h.update(&(self.dim() as u64).to_le_bytes());
        h.update_f64s(self.mean.as_slice());
        h.update_f64s(self.cov.as_slice());
        h.finish()
    }

    pub fn digest_hex(&self) -> String {
        hex(self.digest())
    }
}

/// Column mean and unbiased covariance of an `n x d` feature matrix (one item per row).
pub fn compute_stats(features: &ImageBatch) -> Result<FeatureStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("stats need at least 2 samples, got {n}")));
    }
    if !features.is_finite() {
        return Err(Error::NonFinite("features"));
    }
    let d = features.item_len();
    let block = STATS_BLOCK * d;
    let partial_sums: Vec<DVector<f64>> = features
        .as_slice()
        .par_chunks(block)
        .map(|rows| {
            let mut s = DVector::zeros(d);
            for r in rows.chunks_exact(d) {
                for (a, b) in s.iter_mut().zip(r) {
                    *a += b;
                }
            }
            s
        })
        .collect();
    let mut mean = DVector::zeros(d);
    for s in &partial_sums {
        mean += s;
    }
    mean /= n as f64;

    let partial_scatter: Vec<DMatrix<f64>> = features
        .as_slice()
        .par_chunks(block)
        .map(|rows| {
            let m = rows.len() / d;
            // Column-major d x m matrix of centred rows.
            let centred = DMatrix::from_fn(d, m, |j, i| rows[i * d + j] - mean[j]);
            &centred * centred.transpose()
        })
        .collect();
    let mut cov = DMatrix::zeros(d, d);
    for s in &partial_scatter {
        cov += s;
    }
    cov /= (n - 1) as f64;
    let cov = symmetrize(&cov);
    FeatureStats::new(mean, cov, n)
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// The input is symmetrized first; eigenvalues down to `-1e-8` (relative to the
/// largest entry, floor 1) are clamped to zero, anything more negative is an error.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimMismatch(m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix square root input"));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let u = &eig.eigenvectors;
    let s = u * DMatrix::from_diagonal(&roots) * u.transpose();
    Ok(symmetrize(&s))
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})`.
///
/// The cross term is evaluated through the symmetric matrix
/// `S_a^{1/2} S_b S_a^{1/2}`, never the non-symmetric product `S_a S_b`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(a.dim(), b.dim()));
    }
    let dm = &a.mean - &b.mean;
    let sqrt_a = matrix_sqrt_psd(&a.cov)?;
    let cross = symmetrize(&(&sqrt_a * &b.cov * &sqrt_a));
    let eig = SymmetricEigen::new(cross);
    let tr_sqrt: f64 = eig
        .eigenvalues
        .iter()
        .map(|&l| if l < EIGEN_FLOOR { 0.0 } else { l.sqrt() })
        .sum();
    let value = dm.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    if !value.is_finite() {
        return Err(Error::NonFinite("Fréchet distance"));
    }
    Ok(value.max(0.0))
}
