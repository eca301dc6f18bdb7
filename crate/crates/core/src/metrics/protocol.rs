use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::cache::CachedStats;
use super::extractor::FeatureExtractor;
use super::stats::{compute_stats, frechet_distance, FeatureStats};
use crate::batch::ImageBatch;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, Stream};

/// One side of an FID computation: raw items or precomputed statistics.
#[derive(Debug, Clone, Copy)]
pub enum StatsSource<'a> {
    Batch(&'a ImageBatch),
    Cached(&'a CachedStats),
}

impl StatsSource<'_> {
    pub fn resolve(&self, extractor: &FeatureExtractor) -> Result<FeatureStats> {
        match self {
            StatsSource::Batch(x) => compute_stats(&extractor.extract(x)?),
            StatsSource::Cached(c) => {
                let requested = extractor.id();
                if c.extractor != requested {
                    return Err(Error::ExtractorMismatch {
                        cached: c.extractor.clone(),
                        requested,
                    });
                }
                Ok(c.stats.clone())
            }
        }
    }
}

pub fn stats_for(x: &ImageBatch, extractor: &FeatureExtractor) -> Result<CachedStats> {
    Ok(CachedStats {
        extractor: extractor.id(),
        stats: compute_stats(&extractor.extract(x)?)?,
    })
}

/// Result record written next to every FID value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidRecord {
    pub extractor: String,
    pub n_real: usize,
    pub n_gen: usize,
    pub seed: u64,
    pub value: f64,
    pub real_stats_digest: String,
    pub gen_stats_digest: String,
}

pub fn fid_record(real: &FeatureStats, generated: &FeatureStats, extractor: &FeatureExtractor, seed: u64) -> Result<FidRecord> {
    Ok(FidRecord {
        extractor: extractor.id(),
        n_real: real.count,
        n_gen: generated.count,
        seed,
        value: frechet_distance(real, generated)?,
        real_stats_digest: real.digest_hex(),
        gen_stats_digest: generated.digest_hex(),
    })
}

pub fn fid(real: StatsSource<'_>, generated: StatsSource<'_>, extractor: &FeatureExtractor) -> Result<f64> {
    frechet_distance(&real.resolve(extractor)?, &generated.resolve(extractor)?)
}

/// Sorted indices of a uniform subsample of `n` out of `pool` items.
pub fn pinned_subsample(pool: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > pool {
        return Err(Error::InsufficientData(format!("subsample of {n} from {pool} items")));
    }
    let mut idx = sample(&mut stream_rng(seed, Stream::Subsample, 0), pool, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalFid {
    pub value: f64,
    pub n_first: usize,
    pub n_second: usize,
    pub split_seed: u64,
}

/// FID between two disjoint random halves of one dataset.
pub fn optimal_fid(dataset: &ImageBatch, extractor: &FeatureExtractor, split_seed: u64) -> Result<OptimalFid> {
    let n = dataset.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("optimal FID needs at least 4 items, got {n}")));
    }
    let perm = sample(&mut stream_rng(split_seed, Stream::Split, 0), n, n).into_vec();
    let (a, b) = perm.split_at(n / 2);
    let value = fid(
        StatsSource::Batch(&dataset.select(a)),
        StatsSource::Batch(&dataset.select(b)),
        extractor,
    )?;
    Ok(OptimalFid {
        value,
        n_first: a.len(),
        n_second: b.len(),
        split_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Fixed generated set, fresh real subsample per repeat.
    VaryReal,
    /// Fixed real subsample, fresh generation seed per repeat.
    VaryGenerated,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceMode::VaryReal => "vary_real",
            VarianceMode::VaryGenerated => "vary_generated",
        })
    }
}

impl FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vary_real" => Ok(VarianceMode::VaryReal),
            "vary_generated" => Ok(VarianceMode::VaryGenerated),
            _ => Err(Error::Parse(format!("unknown variance mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    pub mode: VarianceMode,
    pub repeats: usize,
    /// Real subsample size per repeat.
    pub n_real: usize,
    pub seed: u64,
    /// Use this seed for every repeat instead of per-repeat derived seeds.
    pub forced_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub repeat: usize,
    pub seed: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceResult {
    pub mode: VarianceMode,
    pub rows: Vec<VarianceRow>,
    pub mean: f64,
    /// Sample standard deviation (divisor `repeats - 1`).
    pub std: f64,
    /// Real subsamples of different repeats can share items.
    pub overlapping: bool,
}

/// Repeats FID while varying one side. `generate(seed)` produces a generated set.
pub fn fid_variance_protocol(
    real_pool: &ImageBatch,
    mut generate: impl FnMut(u64) -> Result<ImageBatch>,
    extractor: &FeatureExtractor,
    cfg: &VarianceConfig,
) -> Result<VarianceResult> {
    if cfg.repeats < 2 {
        return Err(Error::InvalidArgument(format!("repeats must be >= 2, got {}", cfg.repeats)));
    }
    if cfg.n_real < 2 || cfg.n_real > real_pool.len() {
        return Err(Error::InsufficientData(format!(
            "real subsample of {} from {} items",
            cfg.n_real,
            real_pool.len()
        )));
    }
    let repeat_seed = |stream: Stream, r: usize| cfg.forced_seed.unwrap_or_else(|| derive_seed(cfg.seed, stream, r as u64));
    let mut rows = Vec::with_capacity(cfg.repeats);
    match cfg.mode {
        VarianceMode::VaryReal => {
            let gen_seed = derive_seed(cfg.seed, Stream::Protocol, 0);
            let gen = compute_stats(&extractor.extract(&generate(gen_seed)?)?)?;
            for r in 0..cfg.repeats {
                let seed = repeat_seed(Stream::Subsample, r);
                let idx = pinned_subsample(real_pool.len(), cfg.n_real, seed)?;
                let real = compute_stats(&extractor.extract(&real_pool.select(&idx))?)?;
                rows.push(VarianceRow {
                    repeat: r,
                    seed,
                    value: frechet_distance(&real, &gen)?,
                });
            }
        }
        VarianceMode::VaryGenerated => {
            let idx = pinned_subsample(real_pool.len(), cfg.n_real, derive_seed(cfg.seed, Stream::Subsample, 0))?;
            let real = compute_stats(&extractor.extract(&real_pool.select(&idx))?)?;
            for r in 0..cfg.repeats {
                let seed = repeat_seed(Stream::Protocol, r + 1);
                let gen = compute_stats(&extractor.extract(&generate(seed)?)?)?;
                rows.push(VarianceRow {
                    repeat: r,
                    seed,
                    value: frechet_distance(&real, &gen)?,
                });
            }
        }
    }
    let (mean, std) = mean_std(rows.iter().map(|r| r.value));
    Ok(VarianceResult {
        mode: cfg.mode,
        rows,
        mean,
        std,
        overlapping: cfg.mode == VarianceMode::VaryReal && 2 * cfg.n_real > real_pool.len(),
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::ItemShape;
    use crate::rng::{fill_normal, rng_from_seed};

    fn cloud(n: usize, seed: u64) -> ImageBatch {
        let mut x = ImageBatch::zeros(n, ItemShape::vector(3));
        fill_normal(&mut rng_from_seed(seed), x.as_mut_slice());
        x
    }

    #[test]
    fn self_fid_is_zero() {
        let x = cloud(200, 1);
        let e = FeatureExtractor::default();
        assert!(fid(StatsSource::Batch(&x), StatsSource::Batch(&x), &e).unwrap() < 1e-10);
    }

    #[test]
    fn cached_stats_must_match_extractor() {
        let x = cloud(50, 2);
        let cached = stats_for(&x, &FeatureExtractor::default()).unwrap();
        let other = FeatureExtractor::RandomProjection { dim: 2, seed: 0 };
        assert!(matches!(
            fid(StatsSource::Cached(&cached), StatsSource::Batch(&x), &other),
            Err(Error::ExtractorMismatch { .. })
        ));
        let e = FeatureExtractor::default();
        let direct = fid(StatsSource::Batch(&x), StatsSource::Batch(&cloud(50, 3)), &e).unwrap();
        let via_cache = fid(StatsSource::Cached(&cached), StatsSource::Batch(&cloud(50, 3)), &e).unwrap();
        assert_eq!(direct, via_cache);
    }

    #[test]
    fn optimal_fid_split_sizes() {
        let x = cloud(101, 4);
        let o = optimal_fid(&x, &FeatureExtractor::default(), 7).unwrap();
        assert_eq!((o.n_first, o.n_second), (50, 51));
        assert!(o.value > 0.0);
        assert_eq!(o, optimal_fid(&x, &FeatureExtractor::default(), 7).unwrap());
        assert!(optimal_fid(&cloud(3, 1), &FeatureExtractor::default(), 0).is_err());
    }

    #[test]
    fn mean_std_of_constant() {
        assert_eq!(mean_std([2.0, 2.0, 2.0].into_iter()), (2.0, 0.0));
        let (m, s) = mean_std([1.0, 3.0].into_iter());
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
