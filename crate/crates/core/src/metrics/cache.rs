//! Feature-statistics cache files.
//!
//! ```text
//! "DBFS" | version: u32 | extractor id (u32 length + UTF-8)
//! count: u64 | dim: u64 | mean: dim x f64 | covariance: dim*dim x f64 (column-major)
//! digest: u64 (FNV-1a of every preceding byte)
//! ```

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::stats::FeatureStats;
use crate::binio::{put_f64s, put_string, Reader};
use crate::digest::fnv1a64;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DBFS";
pub const VERSION: u32 = 1;

/// Statistics tagged with the extractor that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedStats {
    pub extractor: String,
    pub stats: FeatureStats,
}

pub fn encode_stats(c: &CachedStats) -> Vec<u8> {
    let d = c.stats.dim();
    let mut out = Vec::with_capacity(32 + c.extractor.len() + 8 * d * (d + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_string(&mut out, &c.extractor);
    out.extend_from_slice(&(c.stats.count as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    put_f64s(&mut out, c.stats.mean.as_slice());
    put_f64s(&mut out, c.stats.cov.as_slice());
    let digest = fnv1a64(&out);
    out.extend_from_slice(&digest.to_le_bytes());
    out
}

pub fn decode_stats(bytes: &[u8]) -> Result<CachedStats> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION, "feature statistics cache")?;
    let extractor = r.string()?;
    let count = r.u64()? as usize;
    let d = r.u64()? as usize;
    let mean = r.f64s(d)?;
    let cov = r.f64s(d.checked_mul(d).ok_or_else(|| Error::CorruptHeader("dimension overflow".into()))?)?;
    let body_end = r.position();
    let stored = r.u64()?;
    if r.remaining() != 0 {
        return Err(Error::CorruptHeader(format!("{} trailing bytes", r.remaining())));
    }
    let computed = fnv1a64(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::DigestMismatch { stored, computed });
    }
    let stats = FeatureStats::new(DVector::from_vec(mean), DMatrix::from_vec(d, d, cov), count)?;
    Ok(CachedStats { extractor, stats })
}

pub fn save_stats(c: &CachedStats, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_stats(c))?;
    Ok(())
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<CachedStats> {
    decode_stats(&fs::read(path)?)
}
