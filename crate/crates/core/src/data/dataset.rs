//! In-memory frame datasets and the `DBDS` file format.
//!
//! ```text
//! "DBDS" | version: u32 | count: u64 | height: u64 | width: u64 | channels: u64
//! dtype: u8 (1 = f64) | native_lo: f64 | native_hi: f64
//! count x { source_id (u32 length + UTF-8) | frame_index: u64 }
//! count * channels * height * width x f64 (row-major)
//! digest: u64 (FNV-1a of every preceding byte)
//! ```

use std::fs;
use std::path::Path;

use crate::batch::{ImageBatch, ItemShape};
use crate::binio::{put_f64s, put_string, Reader};
use crate::digest::{fnv1a64, Fnv1a};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DBDS";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    pub source_id: String,
    pub frame_index: u64,
}

/// Images normalized to `[-1, 1]` from the native range `[native_lo, native_hi]`,
/// with one manifest entry per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDataset {
    pub images: ImageBatch,
    pub manifest: Vec<ManifestEntry>,
    pub native_lo: f64,
    pub native_hi: f64,
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::InvalidArgument(format!("native range [{lo}, {hi}] is empty or non-finite")));
    }
    Ok(())
}

impl FrameDataset {
    /// Wraps already-normalized images.
    pub fn new(images: ImageBatch, manifest: Vec<ManifestEntry>, native_lo: f64, native_hi: f64) -> Result<Self> {
        check_range(native_lo, native_hi)?;
        if manifest.len() != images.len() {
            return Err(Error::Length {
                expected: images.len(),
                got: manifest.len(),
            });
        }
        Ok(Self {
            images,
            manifest,
            native_lo,
            native_hi,
        })
    }

    /// Normalizes native-range images into a dataset.
    pub fn from_native(native: ImageBatch, manifest: Vec<ManifestEntry>, lo: f64, hi: f64) -> Result<Self> {
        check_range(lo, hi)?;
        let images = native.map(|v| normalize(v, lo, hi));
        Self::new(images, manifest, lo, hi)
    }

    /// Dataset of vectors whose stored values are used as-is.
    pub fn from_vectors(data: ImageBatch, source_id: &str) -> Result<Self> {
        let manifest = (0..data.len())
            .map(|i| ManifestEntry {
                source_id: source_id.to_string(),
                frame_index: i as u64,
            })
            .collect();
        Self::new(data, manifest, -1.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> ItemShape {
        self.images.shape()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.shape().height, self.shape().width)
    }

    pub fn native_images(&self) -> ImageBatch {
        self.images.map(|v| denormalize(v, self.native_lo, self.native_hi))
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select(indices),
            manifest: indices.iter().map(|&i| self.manifest[i].clone()).collect(),
            native_lo: self.native_lo,
            native_hi: self.native_hi,
        }
    }

    /// FNV-1a digest of the encoded file body.
    pub fn digest(&self) -> u64 {
        let bytes = encode_body(self);
        fnv1a64(&bytes)
    }
}

/// Affine map of `[lo, hi]` onto `[-1, 1]`.
pub fn normalize(v: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (v - lo) / (hi - lo) - 1.0
}

pub fn denormalize(v: f64, lo: f64, hi: f64) -> f64 {
    (v + 1.0) * 0.5 * (hi - lo) + lo
}

fn encode_body(d: &FrameDataset) -> Vec<u8> {
    let s = d.shape();
    let mut out = Vec::with_capacity(64 + d.images.as_slice().len() * 8 + d.manifest.len() * 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.len(), s.height, s.width, s.channels] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(DTYPE_F64);
    put_f64s(&mut out, &[d.native_lo, d.native_hi]);
    for e in &d.manifest {
        put_string(&mut out, &e.source_id);
        out.extend_from_slice(&e.frame_index.to_le_bytes());
    }
    put_f64s(&mut out, d.images.as_slice());
    out
}

pub fn encode_dataset(d: &FrameDataset) -> Vec<u8> {
    let mut out = encode_body(d);
    let digest = fnv1a64(&out);
    out.extend_from_slice(&digest.to_le_bytes());
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<FrameDataset> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION, "dataset file")?;
    let count = r.u64()? as usize;
    let (h, w, c) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
    let dtype = r.u8()?;
    if dtype != DTYPE_F64 {
        return Err(Error::CorruptHeader(format!("unsupported dtype code {dtype}")));
    }
    let range = r.f64s(2)?;
    let mut manifest = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let source_id = r.string()?;
        let frame_index = r.u64()?;
        manifest.push(ManifestEntry { source_id, frame_index });
    }
    let shape = ItemShape::new(c, h, w);
    let total = count
        .checked_mul(shape.len())
        .ok_or_else(|| Error::CorruptHeader("payload size overflow".into()))?;
    let data = r.f64s(total)?;
    let body_end = r.position();
    let stored = r.u64()?;
    if r.remaining() != 0 {
        return Err(Error::CorruptHeader(format!("{} trailing bytes", r.remaining())));
    }
    let computed = fnv1a64(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::DigestMismatch { stored, computed });
    }
    FrameDataset::new(ImageBatch::from_vec(count, shape, data)?, manifest, range[0], range[1])
}

pub fn save_dataset(d: &FrameDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<FrameDataset> {
    decode_dataset(&fs::read(path)?)
}

/// Digest of an arbitrary file's bytes, used by manifests.
pub fn file_digest(path: impl AsRef<Path>) -> Result<u64> {
    let bytes = fs::read(path)?;
    let mut h = Fnv1a::new();
    h.update(&bytes);
    Ok(h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FrameDataset {
        let images = ImageBatch::from_vec(3, ItemShape::new(1, 2, 2), (0..12).map(|v| v as f64 / 7.0 - 0.5).collect())
            .unwrap();
        let manifest = (0..3)
            .map(|i| ManifestEntry {
                source_id: format!("video{}", i % 2),
                frame_index: 5 * i,
            })
            .collect();
        FrameDataset::new(images, manifest, 0.0, 255.0).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let d = small();
        let bytes = encode_dataset(&d);
        assert_eq!(decode_dataset(&bytes).unwrap(), d);
        assert_eq!(encode_dataset(&decode_dataset(&bytes).unwrap()), bytes);
    }

    #[test]
    fn distinct_corruption_errors() {
        let bytes = encode_dataset(&small());
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 20]), Err(Error::Truncated { .. })));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode_dataset(&v), Err(Error::VersionMismatch { found: 9, .. })));
        let mut m = bytes.clone();
        m[1] = b'X';
        assert!(matches!(decode_dataset(&m), Err(Error::CorruptHeader(_))));
        let mut p = bytes;
        let last = p.len() - 12;
        p[last] ^= 0x40;
        assert!(matches!(decode_dataset(&p), Err(Error::DigestMismatch { .. })));
    }

    #[test]
    fn normalization_round_trip() {
        for v in [0.0, 12.5, 255.0, 77.3] {
            assert!((denormalize(normalize(v, 0.0, 255.0), 0.0, 255.0) - v).abs() < 1e-12);
        }
        assert_eq!(normalize(0.0, 0.0, 255.0), -1.0);
        assert_eq!(normalize(255.0, 0.0, 255.0), 1.0);
    }

    #[test]
    fn manifest_length_enforced() {
        let d = small();
        assert!(FrameDataset::new(d.images.clone(), d.manifest[..2].to_vec(), 0.0, 1.0).is_err());
    }
}
