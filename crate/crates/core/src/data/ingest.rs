//! Frames-on-disk ingestion.
//!
//! A directory holds one file per frame plus `manifest.txt` with one
//! `source_id frame_index filename` line per frame (`#` starts a comment).
//! Files ending in `.dbds` are single-frame dataset files; anything else is
//! raw 8-bit grayscale of the configured size with native range `[0, 255]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::dataset::{load_dataset, FrameDataset, ManifestEntry};
use super::frames::{resize, subsample_frames};
use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestConfig {
    /// Size of raw grayscale frames.
    pub raw_height: usize,
    pub raw_width: usize,
    /// Keep every `stride`-th frame of each source.
    pub stride: usize,
    pub target: Option<(usize, usize)>,
}

struct Frame {
    entry: ManifestEntry,
    native: Vec<f64>,
    shape: ItemShape,
    range: (f64, f64),
}

pub fn parse_frame_manifest(text: &str) -> Result<Vec<(ManifestEntry, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "{MANIFEST_FILE} line {}: expected `source_id frame_index filename`",
                no + 1
            )));
        }
        let frame_index = parts[1]
            .parse()
            .map_err(|_| Error::Parse(format!("{MANIFEST_FILE} line {}: bad frame index {:?}", no + 1, parts[1])))?;
        out.push((
            ManifestEntry {
                source_id: parts[0].to_string(),
                frame_index,
            },
            parts[2].to_string(),
        ));
    }
    Ok(out)
}

fn read_frame(path: &Path, entry: ManifestEntry, cfg: &IngestConfig) -> Result<Frame> {
    if path.extension().is_some_and(|e| e == "dbds") {
        let d = load_dataset(path)?;
        if d.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "{} holds {} frames, expected 1",
                path.display(),
                d.len()
            )));
        }
        return Ok(Frame {
            entry,
            native: d.native_images().into_vec(),
            shape: d.shape(),
            range: (d.native_lo, d.native_hi),
        });
    }
    let bytes = fs::read(path)?;
    let want = cfg.raw_height * cfg.raw_width;
    if bytes.len() != want {
        return Err(Error::Truncated {
            needed: want,
            found: bytes.len(),
        });
    }
    Ok(Frame {
        entry,
        native: bytes.iter().map(|&b| f64::from(b)).collect(),
        shape: ItemShape::new(1, cfg.raw_height, cfg.raw_width),
        range: (0.0, 255.0),
    })
}

pub fn ingest_frame_dir(dir: impl AsRef<Path>, cfg: &IngestConfig) -> Result<FrameDataset> {
    let dir = dir.as_ref();
    let listing = parse_frame_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if listing.is_empty() {
        return Err(Error::InsufficientData(format!("{} lists no frames", dir.join(MANIFEST_FILE).display())));
    }
    // Group by source (sorted by id), order by frame index, then subsample.
    let mut by_source: BTreeMap<String, Vec<(ManifestEntry, String)>> = BTreeMap::new();
    for item in listing {
        by_source.entry(item.0.source_id.clone()).or_default().push(item);
    }
    let mut frames = Vec::new();
    for (_, mut list) in by_source {
        list.sort_by_key(|(e, _)| e.frame_index);
        for (entry, file) in subsample_frames(&list, cfg.stride)? {
            frames.push(read_frame(&dir.join(file), entry, cfg)?);
        }
    }
    let (shape, range) = (frames[0].shape, frames[0].range);
    if let Some(f) = frames.iter().find(|f| f.shape != shape || f.range != range) {
        return Err(Error::Shape(format!(
            "frame {}:{} is {} with range {:?}, expected {} with range {:?}",
            f.entry.source_id, f.entry.frame_index, f.shape, f.range, shape, range
        )));
    }
    let n = frames.len();
    let mut data = Vec::with_capacity(n * shape.len());
    let mut manifest = Vec::with_capacity(n);
    for f in frames {
        data.extend_from_slice(&f.native);
        manifest.push(f.entry);
    }
    let mut native = ImageBatch::from_vec(n, shape, data)?;
    if let Some((h, w)) = cfg.target {
        native = resize(&native, h, w)?;
    }
    FrameDataset::from_native(native, manifest, range.0, range.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parsing() {
        let m = parse_frame_manifest("# header\nvidA 0 a0.raw\n\nvidA 5 a5.raw # tail\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].0.frame_index, 5);
        assert_eq!(m[1].1, "a5.raw");
        assert!(parse_frame_manifest("vidA x a.raw").is_err());
        assert!(parse_frame_manifest("vidA 1").is_err());
    }

    #[test]
    fn ingest_raw_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::new();
        for src in ["b", "a"] {
            for k in 0..7u8 {
                let name = format!("{src}{k}.raw");
                fs::write(dir.path().join(&name), vec![k * 10; 4 * 6]).unwrap();
                text.push_str(&format!("{src} {k} {name}\n"));
            }
        }
        fs::write(dir.path().join(MANIFEST_FILE), text).unwrap();
        let cfg = IngestConfig {
            raw_height: 4,
            raw_width: 6,
            stride: 5,
            target: Some((2, 3)),
        };
        let d = ingest_frame_dir(dir.path(), &cfg).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.resolution(), (2, 3));
        let ids: Vec<(String, u64)> = d.manifest.iter().map(|e| (e.source_id.clone(), e.frame_index)).collect();
        assert_eq!(ids, vec![("a".into(), 0), ("a".into(), 5), ("b".into(), 0), ("b".into(), 5)]);
        let native = d.native_images();
        assert!(native.item(1).iter().all(|v| (v - 50.0).abs() < 1e-12));
    }
}
