//! Dataset construction: frame subsampling and resizing, synthetic phantom
//! and Gaussian-mixture generators, and the on-disk dataset format.

mod dataset;
mod frames;
mod gmm;
mod ingest;
mod phantom;

pub use dataset::{
    decode_dataset, denormalize, encode_dataset, file_digest, load_dataset, normalize, save_dataset, FrameDataset,
    ManifestEntry,
};
pub use frames::{resize, subsample_frames};
pub use gmm::{generate_gmm_dataset, GmmSamples};
pub use ingest::{ingest_frame_dir, parse_frame_manifest, IngestConfig, MANIFEST_FILE};
pub use phantom::{generate_phantoms, IntensityMixture, PhantomParams};
