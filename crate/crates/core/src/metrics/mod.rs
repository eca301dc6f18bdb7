//! Fréchet distance between Gaussian fits of feature clouds, with the
//! split-half floor and repeat-variance protocols.

mod cache;
mod extractor;
mod protocol;
mod stats;

pub use cache::{decode_stats, encode_stats, load_stats, save_stats, CachedStats};
pub use extractor::{random_conv_network, FeatureExtractor};
pub use protocol::{
    fid, fid_record, fid_variance_protocol, mean_std, optimal_fid, pinned_subsample, stats_for, FidRecord, OptimalFid,
    StatsSource, VarianceConfig, VarianceMode, VarianceResult, VarianceRow,
};
pub use stats::{compute_stats, frechet_distance, matrix_sqrt_psd, FeatureStats, EIGEN_FLOOR};
