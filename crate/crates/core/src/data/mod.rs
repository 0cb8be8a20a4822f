//! Data ingestion, feature and sample partitioning, the synthetic benchmark
//! generator, and z-score normalization.

mod csv_io;
mod normalize;
mod partition;
mod synthetic;

pub use csv_io::{ingest_csv, ingest_features, read_csv, read_features, write_csv, ColumnRef, Dataset};
pub use normalize::{fit_apply_normalization, NormalizationStats};
pub use partition::{distribute_samples, shard_indices, split_features, FeatureSplit, PartitionPlan};
pub use synthetic::{
    column_ranges, generate_synthetic, inject_noise, inject_noise_with_range, inject_outliers,
    inject_outliers_with_range, synthetic_target, SyntheticSpec,
};
