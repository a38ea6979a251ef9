//! Datasets, IDX loading, synthetic digits, and client partitioning.

mod dataset;
mod idx;
mod normalize;
mod partition;
mod synth;

pub use dataset::Dataset;
#[cfg(test)]
pub(crate) use dataset::histogram;
pub use idx::{
    encode_images, encode_labels, load_idx, load_mnist_dir, parse_images, parse_labels,
    IMAGE_MAGIC, LABEL_MAGIC, TEST_FILES, TRAIN_FILES,
};
pub use normalize::{
    apply_normalization, client_normalization, client_views, stepped_offsets, ClientView,
    NormalizationScheme,
};
pub use partition::{
    expected_skewedness, gaussian_sizes, partition_full, partition_gaussian_sizes, partition_iid,
    partition_skewed, share_data, Normalization, PartitionPlan, SizeRule,
};
pub use synth::{synth_dataset, SYNTH_SIDE};
