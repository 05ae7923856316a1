//! Embedding datasets and their on-disk formats.

mod dataset;
mod emb;
mod labels;
mod manifest;
mod split;
mod synth;

pub use dataset::{merge_label_spaces, EmbeddingDataset, LabelEntry};
pub use emb::{
    decode_embeddings, decode_header, encode_embeddings, read_embeddings, read_header, write_embeddings, EmbHeader,
    EMB_HEADER_LEN, EMB_MAGIC, EMB_VERSION,
};
pub use labels::{format_labels, parse_labels, read_labels, write_labels, LabelFile};
pub use manifest::{
    extractor_dim, merge_manifests, parse_splits, read_splits, write_dataset, write_splits, LoadedDataset, Manifest,
};
pub use split::{stratified_split, SplitFractions, SplitIndices, SplitPart, Splits, DEFAULT_SPLIT_SEED};
pub use synth::{gaussian_clusters, min_pairwise_distance, ClusterSpec};
