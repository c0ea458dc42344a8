//! On-disk formats: feature tensors, dataset manifests and model artifacts.

mod artifact;
mod feature_file;
mod manifest;

pub use artifact::{
    ModelArtifact, PayloadBlock, ARTIFACT_HEADER_LEN, ARTIFACT_MAGIC, ARTIFACT_TRAILER_LEN,
    ARTIFACT_VERSION, BLOCK_HEADER_LEN,
};
pub use feature_file::{
    decode_feature, decode_header, encode_feature, header_len, read_feature_file,
    write_feature_file, Dtype, FeatureFileHeader, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{
    load_manifest, DatasetManifest, Label, ManifestEntry, Split, SplitCounts,
};
