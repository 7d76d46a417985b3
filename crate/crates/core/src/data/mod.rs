//! Samples, synthetic generation, preprocessing, sampling and splits.

pub mod kfold;
pub mod manifest;
pub mod preprocess;
pub mod sample;
pub mod sampler;
pub mod synthetic;

pub use kfold::{stratified_kfold, FoldAssignment};
pub use manifest::{
    decode_blob, encode_blob, ingest_manifest, write_dataset, DatasetManifest, ManifestRecord,
    SampleSource,
};
pub use preprocess::{
    augment, bbox_crop, mask_bbox, normalize, resize_bilinear, resize_normalize, AugmentPolicy,
    CropBox,
};
pub use sample::{Dataset, Domain, LabeledSample, Split};
pub use sampler::{BalancedSampler, Cells, DomainBatch};
pub use synthetic::{generate_synthetic, parse_shift, ShiftPreset, SynthMode, SyntheticConfig};
