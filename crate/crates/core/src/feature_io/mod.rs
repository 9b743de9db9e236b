//! Feature packs, the RADF container, dataset manifests and the synthetic
//! dataset generator.

pub mod container;
mod manifest;
mod mask;
mod pack;
mod synth;

pub use manifest::{write_synthetic_dataset, Dataset, Manifest, ManifestEntry, MANIFEST_FILE};
pub(crate) use mask::encode_png;
pub use mask::BinaryMask;
pub(crate) use pack::{ensure_valid, l2_norm};
pub use pack::{
    read_feature_pack, validate_pack, write_feature_pack, FeaturePack, Label, LayerGrid, Split, Violation,
    NORM_TOLERANCE, PACK_MAGIC,
};
pub use synth::{generate_synthetic_dataset, SynthDataset, SynthSpec};
