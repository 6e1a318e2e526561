//! Dataset handling: manifests, loading, synthetic generation, batch
//! planning, augmentation, and label-space operations.

pub mod augment;
pub mod batch;
pub mod convert;
pub mod manifest;
pub mod ops;
pub mod pseudo;
pub mod synth;

pub use augment::{augment, AugmentConfig};
pub use batch::{interleave, make_pk_batches, make_plain_batches, PlannedBatch};
pub use manifest::{load_manifest, load_sample, DatasetManifest, LoadedSample, Split};
pub use ops::{limit_identities, lip_to_five_mapping, merge_classes};
pub use pseudo::pseudo_label;
pub use synth::{generate_synthetic, SynthConfig};
