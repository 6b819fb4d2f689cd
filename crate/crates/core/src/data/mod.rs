//! File formats, dataset manifests, JSON configs and synthetic data.

pub mod config;
pub mod manifest;
pub mod pfts;
pub mod synth;

pub use config::{load_json, write_canonical_json};
pub use manifest::{Manifest, ManifestEntry};
pub use pfts::{import_csv, read_sequence, write_sequence};
pub use synth::{generate, write_dataset, Family, SyntheticItem, SyntheticSpec};
