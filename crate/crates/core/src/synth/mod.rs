//! Deterministic synthetic contrail scenes and their on-disk layout.

mod dataset;
mod scene;

pub use dataset::{Dataset, Manifest, Sample, MANIFEST_FILE, SCHEMA_VERSION};
pub use scene::{generate, generate_sample, Contrail, Range, SceneConfig};

#[cfg(test)]
mod tests;
