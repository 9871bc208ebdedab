//! Deterministic synthesis of single and composite degradations.

mod dataset;
mod degrade;
mod procedural;

pub use dataset::{
    canonical_recipes, generate_dataset, generate_samples, sample_bytes, single_recipes, DatasetManifest,
    GenerateConfig, ManifestHeader, ManifestRow, Sample, GENERATOR, GENERATOR_VERSION,
};
pub use degrade::{
    apply_haze, apply_low_light, apply_particles, compose, label_key, Component, Degradation,
    DegradationRecipe, HazeParams, LowLightParams, Particles, RainParams, SnowParams,
};
pub use procedural::procedural_image;
