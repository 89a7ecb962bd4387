//! Shared fixtures for the benchmarks.

use gimo_core::bodymodel::BodyTemplate;
use gimo_core::fusion::{ModelConfig, ModelParams, Variant};
use gimo_core::synthgen::{build_dataset, Dataset, GenConfig};

/// A small default-layout dataset: one known scene, one new scene.
pub fn fixture_data(points: usize) -> Dataset {
    build_dataset(&GenConfig {
        points,
        object_points: points / 16,
        known_scenes: 1,
        new_scenes: 1,
        train: 8,
        test_known: 2,
        test_new: 2,
        ..GenConfig::default()
    })
    .expect("fixture dataset")
}

pub fn fixture_model(config: &ModelConfig, variant: Variant) -> ModelParams {
    ModelParams::init(config, variant, 0).expect("fixture model")
}

pub fn template() -> BodyTemplate {
    BodyTemplate::standard()
}
