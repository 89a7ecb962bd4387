//! Human motion prediction from past poses, eye gaze and a scene point cloud.

pub mod bodymodel;
pub mod diffcore;
pub mod evalkit;
pub mod error;
pub mod fusion;
pub mod params;
pub mod scenenet;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

pub use bodymodel::{BodyTemplate, MotionSequence, PoseFrame};
pub use diffcore::{Tape, Tensor, Var};
pub use evalkit::{MetricRow, Metrics, Predictor};
pub use fusion::{ModelConfig, ModelParams, Variant};
pub use scenenet::{GazeTrack, Scene, SceneFeatures};
pub use synthgen::{Dataset, Episode, GenConfig, Layout, Split};
pub use trainer::{LossTerms, LossWeights, TrainConfig, TrainLog};
