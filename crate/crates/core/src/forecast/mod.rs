//! Multi-task graph forecaster: node encoder, link and node heads,
//! training loop and the persistence baseline.

pub mod features;
pub mod model;
pub mod nn;
pub mod train;

pub use features::{default_sectors, FeatureScaler, FeaturedGraph, NodeFeatures};
pub use model::{persistence_predict, Architecture, ForecastBundle, ForecastModel, LossBreakdown, LossWeights};
pub use train::{train, walk_forward_split, Checkpoint, Split, TrainConfig, TrainingHistory};
