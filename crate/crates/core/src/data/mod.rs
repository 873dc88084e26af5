//! Recording ingestion, registries, and window segmentation.

pub mod activities;
pub mod dataset;
pub mod recording;
pub mod sensors;

pub use activities::{Activity, ActivityGroup, GROUPS};
pub use dataset::{Dataset, Example, STRIDE, WINDOW};
pub use recording::ImuRecording;
pub use sensors::{SensorConfig, SensorId, CONFIGS};
