//! WiFi-CSI sensing pipeline: raw complex CSI ingestion, amplitude and Doppler
//! feature extraction, subcarrier sub-sampling, a lightweight transformer
//! classifier with training and gradient verification, and an inference-latency
//! benchmark harness.

pub mod bench;
pub mod csi;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Real, Tensor};

pub use num_complex;
