//! Temporal synchronization of two videos of a cyclic process.
//!
//! Each 3-frame window of a video is embedded into a feature vector, the
//! cosine similarities between the two videos' vectors form a matrix, and a
//! constrained multi-start shortest-path search through that matrix yields
//! the frame correspondence. ECG R-peaks give per-frame cardiac phase, from
//! which the ground-truth matrix, training targets and path scores follow.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, the width used by the pipeline and CLI.

pub mod ecg;
pub mod embedding;
pub mod error;
pub mod ingest;
pub mod matrix;
pub mod pathfinding;
pub mod phase;
pub mod pipeline;
mod scalar;
pub mod scoring;
pub mod synth;
pub mod training;

pub use error::{Error, Result, Stage};
pub use scalar::Scalar;

pub type Frame = ingest::Frame<f64>;
pub type FrameSeries = ingest::FrameSeries<f64>;
pub type FeatureSeries = embedding::FeatureSeries<f64>;
pub type EcgTrace = ecg::EcgTrace<f64>;
pub type PeakList = ecg::PeakList<f64>;
pub type PhaseTrack = phase::PhaseTrack<f64>;
pub type SyncMatrix = matrix::SyncMatrix<f64>;
pub type SyncPath = pathfinding::SyncPath<f64>;
pub type ToyMlp = training::ToyMlp<f64>;

pub type Frame32 = ingest::Frame<f32>;
pub type FrameSeries32 = ingest::FrameSeries<f32>;
pub type FeatureSeries32 = embedding::FeatureSeries<f32>;
pub type SyncMatrix32 = matrix::SyncMatrix<f32>;
pub type SyncPath32 = pathfinding::SyncPath<f32>;
pub type ToyMlp32 = training::ToyMlp<f32>;
