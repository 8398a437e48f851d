//! Video summarization by denoising diffusion over frame-importance scores.
//!
//! A cross-attention noise predictor learns to denoise per-frame importance
//! sequences conditioned on frame features. At test time the reverse chain
//! starts from a scaled unsupervised score sequence instead of pure noise and
//! runs over a truncated horizon. Summaries are picked by a 0/1 knapsack over
//! shots and scored with F-score and rank correlations.

pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod evaluate;
pub mod predictor;
pub mod summarize;
pub mod training;
pub mod unsupervised;

pub mod rng;

pub use error::{Error, Result};

pub use dataset::{FrameFeatures, VideoRecord};
pub use diffusion::{NoiseSchedule, NoisyScores, RawScores, ScaledScores};
pub use predictor::{Predictor, PredictorConfig, PredictorParams};
