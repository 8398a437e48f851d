//! Closed-form DDPM mathematics over 1-D score sequences.

mod process;
mod sampler;
mod schedule;
mod scores;

pub use process::{posterior_mean, predict_x0_from_eps, q_sample, q_sample_stepwise};
pub use sampler::{denoise_step, generate_scores, NoisePredictor};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleRow};
pub use scores::{scale_scores, unscale_scores, GaussianDraw, NoisyScores, RawScores, ScaledScores};
