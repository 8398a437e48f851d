use rand::Rng;

use super::schedule::NoiseSchedule;
use super::scores::{scale_scores, unscale_scores, GaussianDraw, NoisyScores, RawScores};
use crate::dataset::FrameFeatures;
use crate::error::{Error, Result};

/// Anything that estimates the noise component of `x_t` given frame features.
/// The step is read from `x_t.step`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &NoisyScores, features: &FrameFeatures) -> Result<Vec<f64>>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, x_t: &NoisyScores, features: &FrameFeatures) -> Result<Vec<f64>> {
        (**self).predict_noise(x_t, features)
    }
}

/// One ancestral step `x_t -> x_{t-1}` with the fixed variance `σ_t² I`.
pub fn denoise_step<P: NoisePredictor + ?Sized>(
    schedule: &NoiseSchedule,
    predictor: &P,
    x_t: &NoisyScores,
    features: &FrameFeatures,
    z: &GaussianDraw,
) -> Result<NoisyScores> {
    let t = x_t.step;
    schedule.check_step(t)?;
    if features.n_frames() != x_t.len() {
        return Err(Error::shape("frame features", x_t.len(), features.n_frames()));
    }
    if z.len() != x_t.len() {
        return Err(Error::shape("sampling noise", x_t.len(), z.len()));
    }
    let eps_hat = predictor.predict_noise(x_t, features)?;
    if eps_hat.len() != x_t.len() {
        return Err(Error::shape("predicted noise", x_t.len(), eps_hat.len()));
    }

    let alpha = schedule.alpha(t);
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let eps_coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sigma = schedule.sigma(t)?;
    let values = x_t
        .values
        .iter()
        .zip(&eps_hat)
        .zip(&z.values)
        .map(|((x, e), z)| inv_sqrt_alpha * (x - eps_coef * e) + sigma * z)
        .collect();
    Ok(NoisyScores::new(values, t - 1))
}

/// Runs the reverse chain from the scaled initializer at `t_active` down to 0.
///
/// Intermediate values are never clamped; only the final unscale clamps to `[0, 1]`.
pub fn generate_scores<P, R>(
    schedule: &NoiseSchedule,
    predictor: &P,
    features: &FrameFeatures,
    init: &RawScores,
    rng: &mut R,
) -> Result<RawScores>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    if init.len() != features.n_frames() {
        return Err(Error::shape("initial scores", features.n_frames(), init.len()));
    }
    if schedule.t_active() == 0 {
        // Skip the scale/unscale pair, which is exact only up to rounding.
        return Ok(init.clone());
    }
    let n = init.len();
    let mut x = NoisyScores::new(scale_scores(init).values().to_vec(), schedule.t_active());
    while x.step > 0 {
        let z = if x.step > 1 {
            GaussianDraw::sample(rng, n)
        } else {
            GaussianDraw::zeros(n)
        };
        x = denoise_step(schedule, predictor, &x, features, &z)?;
    }
    Ok(unscale_scores(&x.values))
}
