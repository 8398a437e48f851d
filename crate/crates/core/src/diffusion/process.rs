use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use super::scores::{GaussianDraw, NoisyScores, ScaledScores};
use crate::error::{Error, Result};

/// Closed-form forward noising: `x_t = sqrt(ᾱ_t) x_0 + sqrt(1 - ᾱ_t) ε`.
pub fn q_sample(
    schedule: &NoiseSchedule,
    x0: &ScaledScores,
    t: usize,
    eps: &GaussianDraw,
) -> Result<NoisyScores> {
    schedule.check_step(t)?;
    if x0.len() != eps.len() {
        return Err(Error::shape("noise draw", x0.len(), eps.len()));
    }
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0
        .values()
        .iter()
        .zip(&eps.values)
        .map(|(x, e)| signal * x + noise * e)
        .collect();
    Ok(NoisyScores::new(values, t))
}

/// Forward noising one Markov step at a time, `t` independent draws.
/// Exists as a reference for [`q_sample`].
pub fn q_sample_stepwise<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x0: &ScaledScores,
    t: usize,
    rng: &mut R,
) -> Result<NoisyScores> {
    schedule.check_step(t)?;
    let mut x = x0.values().to_vec();
    for k in 1..=t {
        let keep = schedule.alpha(k).sqrt();
        let noise = schedule.beta(k).sqrt();
        for v in x.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v = keep * *v + noise * e;
        }
    }
    Ok(NoisyScores::new(x, t))
}

/// Mean of `q(x_{t-1} | x_t, x_0)`.
pub fn posterior_mean(
    schedule: &NoiseSchedule,
    x_t: &NoisyScores,
    x0: &ScaledScores,
) -> Result<Vec<f64>> {
    let t = x_t.step;
    schedule.check_step(t)?;
    if x0.len() != x_t.len() {
        return Err(Error::shape("clean scores", x_t.len(), x0.len()));
    }
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let beta = schedule.beta(t);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let ct = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    Ok(x0
        .values()
        .iter()
        .zip(&x_t.values)
        .map(|(x0, xt)| c0 * x0 + ct * xt)
        .collect())
}

/// Inverts the closed-form noising given a noise estimate.
pub fn predict_x0_from_eps(
    schedule: &NoiseSchedule,
    x_t: &NoisyScores,
    eps_hat: &[f64],
) -> Result<Vec<f64>> {
    let t = x_t.step;
    schedule.check_step(t)?;
    if eps_hat.len() != x_t.len() {
        return Err(Error::shape("noise estimate", x_t.len(), eps_hat.len()));
    }
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t
        .values
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| (x - noise * e) / signal)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::RawScores;
    use crate::diffusion::scale_scores;
    use crate::rng::seeded;

    fn x0(values: &[f64]) -> ScaledScores {
        scale_scores(&RawScores::new(values.to_vec()).unwrap())
    }

    #[test]
    fn zero_noise_is_pure_signal() {
        let s = NoiseSchedule::standard();
        let x = x0(&[0.1, 0.9, 0.5]);
        let out = q_sample(&s, &x, 37, &GaussianDraw::zeros(3)).unwrap();
        let k = s.alpha_bar(37).sqrt();
        for (o, v) in out.values.iter().zip(x.values()) {
            assert_eq!(*o, k * v);
        }
        assert_eq!(out.step, 37);
    }

    #[test]
    fn signal_nearly_destroyed_at_end_of_base_table() {
        let s = NoiseSchedule::standard().with_active(1000).unwrap();
        let x = x0(&[0.0, 1.0, 0.2, 0.8]);
        let out = q_sample(&s, &x, 1000, &GaussianDraw::zeros(4)).unwrap();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(norm(&out.values) <= 0.0064 * norm(x.values()));
    }

    #[test]
    fn stepwise_single_step_equals_closed_form() {
        let s = NoiseSchedule::standard();
        let x = x0(&[0.3, 0.6]);
        let mut a = seeded(5);
        let stepwise = q_sample_stepwise(&s, &x, 1, &mut a).unwrap();
        let mut b = seeded(5);
        let eps = GaussianDraw::sample(&mut b, 2);
        let closed = q_sample(&s, &x, 1, &eps).unwrap();
        // sqrt(α_1) = sqrt(ᾱ_1) and sqrt(β_1) = sqrt(1 - ᾱ_1) for the first step
        for (p, q) in stepwise.values.iter().zip(&closed.values) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn stepwise_without_noise_collapses_to_mean() {
        let s = NoiseSchedule::standard();
        let x = x0(&[0.3, 0.6, 1.0]);
        let mut expected: Vec<f64> = x.values().to_vec();
        for k in 1..=120 {
            for v in expected.iter_mut() {
                *v *= s.alpha(k).sqrt();
            }
        }
        for (e, v) in expected.iter().zip(x.values()) {
            assert!((e - s.alpha_bar(120).sqrt() * v).abs() < 1e-12);
        }
    }

    #[test]
    fn step_and_shape_errors() {
        let s = NoiseSchedule::standard();
        let x = x0(&[0.3, 0.6]);
        assert!(matches!(
            q_sample(&s, &x, 0, &GaussianDraw::zeros(2)),
            Err(Error::Step { .. })
        ));
        assert!(matches!(
            q_sample(&s, &x, 201, &GaussianDraw::zeros(2)),
            Err(Error::Step { .. })
        ));
        assert!(matches!(
            q_sample(&s, &x, 3, &GaussianDraw::zeros(3)),
            Err(Error::Shape { .. })
        ));
        let xt = NoisyScores::new(vec![0.0, 0.0], 0);
        assert!(posterior_mean(&s, &xt, &x).is_err());
        assert!(predict_x0_from_eps(&s, &xt, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn first_step_posterior_is_clean_signal() {
        let s = NoiseSchedule::standard();
        let x = x0(&[0.3, 0.6]);
        let xt = NoisyScores::new(vec![5.0, -7.0], 1);
        let mean = posterior_mean(&s, &xt, &x).unwrap();
        for (m, v) in mean.iter().zip(x.values()) {
            assert!((m - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_estimate_rescales() {
        let s = NoiseSchedule::standard();
        let xt = NoisyScores::new(vec![0.5, -0.25], 100);
        let out = predict_x0_from_eps(&s, &xt, &[0.0, 0.0]).unwrap();
        let k = s.alpha_bar(100).sqrt();
        assert_eq!(out, vec![0.5 / k, -0.25 / k]);
    }
}
