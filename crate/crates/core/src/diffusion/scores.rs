use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Per-frame importance scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScores(Vec<f64>);

/// Scores mapped affinely onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledScores(Vec<f64>);

/// A point on the diffusion chain together with the step it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyScores {
    pub values: Vec<f64>,
    pub step: usize,
}

/// i.i.d. standard normal draws, tagged with the seed of the stream they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDraw {
    pub values: Vec<f64>,
    pub seed: Option<u64>,
}

impl RawScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_unit_interval(&values, "")?;
        Ok(Self(values))
    }

    pub(crate) fn new_with_context(values: Vec<f64>, context: impl Into<String>) -> Result<Self> {
        check_unit_interval(&values, &context.into())?;
        Ok(Self(values))
    }

    /// Clamps every entry into `[0, 1]`; NaN becomes 0.
    pub fn clamped(values: &[f64]) -> Self {
        Self(values.iter().map(|v| clamp_unit(*v)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl ScaledScores {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps values already in `[-1, 1]`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (index, v) in values.iter().enumerate() {
            if !(-1.0..=1.0).contains(v) {
                return Err(Error::Domain {
                    index,
                    value: *v,
                    context: "scaled scores must lie in [-1, 1]".into(),
                });
            }
        }
        Ok(Self(values))
    }
}

impl NoisyScores {
    pub fn new(values: Vec<f64>, step: usize) -> Self {
        Self { values, step }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl GaussianDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        Self {
            values: (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            seed: None,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn check_unit_interval(values: &[f64], context: &str) -> Result<()> {
    for (index, v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::Domain {
                index,
                value: *v,
                context: context.to_string(),
            });
        }
    }
    Ok(())
}

/// `x -> 2x - 1`.
pub fn scale_scores(x: &RawScores) -> ScaledScores {
    ScaledScores(x.0.iter().map(|v| 2.0 * v - 1.0).collect())
}

/// `x -> clamp((x + 1) / 2, 0, 1)`. Sampler output may overshoot `[-1, 1]`.
pub fn unscale_scores(x: &[f64]) -> RawScores {
    RawScores(x.iter().map(|v| clamp_unit((v + 1.0) / 2.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scale_endpoints() {
        let raw = RawScores::new(vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(scale_scores(&raw).values(), &[-1.0, 0.0, 1.0]);
        let raw = RawScores::new(vec![0.25]).unwrap();
        assert_eq!(scale_scores(&raw).values(), &[-0.5]);
    }

    #[test]
    fn out_of_range_rejected() {
        let err = RawScores::new(vec![0.1, 1.2]).unwrap_err();
        assert!(matches!(err, Error::Domain { index: 1, .. }));
        assert!(RawScores::new(vec![-0.01]).is_err());
        assert!(RawScores::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn unscale_inverts_and_clamps() {
        assert_eq!(unscale_scores(&[-1.0, 0.0, 1.0]).values(), &[0.0, 0.5, 1.0]);
        assert_eq!(unscale_scores(&[-1.3, 1.2]).values(), &[0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(values in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            let raw = RawScores::new(values.clone()).unwrap();
            let back = unscale_scores(scale_scores(&raw).values());
            for (a, b) in values.iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
