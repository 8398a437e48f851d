use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Linear β schedule with its cumulative tables.
///
/// Tables are stored 1-based: index 0 holds the `ᾱ_0 = 1` convention so that
/// `alpha_bar(t)` reads naturally for every step `0..=t_base`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_base: usize,
    t_active: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// One row of the schedule dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub t: usize,
    pub beta: f64,
    pub alpha_bar: f64,
    pub sqrt_alpha_bar: f64,
    pub sqrt_one_minus_alpha_bar: f64,
    pub sigma: f64,
}

/// Builds a linearly increasing β table of length `t_base` and marks the first
/// `t_active` steps as the active horizon. The horizon truncates the base table;
/// it does not re-span the β range.
pub fn build_schedule(
    t_base: usize,
    beta_start: f64,
    beta_end: f64,
    t_active: usize,
) -> Result<NoiseSchedule> {
    if t_base == 0 {
        return Err(Error::Parameter("t_base must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Parameter(format!(
            "beta bounds must satisfy 0 < start <= end < 1, got start={beta_start}, end={beta_end}"
        )));
    }
    if t_active == 0 || t_active > t_base {
        return Err(Error::Parameter(format!(
            "t_active must be in 1..={t_base}, got {t_active}"
        )));
    }

    let mut beta = Vec::with_capacity(t_base + 1);
    let mut alpha = Vec::with_capacity(t_base + 1);
    let mut alpha_bar = Vec::with_capacity(t_base + 1);
    beta.push(0.0);
    alpha.push(1.0);
    alpha_bar.push(1.0);

    for t in 1..=t_base {
        // Convex-combination form is exact at both endpoints.
        let b = if t_base == 1 {
            beta_start
        } else {
            let frac = (t - 1) as f64 / (t_base - 1) as f64;
            (1.0 - frac) * beta_start + frac * beta_end
        };
        let a = 1.0 - b;
        let prev = alpha_bar[t - 1];
        beta.push(b);
        alpha.push(a);
        alpha_bar.push(prev * a);
    }

    Ok(NoiseSchedule {
        t_base,
        t_active,
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    /// 1000-step schedule from 1e-4 to 0.02 with a 200-step active horizon.
    pub fn standard() -> Self {
        build_schedule(1000, 1e-4, 0.02, 200).expect("standard schedule parameters are valid")
    }

    pub fn t_base(&self) -> usize {
        self.t_base
    }

    pub fn t_active(&self) -> usize {
        self.t_active
    }

    /// Same tables with a different active horizon. A horizon of 0 is allowed
    /// here; it turns sampling into the identity on the initializer.
    pub fn with_active(&self, t_active: usize) -> Result<Self> {
        if t_active > self.t_base {
            return Err(Error::Parameter(format!(
                "t_active must be in 0..={}, got {t_active}",
                self.t_base
            )));
        }
        Ok(Self {
            t_active,
            ..self.clone()
        })
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_active {
            return Err(Error::Step {
                step: t,
                min: 1,
                max: self.t_active,
            });
        }
        Ok(())
    }

    /// Standard deviation of the fixed reverse-process variance,
    /// `sqrt((1 - ᾱ_{t-1}) / (1 - ᾱ_t) * β_t)`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.sigma_unchecked(t))
    }

    fn sigma_unchecked(&self, t: usize) -> f64 {
        let ratio = (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]);
        (ratio * self.beta[t]).sqrt()
    }

    /// Rows `1..=t_base`; σ is reported for every base step, not only active ones.
    pub fn rows(&self) -> Vec<ScheduleRow> {
        (1..=self.t_base)
            .map(|t| {
                let ab = self.alpha_bar[t];
                ScheduleRow {
                    t,
                    beta: self.beta[t],
                    alpha_bar: ab,
                    sqrt_alpha_bar: ab.sqrt(),
                    sqrt_one_minus_alpha_bar: (1.0 - ab).sqrt(),
                    sigma: self.sigma_unchecked(t),
                }
            })
            .collect()
    }

    /// Tab-separated dump with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("t\tbeta\talpha_bar\tsqrt_alpha_bar\tsqrt_one_minus_alpha_bar\tsigma\n");
        for row in self.rows() {
            let _ = writeln!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
                row.t,
                row.beta,
                row.alpha_bar,
                row.sqrt_alpha_bar,
                row.sqrt_one_minus_alpha_bar,
                row.sigma
            );
        }
        out
    }
}
