use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FrameFeatures, VideoRecord};
use crate::diffusion::RawScores;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::summarize::{summarize_video, ShotSegmentation, DEFAULT_SUMMARY_RATIO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceProfile {
    /// One constant level per shot.
    Blocky,
    /// Clipped random walk over frames.
    Smooth,
}

impl FromStr for ImportanceProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blocky" => Ok(Self::Blocky),
            "smooth" => Ok(Self::Smooth),
            other => Err(Error::Config(format!("unknown importance profile `{other}`"))),
        }
    }
}

impl fmt::Display for ImportanceProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Blocky => "blocky",
            Self::Smooth => "smooth",
        })
    }
}

/// Parameters of the synthetic benchmark.
///
/// Features are `prototype(shot) + feature_noise·N(0, I) + feature_signal·(g - 0.5)·u`
/// where `u` is a unit direction shared by the whole dataset and prototypes are
/// orthogonal to `u`. Annotator `k` scores `clamp(g + b_k(shot) + e_k)` with
/// `b_k(shot), e_k ~ N(0, annotator_noise²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub d_feature: usize,
    pub n_annotators: usize,
    pub annotator_noise: f64,
    pub n_shots: usize,
    pub importance_profile: ImportanceProfile,
    pub seed: u64,
    pub feature_signal: f64,
    pub feature_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_videos: 20,
            frames_per_video: 120,
            d_feature: 32,
            n_annotators: 5,
            annotator_noise: 0.2,
            n_shots: 12,
            importance_profile: ImportanceProfile::Blocky,
            seed: 0,
            feature_signal: 2.0,
            feature_noise: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.n_videos == 0 || self.frames_per_video == 0 || self.n_annotators == 0 || self.n_shots == 0 {
            return bad("counts must be positive".into());
        }
        if self.d_feature < 2 {
            return bad(format!("d_feature must be at least 2, got {}", self.d_feature));
        }
        if self.n_shots > self.frames_per_video {
            return bad(format!(
                "{} shots do not fit in {} frames",
                self.n_shots, self.frames_per_video
            ));
        }
        if !(0.0..=0.5).contains(&self.annotator_noise) {
            return bad(format!("annotator_noise must be in [0, 0.5], got {}", self.annotator_noise));
        }
        if !(self.feature_signal.is_finite() && self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return bad("feature_signal and feature_noise must be finite, noise non-negative".into());
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut SeededRng, d: usize) -> Array1<f64> {
    Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Shot lengths proportional to U(0.5, 1.5) weights, each at least one frame.
fn shot_lengths(rng: &mut SeededRng, n_frames: usize, n_shots: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..n_shots).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let spare = n_frames - n_shots;
    let exact: Vec<f64> = weights.iter().map(|w| w / total * spare as f64).collect();
    let mut lengths: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut leftover = n_frames - lengths.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..n_shots).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a].fract(), exact[b].fract());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle() {
        if leftover == 0 {
            break;
        }
        lengths[i] += 1;
        leftover -= 1;
    }
    lengths
}

fn planted_curve(rng: &mut SeededRng, profile: ImportanceProfile, seg: &ShotSegmentation) -> Vec<f64> {
    let n = seg.n_frames();
    match profile {
        ImportanceProfile::Blocky => {
            let mut g = vec![0.0; n];
            for &[s, e] in seg.shots() {
                let level: f64 = rng.random_range(0.0..1.0);
                g[s..e].fill(level);
            }
            g
        }
        ImportanceProfile::Smooth => {
            let mut g = Vec::with_capacity(n);
            let mut level: f64 = rng.random_range(0.2..0.8);
            for _ in 0..n {
                g.push(level);
                let step: f64 = rng.sample(StandardNormal);
                level = (level + 0.08 * step).clamp(0.0, 1.0);
            }
            g
        }
    }
}

/// Seed-deterministic synthetic dataset. Video `i` depends only on `(seed, i)`,
/// and annotator noise comes from its own stream, so changing `annotator_noise`
/// leaves curves, shots and features untouched.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<VideoRecord>> {
    spec.validate()?;
    let d = spec.d_feature;
    let n = spec.frames_per_video;

    let mut dataset_rng = seeded(derive_seed(spec.seed, "direction"));
    let mut direction = normal_vec(&mut dataset_rng, d);
    let norm = direction.dot(&direction).sqrt();
    direction /= norm;

    (0..spec.n_videos)
        .map(|i| {
            let mut rng = seeded(derive_seed(spec.seed, &format!("video-{i}")));
            let seg = ShotSegmentation::from_lengths(&shot_lengths(&mut rng, n, spec.n_shots))?;
            let g = planted_curve(&mut rng, spec.importance_profile, &seg);

            let mut features = Array2::<f64>::zeros((n, d));
            for &[s, e] in seg.shots() {
                let mut proto = normal_vec(&mut rng, d);
                let along = proto.dot(&direction);
                proto.scaled_add(-along, &direction);
                for frame in s..e {
                    let noise = normal_vec(&mut rng, d);
                    let mut row = features.row_mut(frame);
                    row.assign(&proto);
                    row.scaled_add(spec.feature_noise, &noise);
                    row.scaled_add(spec.feature_signal * (g[frame] - 0.5), &direction);
                }
            }

            let mut anno_rng = seeded(derive_seed(spec.seed, &format!("video-{i}-annotators")));
            let sigma = spec.annotator_noise;
            let mut annotations = Vec::with_capacity(spec.n_annotators);
            for _ in 0..spec.n_annotators {
                let mut scores = vec![0.0; n];
                for &[s, e] in seg.shots() {
                    let bias: f64 = sigma * anno_rng.sample::<f64, _>(StandardNormal);
                    for frame in s..e {
                        let noise: f64 = sigma * anno_rng.sample::<f64, _>(StandardNormal);
                        scores[frame] = (g[frame] + bias + noise).clamp(0.0, 1.0);
                    }
                }
                annotations.push(RawScores::new(scores)?);
            }

            let user_summaries = annotations
                .iter()
                .map(|a| summarize_video(a, &seg, DEFAULT_SUMMARY_RATIO).map(|s| s.frame_mask))
                .collect::<Result<Vec<_>>>()?;

            let record = VideoRecord {
                id: format!("syn_{i:03}"),
                features: FrameFeatures::new(features),
                annotations,
                change_points: seg,
                user_summaries: Some(user_summaries),
                n_frames_original: n * 15,
                picks: Some((0..n).map(|k| k * 15).collect()),
                planted_truth: Some(RawScores::new(g)?),
            };
            record.validate()?;
            Ok(record)
        })
        .collect()
}
