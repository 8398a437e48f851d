//! Summary F-scores, rank correlations, and end-to-end checkpoint evaluation.

mod metrics;

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

pub use metrics::{
    average_ranks, fscore, fscore_protocol, kendall_tau, pearson, spearman_rho, FScore, FScoreMode,
};

use crate::dataset::{SplitManifest, VideoRecord};
use crate::diffusion::{generate_scores, NoisePredictor, NoiseSchedule, RawScores};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::summarize::{summarize_video, DEFAULT_SUMMARY_RATIO};
use crate::unsupervised::{score_video, ScorerSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalProtocol {
    pub fscore_mode: FScoreMode,
    pub n_splits: usize,
    pub summary_ratio: f64,
    /// Fail on test videos without user summaries. When off, their F-score is NaN.
    pub require_fscore: bool,
    /// Seeds the reverse-chain noise; each video derives its own stream from it.
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            fscore_mode: FScoreMode::Avg,
            n_splits: 5,
            summary_ratio: DEFAULT_SUMMARY_RATIO,
            require_fscore: true,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::Config("n_splits must be at least 1".into()));
        }
        if !(self.summary_ratio > 0.0 && self.summary_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "summary ratio must lie in (0, 1], got {}",
                self.summary_ratio
            )));
        }
        Ok(())
    }
}

/// Metrics of one score curve for one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMetrics {
    pub fscore: f64,
    /// Mean over annotators of τ-b between the curve and each annotation.
    pub tau: f64,
    pub rho: f64,
    /// Against the planted curve, when the video has one.
    pub tau_truth: f64,
    pub rho_truth: f64,
}

#[derive(Debug, Clone)]
pub struct VideoEval {
    pub id: String,
    pub diffusion: ArmMetrics,
    pub unsupervised: ArmMetrics,
    pub initial: RawScores,
    pub generated: RawScores,
    pub annotation_mean: Vec<f64>,
}

impl VideoEval {
    pub fn curves_tsv(&self) -> String {
        score_curves_tsv(&self.initial, &self.generated, &self.annotation_mean)
    }
}

/// Tab-separated curves: frame, initializer, generated, annotation mean.
pub fn score_curves_tsv(initial: &RawScores, generated: &RawScores, annotation_mean: &[f64]) -> String {
    let mut out = String::from("frame\tunsup_score\tdiffusion_score\tannotation_mean\n");
    for (i, ((u, d), m)) in initial
        .values()
        .iter()
        .zip(generated.values())
        .zip(annotation_mean)
        .enumerate()
    {
        let _ = writeln!(out, "{i}\t{u:.6}\t{d:.6}\t{m:.6}");
    }
    out
}

/// Mean of each metric over the videos where it is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub fscore: f64,
    pub tau: f64,
    pub rho: f64,
    pub tau_truth: f64,
    pub rho_truth: f64,
    /// Videos whose annotator τ was undefined (for example a constant curve).
    pub undefined_tau: usize,
}

impl Aggregate {
    fn of(arms: &[ArmMetrics]) -> Self {
        let pick = |f: fn(&ArmMetrics) -> f64| nan_mean(arms.iter().map(f));
        Self {
            fscore: pick(|a| a.fscore),
            tau: pick(|a| a.tau),
            rho: pick(|a| a.rho),
            tau_truth: pick(|a| a.tau_truth),
            rho_truth: pick(|a| a.rho_truth),
            undefined_tau: arms.iter().filter(|a| a.tau.is_nan()).count(),
        }
    }

    /// Arithmetic mean of per-split aggregates.
    pub fn mean(parts: &[Aggregate]) -> Self {
        let pick = |f: fn(&Aggregate) -> f64| nan_mean(parts.iter().map(f));
        Self {
            fscore: pick(|a| a.fscore),
            tau: pick(|a| a.tau),
            rho: pick(|a| a.rho),
            tau_truth: pick(|a| a.tau_truth),
            rho_truth: pick(|a| a.rho_truth),
            undefined_tau: parts.iter().map(|a| a.undefined_tau).sum(),
        }
    }

    fn write_kv(&self, out: &mut String, prefix: &str) {
        for (key, value) in [
            ("fscore", self.fscore),
            ("kendall_tau", self.tau),
            ("spearman_rho", self.rho),
            ("kendall_tau_truth", self.tau_truth),
            ("spearman_rho_truth", self.rho_truth),
        ] {
            let _ = writeln!(out, "{prefix}.{key} = {}", fmt_metric(value));
        }
        let _ = writeln!(out, "{prefix}.undefined_tau = {}", self.undefined_tau);
    }
}

/// Mean of the finite entries; NaN when there are none.
pub fn nan_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

pub fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub split_name: String,
    pub split_index: usize,
    pub t_active: usize,
    pub scorer: String,
    pub seed: u64,
    pub videos: Vec<VideoEval>,
    pub diffusion: Aggregate,
    pub unsupervised: Aggregate,
}

impl EvalReport {
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split = {}", self.split_name);
        let _ = writeln!(out, "split_index = {}", self.split_index);
        let _ = writeln!(out, "t_active = {}", self.t_active);
        let _ = writeln!(out, "scorer = {}", self.scorer);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "n_videos = {}", self.videos.len());
        self.diffusion.write_kv(&mut out, "diffusion");
        self.unsupervised.write_kv(&mut out, "unsupervised");
        for v in &self.videos {
            for (arm, m) in [("diffusion", &v.diffusion), ("unsupervised", &v.unsupervised)] {
                let _ = writeln!(
                    out,
                    "video.{}.{arm} = fscore {} kendall_tau {} spearman_rho {} kendall_tau_truth {} spearman_rho_truth {}",
                    v.id,
                    fmt_metric(m.fscore),
                    fmt_metric(m.tau),
                    fmt_metric(m.rho),
                    fmt_metric(m.tau_truth),
                    fmt_metric(m.rho_truth)
                );
            }
        }
        out
    }
}

/// Reports of several splits and their averaged aggregates.
#[derive(Debug, Clone)]
pub struct MultiSplitReport {
    pub splits: Vec<EvalReport>,
    pub diffusion: Aggregate,
    pub unsupervised: Aggregate,
}

impl MultiSplitReport {
    pub fn new(splits: Vec<EvalReport>) -> Self {
        let d: Vec<Aggregate> = splits.iter().map(|s| s.diffusion).collect();
        let u: Vec<Aggregate> = splits.iter().map(|s| s.unsupervised).collect();
        Self {
            diffusion: Aggregate::mean(&d),
            unsupervised: Aggregate::mean(&u),
            splits,
        }
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_splits = {}", self.splits.len());
        let names: Vec<&str> = self.splits.iter().map(|s| s.split_name.as_str()).collect();
        let _ = writeln!(out, "splits = {}", names.join(","));
        self.diffusion.write_kv(&mut out, "aggregate.diffusion");
        self.unsupervised.write_kv(&mut out, "aggregate.unsupervised");
        for (i, s) in self.splits.iter().enumerate() {
            s.diffusion.write_kv(&mut out, &format!("split.{i}.diffusion"));
            s.unsupervised.write_kv(&mut out, &format!("split.{i}.unsupervised"));
        }
        out
    }

    /// Fixed-width table with one row per split and arm.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:<13} {:>8} {:>8} {:>8} {:>9} {:>9}\n",
            "split", "arm", "fscore", "tau", "rho", "tau_true", "rho_true"
        );
        let mut row = |name: &str, arm: &str, a: &Aggregate| {
            let _ = writeln!(
                out,
                "{:<24} {:<13} {:>8} {:>8} {:>8} {:>9} {:>9}",
                name,
                arm,
                fmt_short(a.fscore),
                fmt_short(a.tau),
                fmt_short(a.rho),
                fmt_short(a.tau_truth),
                fmt_short(a.rho_truth)
            );
        };
        for s in &self.splits {
            row(&s.split_name, "diffusion", &s.diffusion);
            row(&s.split_name, "unsupervised", &s.unsupervised);
        }
        row("mean", "diffusion", &self.diffusion);
        row("mean", "unsupervised", &self.unsupervised);
        out
    }
}

fn fmt_short(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.4}")
    }
}

/// Initializer scores and the reverse-chain output for one video.
pub fn sample_video<P: NoisePredictor + ?Sized>(
    schedule: &NoiseSchedule,
    predictor: &P,
    scorer: &ScorerSpec,
    video: &VideoRecord,
    seed: u64,
) -> Result<(RawScores, RawScores)> {
    let init = score_video(scorer, video)?;
    let mut rng = seeded(derive_seed(seed, &format!("sample-{}", video.id)));
    let generated = generate_scores(schedule, predictor, &video.features, &init, &mut rng)?;
    Ok((init, generated))
}

fn mean_over_annotators(
    scores: &[f64],
    annotations: &[RawScores],
    f: fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<f64> {
    let values = annotations
        .iter()
        .map(|a| f(scores, a.values()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(nan_mean(values))
}

fn arm_metrics(scores: &RawScores, video: &VideoRecord, protocol: &EvalProtocol) -> Result<ArmMetrics> {
    let fscore = match &video.user_summaries {
        Some(users) if !users.is_empty() => {
            let sel = summarize_video(scores, &video.change_points, protocol.summary_ratio)?;
            fscore_protocol(&sel.frame_mask, users, protocol.fscore_mode)?
        }
        _ if protocol.require_fscore => {
            return Err(Error::data(&video.id, "F-score requested but the video has no user summaries"))
        }
        _ => f64::NAN,
    };
    let s = scores.values();
    // A single frame has no ranking to compare.
    let (tau, rho, tau_truth, rho_truth) = if s.len() < 2 {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let (tt, rt) = match &video.planted_truth {
            Some(g) => (kendall_tau(s, g.values())?, spearman_rho(s, g.values())?),
            None => (f64::NAN, f64::NAN),
        };
        (
            mean_over_annotators(s, &video.annotations, kendall_tau)?,
            mean_over_annotators(s, &video.annotations, spearman_rho)?,
            tt,
            rt,
        )
    };
    Ok(ArmMetrics {
        fscore,
        tau,
        rho,
        tau_truth,
        rho_truth,
    })
}

/// Runs the full pipeline on the split's test videos.
///
/// Reports the reverse-chain output next to the initializer alone. Videos are
/// processed in parallel and reported in split order.
pub fn evaluate_checkpoint<P: NoisePredictor + Sync + ?Sized>(
    videos: &[VideoRecord],
    split: &SplitManifest,
    predictor: &P,
    scorer: &ScorerSpec,
    schedule: &NoiseSchedule,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    scorer.validate()?;
    if split.test_ids.is_empty() {
        return Err(Error::Partition(format!("split `{}` has no test videos", split.name)));
    }
    let by_id: HashMap<&str, &VideoRecord> = videos.iter().map(|v| (v.id.as_str(), v)).collect();
    let test = split
        .test_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::data(id, "listed in the split but missing from the dataset"))
        })
        .collect::<Result<Vec<&VideoRecord>>>()?;

    let results = test
        .par_iter()
        .map(|video| {
            let (initial, generated) = sample_video(schedule, predictor, scorer, video, protocol.seed)?;
            Ok(VideoEval {
                id: video.id.clone(),
                diffusion: arm_metrics(&generated, video, protocol)?,
                unsupervised: arm_metrics(&initial, video, protocol)?,
                initial,
                generated,
                annotation_mean: video.annotation_mean(),
            })
        })
        .collect::<Vec<Result<VideoEval>>>();
    let videos = results.into_iter().collect::<Result<Vec<VideoEval>>>()?;

    let diff: Vec<ArmMetrics> = videos.iter().map(|v| v.diffusion).collect();
    let unsup: Vec<ArmMetrics> = videos.iter().map(|v| v.unsupervised).collect();
    Ok(EvalReport {
        split_name: split.name.clone(),
        split_index: split.split_index,
        t_active: schedule.t_active(),
        scorer: scorer.to_string(),
        seed: protocol.seed,
        diffusion: Aggregate::of(&diff),
        unsupervised: Aggregate::of(&unsup),
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_mean_skips_undefined() {
        assert_eq!(nan_mean([1.0, f64::NAN, 3.0]), 2.0);
        assert!(nan_mean([f64::NAN]).is_nan());
        assert!(nan_mean(std::iter::empty()).is_nan());
    }

    #[test]
    fn protocol_validation() {
        assert!(EvalProtocol { n_splits: 0, ..Default::default() }.validate().is_err());
        assert!(EvalProtocol { summary_ratio: 0.0, ..Default::default() }.validate().is_err());
        EvalProtocol::default().validate().unwrap();
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("max".parse::<FScoreMode>().unwrap(), FScoreMode::Max);
        assert_eq!("avg_over_users".parse::<FScoreMode>().unwrap(), FScoreMode::Avg);
        assert!("median".parse::<FScoreMode>().is_err());
    }
}
