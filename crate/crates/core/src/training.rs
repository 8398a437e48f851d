//! Noise-prediction training: epochs × videos × individual annotations, one
//! uniformly drawn step and one Gaussian draw per annotation visit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{SplitManifest, VideoRecord};
use crate::diffusion::{q_sample, scale_scores, GaussianDraw, NoiseSchedule};
use crate::error::{Error, Result};
use crate::predictor::{
    adam_step, Checkpoint, OptimizerState, Predictor, PredictorConfig, DEFAULT_LEARNING_RATE,
    DEFAULT_WEIGHT_DECAY,
};
use crate::rng::{derive_seed, seeded, SeededRng};

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub t_active: usize,
    pub seed: u64,
    /// Save an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Shuffle the video order each epoch. Off visits videos in split order.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            warmup_epochs: 10,
            base_lr: DEFAULT_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            t_active: 200,
            seed: 0,
            checkpoint_every: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.t_active == 0 {
            return Err(Error::Config("t_active must be at least 1 for training".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` over `warmup_epochs`, constant afterwards.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::Parameter(format!("epoch {epoch} outside 1..={}", cfg.epochs)));
    }
    if epoch <= cfg.warmup_epochs {
        Ok(cfg.base_lr * (epoch as f64 / cfg.warmup_epochs as f64))
    } else {
        Ok(cfg.base_lr)
    }
}

/// Source of the training step and noise draws.
pub trait NoiseSource {
    /// A step drawn uniformly from `1..=t_max`.
    fn timestep(&mut self, t_max: usize) -> usize;
    fn gaussian(&mut self, n: usize) -> GaussianDraw;
}

/// [`NoiseSource`] backed by a seeded generator.
pub struct RngNoise<R>(pub R);

impl<R: Rng> NoiseSource for RngNoise<R> {
    fn timestep(&mut self, t_max: usize) -> usize {
        self.0.random_range(1..=t_max)
    }

    fn gaussian(&mut self, n: usize) -> GaussianDraw {
        GaussianDraw::sample(&mut self.0, n)
    }
}

/// One optimization step on a single annotation. Returns the loss before the update.
#[allow(clippy::too_many_arguments)]
pub fn train_step<N: NoiseSource + ?Sized>(
    predictor: &mut Predictor,
    opt: &mut OptimizerState,
    schedule: &NoiseSchedule,
    video: &VideoRecord,
    annotation_index: usize,
    lr: f64,
    noise: &mut N,
) -> Result<f64> {
    let annotation = video.annotations.get(annotation_index).ok_or_else(|| {
        Error::data(
            &video.id,
            format!(
                "annotation index {annotation_index} out of range ({} annotations)",
                video.annotations.len()
            ),
        )
    })?;
    if annotation.is_empty() {
        return Err(Error::data(&video.id, format!("annotation {annotation_index} is empty")));
    }
    let x0 = scale_scores(annotation);
    let t = noise.timestep(schedule.t_active());
    let eps = noise.gaussian(x0.len());
    let x_t = q_sample(schedule, &x0, t, &eps)?;
    let (loss, grads) = predictor.loss_and_gradients(&x_t.values, &video.features, t, &eps.values)?;
    adam_step(&mut predictor.params, &grads, opt, lr)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub steps: u64,
    pub wall_seconds: f64,
    pub final_checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl TrainReport {
    /// Per-epoch table followed by a `key = value` summary block.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# epoch\tmean_loss\tlr\tseconds\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{:.8}\t{:e}\t{:.3}", e.epoch, e.mean_loss, e.lr, e.seconds);
        }
        out.push_str("[summary]\n");
        let _ = writeln!(out, "epochs = {}", self.epochs.len());
        let _ = writeln!(out, "steps = {}", self.steps);
        let _ = writeln!(out, "wall_seconds = {:.3}", self.wall_seconds);
        if let Some(last) = self.epochs.last() {
            let _ = writeln!(out, "final_mean_loss = {:.8}", last.mean_loss);
        }
        if let Some(path) = &self.final_checkpoint {
            let _ = writeln!(out, "final_checkpoint = {}", path.display());
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// Trains a fresh predictor on the split's training videos.
///
/// Every annotation is visited individually each epoch; annotations are never
/// averaged. `schedule` supplies the β table, `cfg.t_active` the horizon.
pub fn train(
    videos: &[VideoRecord],
    split: &SplitManifest,
    cfg: &TrainConfig,
    predictor_cfg: &PredictorConfig,
    schedule: &NoiseSchedule,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.t_active > schedule.t_base() {
        return Err(Error::Config(format!(
            "t_active {} exceeds the schedule's {} steps",
            cfg.t_active,
            schedule.t_base()
        )));
    }
    let schedule = schedule.with_active(cfg.t_active)?;
    let by_id: HashMap<&str, &VideoRecord> = videos.iter().map(|v| (v.id.as_str(), v)).collect();
    let train_videos = split
        .train_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::data(id, "listed in the split but missing from the dataset"))
        })
        .collect::<Result<Vec<&VideoRecord>>>()?;
    if train_videos.is_empty() {
        return Err(Error::Config(format!("split `{}` has no training videos", split.name)));
    }
    for v in &train_videos {
        if v.annotations.is_empty() {
            return Err(Error::data(&v.id, "no annotations to train on"));
        }
        if v.features.dim() != predictor_cfg.d_feature {
            return Err(Error::data(
                &v.id,
                format!(
                    "feature width {} does not match predictor d_feature {}",
                    v.features.dim(),
                    predictor_cfg.d_feature
                ),
            ));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut predictor = Predictor::new(predictor_cfg.clone())?;
    let mut opt = OptimizerState::for_params(&predictor.params, cfg.base_lr, cfg.weight_decay);
    let mut noise = RngNoise(seeded(derive_seed(cfg.seed, "train-noise")));
    let mut order_rng: SeededRng = seeded(derive_seed(cfg.seed, "train-order"));

    let started = Instant::now();
    let mut report = TrainReport {
        seed: cfg.seed,
        ..Default::default()
    };
    let mut order = train_videos;
    for epoch in 1..=cfg.epochs {
        let epoch_start = Instant::now();
        let lr = lr_at(epoch, cfg)?;
        if cfg.shuffle {
            order.shuffle(&mut order_rng);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for video in &order {
            for k in 0..video.annotations.len() {
                let loss = train_step(&mut predictor, &mut opt, &schedule, video, k, lr, &mut noise)
                    .map_err(|e| match e {
                        Error::Numeric(what) => Error::Numeric(format!(
                            "{what} (epoch {epoch}, video `{}`, annotation {k})",
                            video.id
                        )),
                        other => other,
                    })?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss (epoch {epoch}, video `{}`, annotation {k})",
                        video.id
                    )));
                }
                report.step_losses.push(loss);
                total += loss;
                count += 1;
            }
        }
        report.steps += count as u64;
        let record = EpochRecord {
            epoch,
            mean_loss: total / count as f64,
            lr,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: mean loss {:.5}, lr {:e}", record.mean_loss, lr);
        report.epochs.push(record);

        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch < cfg.epochs {
                Checkpoint::new(predictor.clone(), Some(opt.clone()))
                    .save(dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
    }

    let checkpoint = Checkpoint::new(predictor, Some(opt));
    if let Some(dir) = out_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        checkpoint.save(&path)?;
        report.final_checkpoint = Some(path);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { checkpoint, report })
}
