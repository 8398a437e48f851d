//! Effective run configuration: a `key = value` file merged with flag overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use diffsumm::dataset::{ImportanceProfile, SplitSetting, SyntheticSpec};
use diffsumm::diffusion::{build_schedule, NoiseSchedule};
use diffsumm::evaluate::{EvalProtocol, FScoreMode};
use diffsumm::training::TrainConfig;
use diffsumm::unsupervised::{ScorerSpec, DEFAULT_WINDOW};
use diffsumm::{Error, PredictorConfig, Result};

pub const SEED_ENV: &str = "DIFFSUMM_SEED";
pub const CONFIG_ECHO_FILE: &str = "config.txt";

/// Every key the config file and `--set` accept.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "train.epochs",
    "train.warmup_epochs",
    "train.base_lr",
    "train.weight_decay",
    "train.t_active",
    "train.seed",
    "train.checkpoint_every",
    "train.shuffle",
    "predictor.d_model",
    "predictor.n_layers",
    "predictor.n_heads",
    "predictor.d_ff",
    "predictor.d_feature",
    "predictor.t_embed_dim",
    "predictor.seed",
    "predictor.self_attention",
    "predictor.positional",
    "eval.fscore_mode",
    "eval.n_splits",
    "eval.summary_ratio",
    "eval.require_fscore",
    "eval.seed",
    "scorer.kind",
    "scorer.bandwidth",
    "scorer.window",
    "scorer.seed",
    "scorer.value",
    "scorer.annotator",
    "scorer.dir",
    "split.setting",
    "split.train_ratio",
    "split.index",
    "schedule.t_base",
    "schedule.beta_start",
    "schedule.beta_end",
    "synth.n_videos",
    "synth.frames_per_video",
    "synth.d_feature",
    "synth.n_annotators",
    "synth.annotator_noise",
    "synth.n_shots",
    "synth.importance_profile",
    "synth.seed",
    "synth.feature_signal",
    "synth.feature_noise",
];

/// Merged `key -> value` map. Later sources override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` has an invalid value `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Synthetic spec files may omit the `synth.` prefix.
    pub fn from_spec_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let prefixed: String = text
            .lines()
            .map(|l| {
                let t = l.trim_start();
                if t.is_empty() || t.starts_with('#') || t.starts_with("synth.") || t.starts_with("seed") {
                    format!("{l}\n")
                } else {
                    format!("synth.{t}\n")
                }
            })
            .collect();
        Self::parse(&prefixed).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key).map(|v| parse_value(key, v)).transpose()
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key).map(|v| parse_bool(key, v)).transpose()
    }

    /// Master seed: the `seed` key, else `DIFFSUMM_SEED`, else 0. The resolved
    /// value is stored so it is echoed with the rest of the config.
    pub fn resolve_seed(&mut self) -> Result<u64> {
        let seed = match self.get("seed") {
            Some(v) => parse_value("seed", v)?,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => parse_value(SEED_ENV, v.trim())?,
                Err(_) => 0,
            },
        };
        self.values.insert("seed".into(), seed.to_string());
        Ok(seed)
    }

    fn seed(&self) -> Result<u64> {
        Ok(self.get_parsed("seed")?.unwrap_or(0))
    }

    fn component_seed(&self, key: &str) -> Result<u64> {
        match self.get_parsed(key)? {
            Some(s) => Ok(s),
            None => self.seed(),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: self.get_parsed("train.epochs")?.unwrap_or(d.epochs),
            warmup_epochs: self.get_parsed("train.warmup_epochs")?.unwrap_or(d.warmup_epochs),
            base_lr: self.get_parsed("train.base_lr")?.unwrap_or(d.base_lr),
            weight_decay: self.get_parsed("train.weight_decay")?.unwrap_or(d.weight_decay),
            t_active: self.get_parsed("train.t_active")?.unwrap_or(d.t_active),
            seed: self.component_seed("train.seed")?,
            checkpoint_every: self.get_parsed("train.checkpoint_every")?.unwrap_or(d.checkpoint_every),
            shuffle: self.get_bool("train.shuffle")?.unwrap_or(d.shuffle),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `d_feature` falls back to the dataset's width when not configured.
    pub fn predictor_config(&self, dataset_d_feature: Option<usize>) -> Result<PredictorConfig> {
        let mut cfg = PredictorConfig {
            seed: self.component_seed("predictor.seed")?,
            ..PredictorConfig::default()
        };
        if let Some(d) = dataset_d_feature {
            cfg.d_feature = d;
        }
        let mut tdim_set = false;
        for (key, value) in &self.values {
            if let Some(field) = key.strip_prefix("predictor.") {
                cfg.set(field, value)?;
                tdim_set |= field == "t_embed_dim";
            }
        }
        if !tdim_set {
            cfg.t_embed_dim = cfg.d_model;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_protocol(&self) -> Result<EvalProtocol> {
        let d = EvalProtocol::default();
        let p = EvalProtocol {
            fscore_mode: self.get_parsed::<FScoreMode>("eval.fscore_mode")?.unwrap_or(d.fscore_mode),
            n_splits: self.get_parsed("eval.n_splits")?.unwrap_or(d.n_splits),
            summary_ratio: self.get_parsed("eval.summary_ratio")?.unwrap_or(d.summary_ratio),
            require_fscore: self.get_bool("eval.require_fscore")?.unwrap_or(d.require_fscore),
            seed: self.component_seed("eval.seed")?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Scorer from `scorer.*` keys; defaults to the repdiv baseline.
    pub fn scorer(&self) -> Result<ScorerSpec> {
        let kind = self.get("scorer.kind").unwrap_or("repdiv_baseline");
        let spec = match kind {
            "repdiv_baseline" | "repdiv" => ScorerSpec::RepDiv {
                bandwidth: self.get_parsed("scorer.bandwidth")?,
                window: self.get_parsed("scorer.window")?.unwrap_or(DEFAULT_WINDOW),
                seed: self.component_seed("scorer.seed")?,
            },
            "constant" => ScorerSpec::Constant(
                self.get_parsed("scorer.value")?
                    .ok_or_else(|| Error::Config("scorer.kind = constant needs scorer.value".into()))?,
            ),
            "oracle_from_annotation" | "oracle" => {
                ScorerSpec::OracleFromAnnotation(self.get_parsed("scorer.annotator")?.unwrap_or(0))
            }
            "external_file" | "file" => ScorerSpec::ExternalFile(PathBuf::from(
                self.get("scorer.dir")
                    .ok_or_else(|| Error::Config("scorer.kind = external_file needs scorer.dir".into()))?,
            )),
            other => return Err(Error::Config(format!("unknown scorer kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stores a scorer given in the compact `kind:args` form as `scorer.*` keys.
    pub fn set_scorer(&mut self, spec: &ScorerSpec) -> Result<()> {
        self.values.retain(|k, _| !k.starts_with("scorer."));
        match spec {
            ScorerSpec::RepDiv { bandwidth, window, seed } => {
                self.set("scorer.kind", "repdiv_baseline")?;
                if let Some(b) = bandwidth {
                    self.set("scorer.bandwidth", &b.to_string())?;
                }
                self.set("scorer.window", &window.to_string())?;
                self.set("scorer.seed", &seed.to_string())?;
            }
            ScorerSpec::Constant(c) => {
                self.set("scorer.kind", "constant")?;
                self.set("scorer.value", &c.to_string())?;
            }
            ScorerSpec::OracleFromAnnotation(k) => {
                self.set("scorer.kind", "oracle_from_annotation")?;
                self.set("scorer.annotator", &k.to_string())?;
            }
            ScorerSpec::ExternalFile(dir) => {
                self.set("scorer.kind", "external_file")?;
                self.set("scorer.dir", &dir.display().to_string())?;
            }
        }
        Ok(())
    }

    pub fn schedule(&self, t_active: usize) -> Result<NoiseSchedule> {
        let t_base = self.get_parsed("schedule.t_base")?.unwrap_or(1000);
        let start = self.get_parsed("schedule.beta_start")?.unwrap_or(1e-4);
        let end = self.get_parsed("schedule.beta_end")?.unwrap_or(0.02);
        if t_active > t_base {
            return Err(Error::Config(format!("t_active {t_active} exceeds schedule.t_base {t_base}")));
        }
        build_schedule(t_base, start, end, t_active.max(1))?.with_active(t_active)
    }

    pub fn split_setting(&self) -> Result<SplitSetting> {
        Ok(self.get_parsed("split.setting")?.unwrap_or(SplitSetting::Canonical))
    }

    pub fn train_ratio(&self) -> Result<f64> {
        Ok(self.get_parsed("split.train_ratio")?.unwrap_or(0.8))
    }

    pub fn split_index(&self) -> Result<usize> {
        Ok(self.get_parsed("split.index")?.unwrap_or(0))
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let d = SyntheticSpec::default();
        let spec = SyntheticSpec {
            n_videos: self.get_parsed("synth.n_videos")?.unwrap_or(d.n_videos),
            frames_per_video: self.get_parsed("synth.frames_per_video")?.unwrap_or(d.frames_per_video),
            d_feature: self.get_parsed("synth.d_feature")?.unwrap_or(d.d_feature),
            n_annotators: self.get_parsed("synth.n_annotators")?.unwrap_or(d.n_annotators),
            annotator_noise: self.get_parsed("synth.annotator_noise")?.unwrap_or(d.annotator_noise),
            n_shots: self.get_parsed("synth.n_shots")?.unwrap_or(d.n_shots),
            importance_profile: self
                .get_parsed::<ImportanceProfile>("synth.importance_profile")?
                .unwrap_or(d.importance_profile),
            seed: self.component_seed("synth.seed")?,
            feature_signal: self.get_parsed("synth.feature_signal")?.unwrap_or(d.feature_signal),
            feature_noise: self.get_parsed("synth.feature_noise")?.unwrap_or(d.feature_noise),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Sorted `key = value` lines of every explicitly set key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Writes the effective configuration into `dir/config.txt`.
    pub fn echo(&self, dir: &Path, resolved: &[(&str, String)]) -> Result<()> {
        let mut text = self.to_text();
        if !resolved.is_empty() {
            text.push_str("# resolved\n");
            for (k, v) in resolved {
                let _ = writeln!(text, "# {k} = {v}");
            }
        }
        let path = dir.join(CONFIG_ECHO_FILE);
        std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let cfg = RunConfig::parse("# comment\ntrain.epochs = 3\n\npredictor.d_model = 32 # inline\n").unwrap();
        assert_eq!(cfg.get("train.epochs"), Some("3"));
        assert_eq!(cfg.get("predictor.d_model"), Some("32"));
        assert!(RunConfig::parse("train.epoch = 3").is_err());
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse("train.epochs = 3\ntrain.warmup_epochs = 1").unwrap();
        cfg.apply_overrides(&["train.epochs=7".into()]).unwrap();
        assert_eq!(cfg.train_config().unwrap().epochs, 7);
        assert!(cfg.apply_overrides(&["nope=1".into()]).is_err());
    }

    #[test]
    fn builds_components() {
        let mut cfg = RunConfig::parse(
            "seed = 9\npredictor.d_model = 32\npredictor.n_heads = 2\nscorer.kind = constant\nscorer.value = 0.25\neval.fscore_mode = max",
        )
        .unwrap();
        cfg.resolve_seed().unwrap();
        let p = cfg.predictor_config(Some(12)).unwrap();
        assert_eq!((p.d_model, p.d_feature, p.t_embed_dim, p.seed), (32, 12, 32, 9));
        assert_eq!(cfg.scorer().unwrap(), ScorerSpec::Constant(0.25));
        assert_eq!(cfg.eval_protocol().unwrap().fscore_mode, FScoreMode::Max);
        assert_eq!(cfg.train_config().unwrap().seed, 9);
        let s = cfg.schedule(200).unwrap();
        assert_eq!((s.t_base(), s.t_active()), (1000, 200));
        assert_eq!(cfg.schedule(0).unwrap().t_active(), 0);
        assert!(cfg.schedule(1001).is_err());
    }

    #[test]
    fn scorer_roundtrip_through_keys() {
        let mut cfg = RunConfig::new();
        let spec: ScorerSpec = "repdiv:window=4,seed=2".parse().unwrap();
        cfg.set_scorer(&spec).unwrap();
        assert_eq!(cfg.scorer().unwrap(), spec);
    }
}
