//! Cross-attention noise predictor `ε_θ(x_t, f, t)`, its loss and gradients,
//! the Adam optimizer and the checkpoint format.

mod checkpoint;
mod embedding;
mod network;
mod optim;
mod params;

use std::collections::BTreeMap;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use embedding::{position_table, timestep_embedding};
pub use network::mse_loss;
pub use optim::{adam_step, OptimizerState, DEFAULT_LEARNING_RATE, DEFAULT_WEIGHT_DECAY};
pub use params::{Attention, Block, LayerNorm, Linear, PredictorParams, TensorView, TensorViewMut};

use crate::dataset::FrameFeatures;
use crate::diffusion::{NoisePredictor, NoisyScores};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_feature: usize,
    pub t_embed_dim: usize,
    pub seed: u64,
    /// Self-attention over the score stream before each cross-attention.
    pub self_attention: bool,
    /// Adds sinusoidal frame positions to score and feature tokens.
    pub positional: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            d_feature: 1024,
            t_embed_dim: 128,
            seed: 0,
            self_attention: false,
            positional: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("d_feature", self.d_feature),
            ("t_embed_dim", self.t_embed_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.t_embed_dim % 2 != 0 {
            return Err(Error::Config(format!("t_embed_dim must be even, got {}", self.t_embed_dim)));
        }
        if self.positional && self.d_model % 2 != 0 {
            return Err(Error::Config("positional embeddings need an even d_model".into()));
        }
        Ok(())
    }

    /// Ordered `key=value` pairs, as embedded in checkpoints.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("d_feature", self.d_feature.to_string()),
            ("t_embed_dim", self.t_embed_dim.to_string()),
            ("seed", self.seed.to_string()),
            ("self_attention", self.self_attention.to_string()),
            ("positional", self.positional.to_string()),
        ]
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for predictor key `{key}`")))
        }
        match key {
            "d_model" => self.d_model = parse(key, value)?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "d_feature" => self.d_feature = parse(key, value)?,
            "t_embed_dim" => self.t_embed_dim = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "self_attention" => self.self_attention = parse(key, value)?,
            "positional" => self.positional = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown predictor key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in pairs {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Configuration plus parameters: everything needed to evaluate `ε_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub params: PredictorParams,
}

impl Predictor {
    /// Fresh network, deterministic in `config.seed`.
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let params = PredictorParams::init(&config);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: PredictorConfig, params: PredictorParams) -> Result<Self> {
        config.validate()?;
        let expected = PredictorParams::zeros(&config);
        for (want, got) in expected.tensors().iter().zip(params.tensors().iter()) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Config(format!(
                    "tensor {} has shape {:?}, config implies {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        if expected.tensors().len() != params.tensors().len() {
            return Err(Error::Config("parameter tensor count does not match config".into()));
        }
        Ok(Self { config, params })
    }

    /// Per-frame noise estimate for `x_t` at step `t`.
    pub fn predict_noise(&self, x_t: &[f64], features: &FrameFeatures, t: usize) -> Result<Vec<f64>> {
        network::predict(&self.config, &self.params, x_t, features, t)
    }

    /// Loss of the noise estimate against `eps` and its gradient for every tensor.
    pub fn loss_and_gradients(
        &self,
        x_t: &[f64],
        features: &FrameFeatures,
        t: usize,
        eps: &[f64],
    ) -> Result<(f64, PredictorParams)> {
        network::loss_and_gradients(&self.config, &self.params, x_t, features, t, eps)
    }
}

impl NoisePredictor for Predictor {
    fn predict_noise(&self, x_t: &NoisyScores, features: &FrameFeatures) -> Result<Vec<f64>> {
        Predictor::predict_noise(self, &x_t.values, features, x_t.step)
    }
}
