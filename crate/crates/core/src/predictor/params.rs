use ndarray::{Array1, Array2};
use rand::Rng;

use super::PredictorConfig;
use crate::rng::{seeded, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `fan_in × fan_out`, applied as `x · W + b`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Optional self-attention, then cross-attention and feed-forward, each with
/// a residual connection followed by layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub self_attn: Option<(Attention, LayerNorm)>,
    pub cross_attn: Attention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

/// Every trainable tensor of the noise predictor. The same structure holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub score_embed: Linear,
    pub time_embed: Linear,
    pub feature_key: Linear,
    pub feature_value: Linear,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

/// Borrowed view of one named tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorViewMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Xavier-uniform weights, zero bias.
    fn xavier(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        push(out, format!("{prefix}.weight"), self.weight.shape(), self.weight.as_slice());
        push(out, format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice());
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorViewMut<'a>>) {
        push_mut(out, format!("{prefix}.weight"), self.weight.as_slice_mut());
        push_mut(out, format!("{prefix}.bias"), self.bias.as_slice_mut());
    }
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        Self {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gain: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        push(out, format!("{prefix}.gain"), self.gain.shape(), self.gain.as_slice());
        push(out, format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice());
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorViewMut<'a>>) {
        push_mut(out, format!("{prefix}.gain"), self.gain.as_slice_mut());
        push_mut(out, format!("{prefix}.bias"), self.bias.as_slice_mut());
    }
}

impl Attention {
    fn new(rng: &mut SeededRng, d: usize) -> Self {
        Self {
            query: Linear::xavier(rng, d, d),
            key: Linear::xavier(rng, d, d),
            value: Linear::xavier(rng, d, d),
            output: Linear::xavier(rng, d, d),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
            output: Linear::zeros(d, d),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        self.query.visit(&format!("{prefix}.query"), out);
        self.key.visit(&format!("{prefix}.key"), out);
        self.value.visit(&format!("{prefix}.value"), out);
        self.output.visit(&format!("{prefix}.output"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorViewMut<'a>>) {
        self.query.visit_mut(&format!("{prefix}.query"), out);
        self.key.visit_mut(&format!("{prefix}.key"), out);
        self.value.visit_mut(&format!("{prefix}.value"), out);
        self.output.visit_mut(&format!("{prefix}.output"), out);
    }
}

fn push<'a>(out: &mut Vec<TensorView<'a>>, name: String, shape: &[usize], data: Option<&'a [f64]>) {
    out.push(TensorView {
        name,
        shape: shape.to_vec(),
        data: data.expect("parameter tensors are contiguous"),
    });
}

fn push_mut<'a>(out: &mut Vec<TensorViewMut<'a>>, name: String, data: Option<&'a mut [f64]>) {
    out.push(TensorViewMut {
        name,
        data: data.expect("parameter tensors are contiguous"),
    });
}

impl PredictorParams {
    /// Deterministic initialization from `config.seed`. The output head starts
    /// at zero so a fresh network predicts zero noise everywhere.
    pub(super) fn init(config: &PredictorConfig) -> Self {
        let mut rng = seeded(config.seed);
        let d = config.d_model;
        let score_embed = Linear::xavier(&mut rng, 1, d);
        let time_embed = Linear::xavier(&mut rng, config.t_embed_dim, d);
        let feature_key = Linear::xavier(&mut rng, config.d_feature, d);
        let feature_value = Linear::xavier(&mut rng, config.d_feature, d);
        let blocks = (0..config.n_layers)
            .map(|_| {
                let self_attn = config
                    .self_attention
                    .then(|| (Attention::new(&mut rng, d), LayerNorm::new(d)));
                Block {
                    self_attn,
                    cross_attn: Attention::new(&mut rng, d),
                    norm1: LayerNorm::new(d),
                    ff1: Linear::xavier(&mut rng, d, config.d_ff),
                    ff2: Linear::xavier(&mut rng, config.d_ff, d),
                    norm2: LayerNorm::new(d),
                }
            })
            .collect();
        Self {
            score_embed,
            time_embed,
            feature_key,
            feature_value,
            blocks,
            head: Linear::zeros(d, 1),
        }
    }

    /// All-zero tensors with the shapes implied by `config`.
    pub fn zeros(config: &PredictorConfig) -> Self {
        let d = config.d_model;
        Self {
            score_embed: Linear::zeros(1, d),
            time_embed: Linear::zeros(config.t_embed_dim, d),
            feature_key: Linear::zeros(config.d_feature, d),
            feature_value: Linear::zeros(config.d_feature, d),
            blocks: (0..config.n_layers)
                .map(|_| Block {
                    self_attn: config
                        .self_attention
                        .then(|| (Attention::zeros(d), LayerNorm::zeros(d))),
                    cross_attn: Attention::zeros(d),
                    norm1: LayerNorm::zeros(d),
                    ff1: Linear::zeros(d, config.d_ff),
                    ff2: Linear::zeros(config.d_ff, d),
                    norm2: LayerNorm::zeros(d),
                })
                .collect(),
            head: Linear::zeros(d, 1),
        }
    }

    /// Tensors in declaration order. Checkpoints and the optimizer rely on this order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        self.score_embed.visit("score_embed", &mut out);
        self.time_embed.visit("time_embed", &mut out);
        self.feature_key.visit("feature_key", &mut out);
        self.feature_value.visit("feature_value", &mut out);
        for (l, block) in self.blocks.iter().enumerate() {
            if let Some((attn, norm)) = &block.self_attn {
                attn.visit(&format!("layers.{l}.self_attn"), &mut out);
                norm.visit(&format!("layers.{l}.norm0"), &mut out);
            }
            block.cross_attn.visit(&format!("layers.{l}.cross_attn"), &mut out);
            block.norm1.visit(&format!("layers.{l}.norm1"), &mut out);
            block.ff1.visit(&format!("layers.{l}.ff1"), &mut out);
            block.ff2.visit(&format!("layers.{l}.ff2"), &mut out);
            block.norm2.visit(&format!("layers.{l}.norm2"), &mut out);
        }
        self.head.visit("head", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let mut out = Vec::new();
        self.score_embed.visit_mut("score_embed", &mut out);
        self.time_embed.visit_mut("time_embed", &mut out);
        self.feature_key.visit_mut("feature_key", &mut out);
        self.feature_value.visit_mut("feature_value", &mut out);
        for (l, block) in self.blocks.iter_mut().enumerate() {
            if let Some((attn, norm)) = &mut block.self_attn {
                attn.visit_mut(&format!("layers.{l}.self_attn"), &mut out);
                norm.visit_mut(&format!("layers.{l}.norm0"), &mut out);
            }
            block.cross_attn.visit_mut(&format!("layers.{l}.cross_attn"), &mut out);
            block.norm1.visit_mut(&format!("layers.{l}.norm1"), &mut out);
            block.ff1.visit_mut(&format!("layers.{l}.ff1"), &mut out);
            block.ff2.visit_mut(&format!("layers.{l}.ff2"), &mut out);
            block.norm2.visit_mut(&format!("layers.{l}.norm2"), &mut out);
        }
        self.head.visit_mut("head", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
