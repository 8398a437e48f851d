//! Forward and hand-derived backward pass of the cross-attention noise predictor.
//!
//! Score tokens are the queries; projected frame features provide keys and
//! values. Every matrix is row-major with one row per frame.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::embedding::{position_table, timestep_embedding};
use super::params::{Attention, Block, LayerNorm, Linear, PredictorParams};
use super::PredictorConfig;
use crate::dataset::FrameFeatures;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

fn linear(x: &Array2<f64>, l: &Linear) -> Array2<f64> {
    x.dot(&l.weight) + &l.bias
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
fn linear_backward(x: &Array2<f64>, l: &Linear, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
    grad.weight += &x.t().dot(dy);
    grad.bias += &dy.sum_axis(Axis(0));
    dy.dot(&l.weight.t())
}

struct NormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let y = &normalized * &ln.gain + &ln.bias;
    (y, NormCache { normalized, inv_std })
}

fn layer_norm_backward(cache: &NormCache, ln: &LayerNorm, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
    grad.gain += &(dy * &cache.normalized).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * &ln.gain;
    for ((mut row, xhat), inv) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.normalized.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.dot(&xhat) / d;
        row.zip_mut_with(&xhat, |g, x| *g = inv * (*g - mean_d - x * mean_dx));
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_K * (u + GELU_C * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_K * (u + GELU_C * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * u * u)
}

struct AttentionCache {
    query_in: Array2<f64>,
    key_in: Array2<f64>,
    value_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    heads: Array2<f64>,
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn attention(
    a: &Attention,
    n_heads: usize,
    query_in: &Array2<f64>,
    key_in: &Array2<f64>,
    value_in: &Array2<f64>,
) -> (Array2<f64>, AttentionCache) {
    let q = linear(query_in, &a.query);
    let k = linear(key_in, &a.key);
    let v = linear(value_in, &a.value);
    let d = q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut p);
        heads.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let out = linear(&heads, &a.output);
    let cache = AttentionCache {
        query_in: query_in.clone(),
        key_in: key_in.clone(),
        value_in: value_in.clone(),
        q,
        k,
        v,
        probs,
        heads,
    };
    (out, cache)
}

/// Returns gradients with respect to the query, key and value inputs.
fn attention_backward(
    a: &Attention,
    cache: &AttentionCache,
    d_out: &Array2<f64>,
    grad: &mut Attention,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d_heads = linear_backward(&cache.heads, &a.output, d_out, &mut grad.output);
    let d = cache.q.ncols();
    let n_heads = cache.probs.len();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_head: ArrayView2<f64> = d_heads.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&d_head));
        let dp = d_head.dot(&cache.v.slice(cols).t());
        // softmax backward, row by row
        let mut ds = &dp * p;
        let row_sums = ds.sum_axis(Axis(1));
        for ((mut ds_row, p_row), sum) in ds.rows_mut().into_iter().zip(p.rows()).zip(row_sums.iter()) {
            ds_row.zip_mut_with(&p_row, |g, pv| *g -= pv * sum);
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let d_query_in = linear_backward(&cache.query_in, &a.query, &dq, &mut grad.query);
    let d_key_in = linear_backward(&cache.key_in, &a.key, &dk, &mut grad.key);
    let d_value_in = linear_backward(&cache.value_in, &a.value, &dv, &mut grad.value);
    (d_query_in, d_key_in, d_value_in)
}

struct BlockCache {
    self_attn: Option<(AttentionCache, NormCache)>,
    cross_attn: AttentionCache,
    norm1: NormCache,
    ff_in: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    norm2: NormCache,
}

fn block_forward(
    b: &Block,
    n_heads: usize,
    h: Array2<f64>,
    mem_key: &Array2<f64>,
    mem_value: &Array2<f64>,
) -> (Array2<f64>, BlockCache) {
    let (h, self_cache) = match &b.self_attn {
        Some((attn, norm)) => {
            let (a, ac) = attention(attn, n_heads, &h, &h, &h);
            let (h, nc) = layer_norm(&(&h + &a), norm);
            (h, Some((ac, nc)))
        }
        None => (h, None),
    };
    let (a, cross_cache) = attention(&b.cross_attn, n_heads, &h, mem_key, mem_value);
    let (h1, norm1) = layer_norm(&(&h + &a), &b.norm1);
    let pre_act = linear(&h1, &b.ff1);
    let act = pre_act.mapv(gelu);
    let f = linear(&act, &b.ff2);
    let (h2, norm2) = layer_norm(&(&h1 + &f), &b.norm2);
    let cache = BlockCache {
        self_attn: self_cache,
        cross_attn: cross_cache,
        norm1,
        ff_in: h1,
        pre_act,
        act,
        norm2,
    };
    (h2, cache)
}

/// Returns the gradient with respect to the block input; memory gradients are accumulated.
fn block_backward(
    b: &Block,
    cache: &BlockCache,
    d_h2: &Array2<f64>,
    grad: &mut Block,
    d_mem_key: &mut Array2<f64>,
    d_mem_value: &mut Array2<f64>,
) -> Array2<f64> {
    let d_sum2 = layer_norm_backward(&cache.norm2, &b.norm2, d_h2, &mut grad.norm2);
    let d_act = linear_backward(&cache.act, &b.ff2, &d_sum2, &mut grad.ff2);
    let mut d_pre = d_act;
    d_pre.zip_mut_with(&cache.pre_act, |g, u| *g *= gelu_grad(*u));
    let d_h1 = &d_sum2 + &linear_backward(&cache.ff_in, &b.ff1, &d_pre, &mut grad.ff1);

    let d_sum1 = layer_norm_backward(&cache.norm1, &b.norm1, &d_h1, &mut grad.norm1);
    let (dq, dk, dv) = attention_backward(&b.cross_attn, &cache.cross_attn, &d_sum1, &mut grad.cross_attn);
    *d_mem_key += &dk;
    *d_mem_value += &dv;
    let d_h = d_sum1 + dq;

    match (&b.self_attn, &cache.self_attn, &mut grad.self_attn) {
        (Some((attn, norm)), Some((ac, nc)), Some((g_attn, g_norm))) => {
            let d_sum0 = layer_norm_backward(nc, norm, &d_h, g_norm);
            let (dq, dk, dv) = attention_backward(attn, ac, &d_sum0, g_attn);
            d_sum0 + dq + dk + dv
        }
        _ => d_h,
    }
}

struct ForwardCache {
    scores: Array2<f64>,
    time_raw: Array2<f64>,
    features: Array2<f64>,
    blocks: Vec<BlockCache>,
    last_hidden: Array2<f64>,
}

pub(super) fn check_inputs(config: &PredictorConfig, x_t: &[f64], features: &FrameFeatures, t: usize) -> Result<()> {
    if x_t.is_empty() {
        return Err(Error::shape("noisy scores", 1, 0));
    }
    if features.n_frames() != x_t.len() {
        return Err(Error::shape("frame features", x_t.len(), features.n_frames()));
    }
    if features.dim() != config.d_feature {
        return Err(Error::shape("feature width", config.d_feature, features.dim()));
    }
    if t == 0 {
        return Err(Error::Step { step: 0, min: 1, max: usize::MAX });
    }
    if x_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("noisy scores".into()));
    }
    if features.matrix().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("frame features".into()));
    }
    Ok(())
}

fn forward(
    config: &PredictorConfig,
    params: &PredictorParams,
    x_t: &[f64],
    features: &FrameFeatures,
    t: usize,
) -> Result<(Vec<f64>, ForwardCache)> {
    let n = x_t.len();
    let scores = Array2::from_shape_vec((n, 1), x_t.to_vec()).expect("column shape");
    let time_raw = timestep_embedding(t, config.t_embed_dim)?.insert_axis(Axis(0));
    let time = linear(&time_raw, &params.time_embed);
    let feats = features.matrix().clone();

    let mut h = linear(&scores, &params.score_embed) + &time;
    let mut mem_key = linear(&feats, &params.feature_key);
    let mut mem_value = linear(&feats, &params.feature_value);
    if config.positional {
        let pos = position_table(n, config.d_model);
        h += &pos;
        mem_key += &pos;
        mem_value += &pos;
    }

    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, cache) = block_forward(block, config.n_heads, h, &mem_key, &mem_value);
        h = next;
        caches.push(cache);
    }
    let out = linear(&h, &params.head);
    let eps_hat: Vec<f64> = out.column(0).to_vec();
    let cache = ForwardCache {
        scores,
        time_raw,
        features: feats,
        blocks: caches,
        last_hidden: h,
    };
    Ok((eps_hat, cache))
}

fn backward(params: &PredictorParams, cache: &ForwardCache, d_out: &[f64], grads: &mut PredictorParams) {
    let n = d_out.len();
    let d_out = Array2::from_shape_vec((n, 1), d_out.to_vec()).expect("column shape");
    let mut d_h = linear_backward(&cache.last_hidden, &params.head, &d_out, &mut grads.head);
    let d = d_h.ncols();
    let mut d_mem_key = Array2::zeros((n, d));
    let mut d_mem_value = Array2::zeros((n, d));
    for ((block, bc), g) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        d_h = block_backward(block, bc, &d_h, g, &mut d_mem_key, &mut d_mem_value);
    }
    linear_backward(&cache.features, &params.feature_key, &d_mem_key, &mut grads.feature_key);
    linear_backward(&cache.features, &params.feature_value, &d_mem_value, &mut grads.feature_value);
    linear_backward(&cache.scores, &params.score_embed, &d_h, &mut grads.score_embed);
    let d_time = d_h.sum_axis(Axis(0)).insert_axis(Axis(0));
    linear_backward(&cache.time_raw, &params.time_embed, &d_time, &mut grads.time_embed);
}

pub(super) fn predict(
    config: &PredictorConfig,
    params: &PredictorParams,
    x_t: &[f64],
    features: &FrameFeatures,
    t: usize,
) -> Result<Vec<f64>> {
    check_inputs(config, x_t, features, t)?;
    forward(config, params, x_t, features, t).map(|(out, _)| out)
}

/// Mean squared error `‖ε - ε̂‖² / n`.
pub fn mse_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    if eps.len() != eps_hat.len() {
        return Err(Error::shape("noise estimate", eps.len(), eps_hat.len()));
    }
    if eps.is_empty() {
        return Err(Error::shape("noise", 1, 0));
    }
    let sum: f64 = eps.iter().zip(eps_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / eps.len() as f64)
}

pub(super) fn loss_and_gradients(
    config: &PredictorConfig,
    params: &PredictorParams,
    x_t: &[f64],
    features: &FrameFeatures,
    t: usize,
    eps: &[f64],
) -> Result<(f64, PredictorParams)> {
    check_inputs(config, x_t, features, t)?;
    if eps.len() != x_t.len() {
        return Err(Error::shape("target noise", x_t.len(), eps.len()));
    }
    let (eps_hat, cache) = forward(config, params, x_t, features, t)?;
    let loss = mse_loss(eps, &eps_hat)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("loss".into()));
    }
    let scale = 2.0 / eps.len() as f64;
    let d_out: Vec<f64> = eps_hat.iter().zip(eps).map(|(p, e)| scale * (p - e)).collect();
    let mut grads = PredictorParams::zeros(config);
    backward(params, &cache, &d_out, &mut grads);
    for tensor in grads.tensors() {
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("gradient of {}", tensor.name)));
        }
    }
    Ok((loss, grads))
}
