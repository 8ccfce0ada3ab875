//! Transformer encoder classifier whose self-attention is restricted by the
//! residue contact map.
//!
//! Pipeline: token embedding scaled by `sqrt(d)` plus sinusoidal positions,
//! dropout, `n_layers` post-norm encoder layers, masked mean pooling over
//! valid positions and a linear classifier.

use std::collections::HashMap;
use std::rc::Rc;

use contactnn::{Graph, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AttentionMode, EncodedBatch, VOCAB_SIZE};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub n_classes: usize,
    pub attention_mode: AttentionMode,
    pub positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            embed_dim: 256,
            n_heads: 8,
            n_layers: 5,
            ffn_dim: 1024,
            dropout: 0.1,
            max_len: 512,
            n_classes: 1,
            attention_mode: AttentionMode::Contact,
            positional: true,
        }
    }
}

impl ModelConfig {
    /// Default architecture with the given width, `ffn_dim = 4 * embed_dim`.
    pub fn with_dims(embed_dim: usize, n_classes: usize) -> Self {
        Self {
            embed_dim,
            ffn_dim: 4 * embed_dim,
            n_classes,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.embed_dim == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return bad("dimensions must be positive");
        }
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad("embed_dim must be divisible by n_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1");
        }
        Ok(())
    }
}

/// Closed-form number of scalar parameters.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let d = config.embed_dim;
    let f = config.ffn_dim;
    let per_layer = 4 * (d * d + d) // q, k, v, out projections
        + 2 * 2 * d                 // two layer norms
        + d * f + f + f * d + d; // feed-forward
    config.vocab_size * d + config.n_layers * per_layer + d * config.n_classes + config.n_classes
}

/// Declared parameter names and shapes, in storage order.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.embed_dim;
    let f = config.ffn_dim;
    let mut out = vec![("embedding.weight".to_string(), vec![config.vocab_size, d])];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        for proj in ["q", "k", "v", "out"] {
            out.push((p(&format!("attn.{proj}.weight")), vec![d, d]));
            out.push((p(&format!("attn.{proj}.bias")), vec![d]));
        }
        out.push((p("norm1.gamma"), vec![d]));
        out.push((p("norm1.beta"), vec![d]));
        out.push((p("ffn.linear1.weight"), vec![d, f]));
        out.push((p("ffn.linear1.bias"), vec![f]));
        out.push((p("ffn.linear2.weight"), vec![f, d]));
        out.push((p("ffn.linear2.bias"), vec![d]));
        out.push((p("norm2.gamma"), vec![d]));
        out.push((p("norm2.beta"), vec![d]));
    }
    out.push(("classifier.weight".to_string(), vec![d, config.n_classes]));
    out.push(("classifier.bias".to_string(), vec![config.n_classes]));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named parameter tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_parameters(params: Vec<Parameter<T>>) -> Result<Self, ModelError> {
        let mut index = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if index.insert(p.name.clone(), i).is_some() {
                return Err(ModelError::ConfigMismatch(format!(
                    "duplicate parameter {}",
                    p.name
                )));
            }
        }
        Ok(Self { params, index })
    }

    /// Xavier-uniform matrices, zero biases, unit layer-norm scales.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = parameter_shapes(config)
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if shape.len() == 2 {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-limit..limit)))
                } else if name.ends_with("gamma") {
                    Tensor::full(shape, T::one())
                } else {
                    Tensor::zeros(shape)
                };
                Parameter {
                    name,
                    tensor,
                    trainable: true,
                }
            })
            .collect();
        Self::from_parameters(params)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Verifies names and shapes against the declared list for `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let declared = parameter_shapes(config);
        if declared.len() != self.params.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "expected {} parameter tensors, found {}",
                declared.len(),
                self.params.len()
            )));
        }
        for ((name, shape), p) in declared.iter().zip(&self.params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(ModelError::ConfigMismatch(format!(
                    "expected {name} {shape:?}, found {} {:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// Places every parameter on the tape. Trainable parameters become
    /// gradient leaves when `track` is set, constants otherwise.
    pub fn bind(&self, g: &mut Graph<T>, track: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if track && p.trainable {
                    g.param(p.tensor.clone())
                } else {
                    g.constant(p.tensor.clone())
                }
            })
            .collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Associates already-created tape nodes, one per parameter in storage
    /// order, with this parameter set's names.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams, ModelError> {
        if vars.len() != self.params.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "{} nodes for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        Ok(BoundParams {
            vars: vars.to_vec(),
            index: self.index.clone(),
        })
    }
}

/// Tape handles of a bound [`ModelParams`], aligned with its storage order.
pub struct BoundParams {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| ModelError::ConfigMismatch(format!("missing parameter {name}")))
    }
}

/// Sinusoidal table, row-major `len × dim`:
/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for p in 0..len {
        for c in 0..dim {
            let pair = (c / 2 * 2) as f64;
            let angle = p as f64 / 10000f64.powf(pair / dim as f64);
            out[p * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Handles for the projections of one attention block.
pub struct AttentionVars {
    pub q: (Var, Var),
    pub k: (Var, Var),
    pub v: (Var, Var),
    pub out: (Var, Var),
}

/// Multi-head scaled dot-product self-attention over `x: [batch*len, d]`.
///
/// `disallow` has shape `[batch, len, len]` and already combines the
/// attention mask with the key-padding mask. Returns the projected output and
/// the attention probabilities `[batch*heads, len, len]`.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    disallow: Rc<[bool]>,
    batch: usize,
    n_heads: usize,
    w: &AttentionVars,
) -> (Var, Var) {
    let d = g.value(x).rows_cols().1;
    let dh = d / n_heads;
    let q = g.linear(x, w.q.0, w.q.1);
    let k = g.linear(x, w.k.0, w.k.1);
    let v = g.linear(x, w.v.0, w.v.1);
    let q = g.split_heads(q, batch, n_heads);
    let k = g.split_heads(k, batch, n_heads);
    let v = g.split_heads(v, batch, n_heads);
    let scores = g.batch_matmul(q, k, true);
    let scores = g.scale(scores, T::of(1.0 / (dh as f64).sqrt()));
    let probs = g.masked_softmax(scores, disallow);
    let ctx = g.batch_matmul(probs, v, false);
    let ctx = g.merge_heads(ctx, batch, n_heads);
    (g.linear(ctx, w.out.0, w.out.1), probs)
}

pub struct ForwardOutput {
    /// `[batch, n_classes]`.
    pub logits: Var,
    /// `[batch, d]` masked mean of the last layer.
    pub pooled: Var,
    /// `[batch*width, d]` after each encoder layer.
    pub layer_states: Vec<Var>,
    /// `[batch*heads, width, width]` per layer.
    pub attention: Vec<Var>,
}

/// Runs the encoder on `batch`. Dropout is active only when `train` is set.
pub fn encoder_forward<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    params: &BoundParams,
    batch: &EncodedBatch,
    config: &ModelConfig,
    train: bool,
    rng: &mut R,
) -> Result<ForwardOutput, ModelError> {
    config.validate()?;
    if batch.width > config.max_len {
        return Err(ModelError::ConfigMismatch(format!(
            "batch width {} exceeds max_len {}",
            batch.width, config.max_len
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= config.n_classes) {
        return Err(ModelError::ConfigMismatch(format!(
            "label {bad} outside {} classes",
            config.n_classes
        )));
    }
    let emb = params.var("embedding.weight")?;
    let (vocab, d) = {
        let s = g.value(emb).shape();
        (s[0], s[1])
    };
    if vocab != config.vocab_size || d != config.embed_dim {
        return Err(ModelError::ConfigMismatch(format!(
            "embedding table is {vocab}x{d}"
        )));
    }
    if let Some(&t) = batch.tokens.iter().find(|&&t| t >= vocab) {
        return Err(ModelError::ConfigMismatch(format!(
            "token {t} outside vocabulary"
        )));
    }
    let (b, width) = (batch.batch, batch.width);
    let rate = if train { config.dropout } else { 0.0 };

    let mut x = g.embedding(emb, &batch.tokens);
    x = g.scale(x, T::of((d as f64).sqrt()));
    if config.positional {
        let pe = positional_encoding(width, d);
        let tiled = Tensor::from_fn([b * width, d], |i| T::of(pe[i % (width * d)]));
        let pe = g.constant(tiled);
        x = g.add(x, pe);
    }
    x = g.dropout(x, rate, rng);

    let disallow: Rc<[bool]> = match config.attention_mode {
        AttentionMode::Contact => batch.combined_mask().into(),
        AttentionMode::Full => {
            let mut m = vec![false; b * width * width];
            for s in 0..b {
                for i in 0..width {
                    for j in 0..width {
                        m[(s * width + i) * width + j] = batch.key_padding_mask[s * width + j];
                    }
                }
            }
            m.into()
        }
    };

    let mut layer_states = Vec::with_capacity(config.n_layers);
    let mut attention = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let v = |s: &str| params.var(&format!("layers.{l}.{s}"));
        let w = AttentionVars {
            q: (v("attn.q.weight")?, v("attn.q.bias")?),
            k: (v("attn.k.weight")?, v("attn.k.bias")?),
            v: (v("attn.v.weight")?, v("attn.v.bias")?),
            out: (v("attn.out.weight")?, v("attn.out.bias")?),
        };
        let (a, probs) = multi_head_attention(g, x, disallow.clone(), b, config.n_heads, &w);
        attention.push(probs);
        let a = g.dropout(a, rate, rng);
        let r = g.add(x, a);
        x = g.layer_norm(r, v("norm1.gamma")?, v("norm1.beta")?, LAYER_NORM_EPS);

        let h = g.linear(x, v("ffn.linear1.weight")?, v("ffn.linear1.bias")?);
        let h = g.relu(h);
        let f = g.linear(h, v("ffn.linear2.weight")?, v("ffn.linear2.bias")?);
        let f = g.dropout(f, rate, rng);
        let r = g.add(x, f);
        x = g.layer_norm(r, v("norm2.gamma")?, v("norm2.beta")?, LAYER_NORM_EPS);
        layer_states.push(x);
    }

    let pooled = g.masked_mean(x, &batch.lengths);
    let logits = g.linear(
        pooled,
        params.var("classifier.weight")?,
        params.var("classifier.bias")?,
    );
    Ok(ForwardOutput {
        logits,
        pooled,
        layer_states,
        attention,
    })
}

/// Eval-mode logits and pooled embeddings for one batch, as plain tensors.
pub fn infer<T: Scalar>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &EncodedBatch,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    // eval mode never draws from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = encoder_forward(&mut g, &bound, batch, config, false, &mut rng)?;
    Ok((g.value(out.logits).clone(), g.value(out.pooled).clone()))
}
