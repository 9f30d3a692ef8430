//! Convolutional vision transformer used by every cascade stage.
//!
//! Three stages, each a strided convolutional token embedding followed by
//! pre-norm attention blocks whose Q/K/V come from depthwise convolutions on
//! the token grid. The final tokens are mean-pooled, layer-normalized and fed
//! to a two-unit linear head.

mod config;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use config::{BackboneConfig, StageSpec};
pub use params::{BoundParams, ParamStore};

use crate::labels::Stage;
use crate::tensor::{Conv2dParams, Element, GradTape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("invalid backbone config: {0}")]
    Config(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("expected input [N, {channels}, {resolution}, {resolution}], got {found:?}")]
    Resolution { channels: usize, resolution: usize, found: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T, E = BackboneError> = std::result::Result<T, E>;

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

const INIT_STD: f64 = 0.02;

pub fn stage_prefix(stage: usize) -> String {
    format!("stage{}", stage + 1)
}

pub fn block_prefix(stage: usize, block: usize) -> String {
    format!("stage{}.block{}", stage + 1, block + 1)
}

/// Tokens `[N, H·W, D]` together with the grid they came from.
#[derive(Clone, Debug)]
pub struct TokenMap<T: Element = f32> {
    pub tokens: Var<T>,
    pub grid: (usize, usize),
}

/// Output of one attention block, with the attention probabilities
/// `[N·heads, L_q, L_kv]` kept for inspection.
pub struct BlockOutput<T: Element = f32> {
    pub tokens: Var<T>,
    pub attention: Var<T>,
}

fn tokens_to_map<T: Element>(tape: &GradTape<T>, tokens: &Var<T>, grid: (usize, usize)) -> Result<Var<T>> {
    let [n, l, d] = *tokens.shape() else {
        return Err(BackboneError::Tensor(TensorError::Shape { op: "tokens_to_map", detail: format!("{:?}", tokens.shape()) }));
    };
    if l != grid.0 * grid.1 {
        return Err(BackboneError::Tensor(TensorError::Shape {
            op: "tokens_to_map",
            detail: format!("{l} tokens do not fill a {}×{} grid", grid.0, grid.1),
        }));
    }
    let t = tape.permute(tokens, &[0, 2, 1])?;
    Ok(tape.reshape(&t, [n, d, grid.0, grid.1])?)
}

fn map_to_tokens<T: Element>(tape: &GradTape<T>, map: &Var<T>) -> Result<TokenMap<T>> {
    let [n, d, h, w] = *map.shape() else {
        return Err(BackboneError::Tensor(TensorError::Shape { op: "map_to_tokens", detail: format!("{:?}", map.shape()) }));
    };
    let flat = tape.reshape(map, [n, d, h * w])?;
    Ok(TokenMap { tokens: tape.permute(&flat, &[0, 2, 1])?, grid: (h, w) })
}

fn layer_norm<T: Element>(tape: &GradTape<T>, p: &BoundParams<T>, prefix: &str, x: &Var<T>, eps: T) -> Result<Var<T>> {
    let g = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(tape.layer_norm(x, g, b, eps)?)
}

fn linear<T: Element>(tape: &GradTape<T>, p: &BoundParams<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(tape.linear(x, w, Some(b))?)
}

fn eps<T: Element>(cfg: &BackboneConfig) -> T {
    T::lit(cfg.layer_norm_eps)
}

/// Overlapping strided convolution, flattened to tokens, then layer norm over
/// channels.
pub fn conv_token_embed<T: Element>(
    tape: &GradTape<T>,
    params: &BoundParams<T>,
    cfg: &BackboneConfig,
    stage: usize,
    feature_map: &Var<T>,
) -> Result<TokenMap<T>> {
    let spec = &cfg.stages[stage];
    let prefix = format!("{}.embed", stage_prefix(stage));
    let w = params.get(&format!("{prefix}.conv.weight"))?;
    let b = params.get(&format!("{prefix}.conv.bias"))?;
    let map = tape.conv2d(feature_map, w, Some(b), Conv2dParams::square(spec.embed_stride, spec.embed_pad))?;
    let TokenMap { tokens, grid } = map_to_tokens(tape, &map)?;
    let tokens = layer_norm(tape, params, &format!("{prefix}.norm"), &tokens, eps(cfg))?;
    Ok(TokenMap { tokens, grid })
}

/// Depthwise convolution on the token grid (stride 1 for queries,
/// `kv_stride` for keys and values), then a pointwise linear map each.
pub fn conv_projection<T: Element>(
    tape: &GradTape<T>,
    params: &BoundParams<T>,
    spec: &StageSpec,
    block_prefix: &str,
    input: &TokenMap<T>,
) -> Result<(Var<T>, Var<T>, Var<T>)> {
    let map = tokens_to_map(tape, &input.tokens, input.grid)?;
    let channels = spec.embed_dim;
    let project = |name: &str, stride: usize| -> Result<Var<T>> {
        let w = params.get(&format!("{block_prefix}.attn.conv_{name}.weight"))?;
        let conv = Conv2dParams::square(stride, spec.qkv_pad()).with_groups(channels);
        let squeezed = tape.conv2d(&map, w, None, conv)?;
        let tokens = map_to_tokens(tape, &squeezed)?.tokens;
        linear(tape, params, &format!("{block_prefix}.attn.proj_{name}"), &tokens)
    };
    Ok((project("q", 1)?, project("k", spec.kv_stride)?, project("v", spec.kv_stride)?))
}

fn split_heads<T: Element>(tape: &GradTape<T>, x: &Var<T>, heads: usize) -> Result<Var<T>> {
    let [n, l, d] = *x.shape() else { unreachable!("token tensors are 3-D") };
    let x = tape.reshape(x, [n, l, heads, d / heads])?;
    let x = tape.permute(&x, &[0, 2, 1, 3])?;
    Ok(tape.reshape(&x, [n * heads, l, d / heads])?)
}

fn merge_heads<T: Element>(tape: &GradTape<T>, x: &Var<T>, batch: usize, heads: usize) -> Result<Var<T>> {
    let [_, l, dh] = *x.shape() else { unreachable!("head tensors are 3-D") };
    let x = tape.reshape(x, [batch, heads, l, dh])?;
    let x = tape.permute(&x, &[0, 2, 1, 3])?;
    Ok(tape.reshape(&x, [batch, l, heads * dh])?)
}

/// Pre-norm convolutional-projection attention with a residual add, then a
/// pre-norm GELU MLP with a residual add.
pub fn attention_block<T: Element>(
    tape: &GradTape<T>,
    params: &BoundParams<T>,
    cfg: &BackboneConfig,
    stage: usize,
    block: usize,
    input: &TokenMap<T>,
) -> Result<BlockOutput<T>> {
    let spec = &cfg.stages[stage];
    let prefix = block_prefix(stage, block);
    let batch = input.tokens.shape()[0];
    let heads = spec.num_heads;

    let normed = layer_norm(tape, params, &format!("{prefix}.norm1"), &input.tokens, eps(cfg))?;
    let (q, k, v) = conv_projection(tape, params, spec, &prefix, &TokenMap { tokens: normed, grid: input.grid })?;
    let (q, k, v) = (split_heads(tape, &q, heads)?, split_heads(tape, &k, heads)?, split_heads(tape, &v, heads)?);
    let scores = tape.batched_matmul(&q, &k, true)?;
    let scale = T::one() / T::from_usize(spec.head_dim()).unwrap().sqrt();
    let scores = tape.scale(&scores, scale)?;
    let attention = tape.softmax(&scores)?;
    let context = tape.batched_matmul(&attention, &v, false)?;
    let context = merge_heads(tape, &context, batch, heads)?;
    let attn_out = linear(tape, params, &format!("{prefix}.attn.proj_out"), &context)?;
    let tokens = tape.add(&input.tokens, &attn_out)?;

    let normed = layer_norm(tape, params, &format!("{prefix}.norm2"), &tokens, eps(cfg))?;
    let hidden = linear(tape, params, &format!("{prefix}.mlp.fc1"), &normed)?;
    let hidden = tape.gelu(&hidden)?;
    let mlp_out = linear(tape, params, &format!("{prefix}.mlp.fc2"), &hidden)?;
    let tokens = tape.add(&tokens, &mlp_out)?;
    Ok(BlockOutput { tokens, attention })
}

/// What one stage produced during [`StageModel::forward_traced`].
#[derive(Clone, Debug)]
pub struct StageTrace<T: Element = f32> {
    pub grid: (usize, usize),
    /// Output tokens `[N, H·W, D]`.
    pub tokens: Tensor<T>,
    /// Attention probabilities `[N·heads, L_q, L_kv]`, one per block.
    pub attention: Vec<Tensor<T>>,
}

/// One stage classifier: backbone, global pooling and a two-unit head.
#[derive(Clone, Debug)]
pub struct StageModel<T: Element = f32> {
    config: BackboneConfig,
    stage: Option<Stage>,
    params: ParamStore<T>,
}

impl<T: Element> StageModel<T> {
    /// Fresh model: truncated-normal (σ = 0.02) weights, zero biases, unit
    /// layer-norm gains. Everything starts trainable.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut trunc = |shape: Vec<usize>| {
            Tensor::from_fn(shape, |_| loop {
                let v: f64 = normal.sample(&mut rng);
                if v.abs() <= 2.0 * INIT_STD {
                    break T::lit(v);
                }
            })
        };
        let mut params = ParamStore::default();
        let add_norm = |params: &mut ParamStore<T>, prefix: &str, d: usize| {
            params.insert(format!("{prefix}.weight"), Tensor::ones([d]));
            params.insert(format!("{prefix}.bias"), Tensor::zeros([d]));
        };
        let mut in_ch = config.in_channels;
        for (si, spec) in config.stages.iter().enumerate() {
            let d = spec.embed_dim;
            let sp = stage_prefix(si);
            params.insert(format!("{sp}.embed.conv.weight"), trunc(vec![d, in_ch, spec.embed_kernel, spec.embed_kernel]));
            params.insert(format!("{sp}.embed.conv.bias"), Tensor::zeros([d]));
            add_norm(&mut params, &format!("{sp}.embed.norm"), d);
            for bi in 0..spec.num_blocks {
                let bp = block_prefix(si, bi);
                add_norm(&mut params, &format!("{bp}.norm1"), d);
                for name in ["q", "k", "v"] {
                    params.insert(format!("{bp}.attn.conv_{name}.weight"), trunc(vec![d, 1, spec.qkv_kernel, spec.qkv_kernel]));
                }
                for name in ["proj_q", "proj_k", "proj_v", "proj_out"] {
                    params.insert(format!("{bp}.attn.{name}.weight"), trunc(vec![d, d]));
                    params.insert(format!("{bp}.attn.{name}.bias"), Tensor::zeros([d]));
                }
                add_norm(&mut params, &format!("{bp}.norm2"), d);
                let h = spec.mlp_hidden();
                params.insert(format!("{bp}.mlp.fc1.weight"), trunc(vec![h, d]));
                params.insert(format!("{bp}.mlp.fc1.bias"), Tensor::zeros([h]));
                params.insert(format!("{bp}.mlp.fc2.weight"), trunc(vec![d, h]));
                params.insert(format!("{bp}.mlp.fc2.bias"), Tensor::zeros([d]));
            }
            in_ch = d;
        }
        let d = config.final_dim();
        add_norm(&mut params, "norm", d);
        params.insert(HEAD_WEIGHT.to_string(), trunc(vec![config.num_classes, d]));
        params.insert(HEAD_BIAS.to_string(), Tensor::zeros([config.num_classes]));
        Ok(StageModel { config, stage: None, params })
    }

    /// Reassembles a model from stored parameters, checking that every
    /// expected tensor is present with the expected shape.
    pub fn from_named_tensors(
        config: BackboneConfig,
        stage: Option<Stage>,
        tensors: impl IntoIterator<Item = (String, Tensor<T>)>,
    ) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.stage = stage;
        let loaded = model.load_named_tensors(tensors)?;
        if loaded != model.params.len() {
            let missing = model.params.len() - loaded;
            return Err(BackboneError::Config(format!("{missing} parameters missing from the tensor set")));
        }
        Ok(model)
    }

    /// Copies matching named tensors into the model (e.g. imported pretrained
    /// weights). Unknown names and shape mismatches are errors. Returns how
    /// many tensors were loaded.
    pub fn load_named_tensors(&mut self, tensors: impl IntoIterator<Item = (String, Tensor<T>)>) -> Result<usize> {
        let mut count = 0;
        let mut seen = vec![false; self.params.len()];
        for (name, tensor) in tensors {
            self.params.set(&name, tensor)?;
            let i = self.params.position(&name).expect("set succeeded");
            if !std::mem::replace(&mut seen[i], true) {
                count += 1;
            }
        }
        Ok(count)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn stage(&self) -> Option<Stage> {
        self.stage
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = Some(stage);
        self
    }

    pub fn set_stage(&mut self, stage: Option<Stage>) {
        self.stage = stage;
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Head-only fine-tuning: only the head weight and bias stay trainable.
    pub fn freeze_backbone(&mut self) {
        self.params.set_all_trainable(|name| name == HEAD_WEIGHT || name == HEAD_BIAS);
    }

    pub fn unfreeze_all(&mut self) {
        self.params.set_all_trainable(|_| true);
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn cast<U: Element>(&self) -> StageModel<U> {
        StageModel { config: self.config.clone(), stage: self.stage, params: self.params.cast() }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let r = self.config.input_resolution;
        let c = self.config.in_channels;
        match shape {
            [n, ch, h, w] if *n >= 1 && *ch == c && *h == r && *w == r => Ok(()),
            _ => Err(BackboneError::Resolution { channels: c, resolution: r, found: shape.to_vec() }),
        }
    }

    /// Pooled, normalized final features `[N, D]` (the head's input).
    pub fn features_on(&self, tape: &GradTape<T>, params: &BoundParams<T>, image: &Var<T>) -> Result<Var<T>> {
        self.features_traced(tape, params, image, None)
    }

    fn features_traced(
        &self,
        tape: &GradTape<T>,
        params: &BoundParams<T>,
        image: &Var<T>,
        mut trace: Option<&mut Vec<StageTrace<T>>>,
    ) -> Result<Var<T>> {
        self.check_input(image.shape())?;
        let mut map = image.clone();
        let mut last = None;
        for (si, spec) in self.config.stages.iter().enumerate() {
            let mut tokens = conv_token_embed(tape, params, &self.config, si, &map)?;
            let mut attention = Vec::new();
            for bi in 0..spec.num_blocks {
                let out = attention_block(tape, params, &self.config, si, bi, &tokens)?;
                if trace.is_some() {
                    attention.push(out.attention.value().clone());
                }
                tokens = TokenMap { tokens: out.tokens, grid: tokens.grid };
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(StageTrace { grid: tokens.grid, tokens: tokens.tokens.value().clone(), attention });
            }
            map = tokens_to_map(tape, &tokens.tokens, tokens.grid)?;
            last = Some(tokens);
        }
        let tokens = last.expect("three stages").tokens;
        let pooled = tape.mean_axis(&tokens, 1)?;
        layer_norm(tape, params, "norm", &pooled, eps(&self.config))
    }

    /// Logits `[N, 2]` on a tape, for training.
    pub fn forward_on(&self, tape: &GradTape<T>, params: &BoundParams<T>, image: &Var<T>) -> Result<Var<T>> {
        let features = self.features_on(tape, params, image)?;
        linear(tape, params, "head", &features)
    }

    /// Forward pass that also returns every stage's output tokens and
    /// attention maps.
    pub fn forward_traced(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<StageTrace<T>>)> {
        let tape = GradTape::new();
        let params = self.params.bind(&tape, false);
        let x = tape.constant(image.clone());
        let mut trace = Vec::with_capacity(3);
        let features = self.features_traced(&tape, &params, &x, Some(&mut trace))?;
        let logits = linear(&tape, &params, "head", &features)?;
        Ok((logits.value().clone(), trace))
    }

    /// Logits `[N, 2]` for a normalized image batch `[N, C, R, R]`.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = GradTape::new();
        let params = self.params.bind(&tape, false);
        let x = tape.constant(image.clone());
        Ok(self.forward_on(&tape, &params, &x)?.value().clone())
    }
}
