use serde::{Deserialize, Serialize};

use super::BackboneError;
use crate::tensor::conv_out_extent;

/// One transformer stage: a strided convolutional token embedding followed by
/// `num_blocks` attention blocks at `embed_dim` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub embed_kernel: usize,
    pub embed_stride: usize,
    pub embed_pad: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    /// Spatial squeeze applied by the key/value depthwise projections.
    pub kv_stride: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    /// Depthwise kernel of the convolutional Q/K/V projections.
    #[serde(default = "default_qkv_kernel")]
    pub qkv_kernel: usize,
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_qkv_kernel() -> usize {
    3
}

impl StageSpec {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    pub fn qkv_pad(&self) -> usize {
        self.qkv_kernel / 2
    }

    /// Token grid produced from an `h × w` feature map.
    pub fn embed_grid(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let gh = conv_out_extent(h, self.embed_kernel, self.embed_stride, self.embed_pad)?;
        let gw = conv_out_extent(w, self.embed_kernel, self.embed_stride, self.embed_pad)?;
        (gh >= 1 && gw >= 1).then_some((gh, gw))
    }

    /// Key/value grid after the strided depthwise projection.
    pub fn kv_grid(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let kh = conv_out_extent(h, self.qkv_kernel, self.kv_stride, self.qkv_pad())?;
        let kw = conv_out_extent(w, self.qkv_kernel, self.kv_stride, self.qkv_pad())?;
        (kh >= 1 && kw >= 1).then_some((kh, kw))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Square input side in pixels.
    pub input_resolution: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub stages: Vec<StageSpec>,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_in_channels() -> usize {
    3
}

fn default_num_classes() -> usize {
    2
}

fn default_eps() -> f64 {
    1e-5
}

impl BackboneConfig {
    /// CvT-13 shape at 384 × 384.
    pub fn cvt13() -> Self {
        let stage = |k, s, p, dim, blocks, heads| StageSpec {
            embed_kernel: k,
            embed_stride: s,
            embed_pad: p,
            embed_dim: dim,
            num_blocks: blocks,
            num_heads: heads,
            kv_stride: 2,
            mlp_ratio: 4,
            qkv_kernel: 3,
        };
        BackboneConfig {
            input_resolution: 384,
            in_channels: 3,
            stages: vec![stage(7, 4, 2, 64, 1, 1), stage(3, 2, 1, 192, 2, 3), stage(3, 2, 1, 384, 10, 6)],
            num_classes: 2,
            layer_norm_eps: 1e-5,
        }
    }

    /// Same stage geometry as [`cvt13`](Self::cvt13), shrunk to train on a
    /// CPU in minutes: widths 8/16/32, one block per stage, 64 × 64 input.
    pub fn tiny() -> Self {
        let mut cfg = Self::cvt13();
        cfg.input_resolution = 64;
        for (spec, (dim, heads)) in cfg.stages.iter_mut().zip([(8, 1), (16, 2), (32, 2)]) {
            spec.embed_dim = dim;
            spec.num_heads = heads;
            spec.num_blocks = 1;
        }
        cfg
    }

    /// Resolves a preset name (`tiny`, `cvt13`).
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace('-', "").as_str() {
            "tiny" => Some(Self::tiny()),
            "cvt13" => Some(Self::cvt13()),
            _ => None,
        }
    }

    pub fn final_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.embed_dim)
    }

    /// Token grid after each stage's embedding, validating the whole chain.
    pub fn token_grids(&self) -> Result<Vec<(usize, usize)>, BackboneError> {
        let (mut h, mut w) = (self.input_resolution, self.input_resolution);
        let mut grids = Vec::with_capacity(self.stages.len());
        for (i, spec) in self.stages.iter().enumerate() {
            (h, w) = spec
                .embed_grid(h, w)
                .ok_or_else(|| BackboneError::Config(format!("stage {} token grid collapses below 1×1", i + 1)))?;
            spec.kv_grid(h, w)
                .ok_or_else(|| BackboneError::Config(format!("stage {} key/value grid collapses below 1×1", i + 1)))?;
            grids.push((h, w));
        }
        Ok(grids)
    }

    pub fn validate(&self) -> Result<(), BackboneError> {
        let bad = |msg: String| Err(BackboneError::Config(msg));
        if self.stages.len() != 3 {
            return bad(format!("exactly 3 stages required, got {}", self.stages.len()));
        }
        if self.num_classes != 2 {
            return bad(format!("stage heads are binary, got num_classes = {}", self.num_classes));
        }
        if self.in_channels == 0 || self.input_resolution == 0 {
            return bad("input channels and resolution must be positive".into());
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return bad("layer_norm_eps must be positive".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            if s.embed_dim == 0 || s.num_heads == 0 || s.embed_dim % s.num_heads != 0 {
                return bad(format!("stage {n}: embed_dim {} not divisible by num_heads {}", s.embed_dim, s.num_heads));
            }
            if s.num_blocks == 0 {
                return bad(format!("stage {n}: num_blocks must be >= 1"));
            }
            if s.embed_stride == 0 || s.kv_stride == 0 || s.embed_kernel == 0 {
                return bad(format!("stage {n}: strides and kernels must be >= 1"));
            }
            if s.qkv_kernel % 2 == 0 {
                return bad(format!("stage {n}: qkv_kernel must be odd"));
            }
            if s.mlp_ratio == 0 {
                return bad(format!("stage {n}: mlp_ratio must be >= 1"));
            }
        }
        self.token_grids().map(|_| ())
    }
}
