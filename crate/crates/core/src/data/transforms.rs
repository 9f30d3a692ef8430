use std::borrow::Cow;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Planar RGB in `[0, 1]`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl PixelImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
            }
        }
        PixelImage { width: w, height: h, data }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn hflip(&mut self) {
        let w = self.width;
        for row in self.data.chunks_mut(w) {
            row.reverse();
        }
    }

    pub fn vflip(&mut self) {
        let (w, h) = (self.width, self.height);
        for c in 0..3 {
            let plane = self.plane_mut(c);
            for y in 0..h / 2 {
                let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
                top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }

    fn luma(&self) -> Vec<f32> {
        let n = self.width * self.height;
        (0..n).map(|i| (0..3).map(|c| LUMA[c] * self.data[c * n + i]).sum()).collect()
    }

    pub fn adjust_brightness(&mut self, factor: f32) {
        if factor != 1.0 {
            self.data.iter_mut().for_each(|v| *v = (*v * factor).clamp(0.0, 1.0));
        }
    }

    /// Blends towards the mean luma of the whole image.
    pub fn adjust_contrast(&mut self, factor: f32) {
        if factor != 1.0 {
            let luma = self.luma();
            let mean = luma.iter().sum::<f32>() / luma.len() as f32;
            self.data.iter_mut().for_each(|v| *v = (mean + factor * (*v - mean)).clamp(0.0, 1.0));
        }
    }

    /// Blends each pixel towards its own luma.
    pub fn adjust_saturation(&mut self, factor: f32) {
        if factor != 1.0 {
            let luma = self.luma();
            let n = luma.len();
            for c in 0..3 {
                for (v, &g) in self.data[c * n..(c + 1) * n].iter_mut().zip(&luma) {
                    *v = (g + factor * (*v - g)).clamp(0.0, 1.0);
                }
            }
        }
    }

    /// Counter-clockwise rotation about the centre, bilinear, with edge
    /// replication outside the source.
    pub fn rotate(&self, degrees: f32) -> PixelImage {
        if degrees == 0.0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let (sin, cos) = degrees.to_radians().sin_cos();
        let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let sx = (cx + cos * dx - sin * dy).clamp(0.0, (w - 1) as f32);
                let sy = (cy + sin * dx + cos * dy).clamp(0.0, (h - 1) as f32);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
                for c in 0..3 {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out[(c * h + y) * w + x] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
        PixelImage { width: w, height: h, data: out }
    }
}

/// Bilinear resize to `side × side`; images already that size pass through.
pub fn resize(img: &RgbImage, side: usize) -> Cow<'_, RgbImage> {
    let side = side as u32;
    if img.width() == side && img.height() == side {
        Cow::Borrowed(img)
    } else {
        Cow::Owned(imageops::resize(img, side, side, FilterType::Triangle))
    }
}

/// Per-channel ImageNet standardization to a `[3, H, W]` tensor.
pub fn normalize(img: &PixelImage) -> Tensor<f32> {
    let n = img.width * img.height;
    let data = img.data.iter().enumerate().map(|(i, &v)| (v - IMAGENET_MEAN[i / n]) / IMAGENET_STD[i / n]).collect();
    Tensor::new([3, img.height, img.width], data).expect("3 planes")
}

/// Inverse of [`normalize`].
pub fn denormalize(t: &Tensor<f32>) -> PixelImage {
    let [_, h, w] = *t.shape() else { panic!("expected [3, H, W], got {:?}", t.shape()) };
    let n = h * w;
    let data = t.data().iter().enumerate().map(|(i, &v)| v * IMAGENET_STD[i / n] + IMAGENET_MEAN[i / n]).collect();
    PixelImage { width: w, height: h, data }
}

pub fn val_transforms(img: &RgbImage, resolution: usize) -> Tensor<f32> {
    normalize(&PixelImage::from_rgb(&resize(img, resolution)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Brightness, contrast and saturation factors are drawn from
    /// `[1 − jitter, 1 + jitter]`.
    pub jitter: f32,
    pub max_rotation_deg: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { hflip_prob: 0.5, vflip_prob: 0.5, jitter: 0.2, max_rotation_deg: 15.0 }
    }
}

/// One concrete draw of the training augmentations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub rotation_deg: f32,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams =
        AugmentParams { hflip: false, vflip: false, brightness: 1.0, contrast: 1.0, saturation: 1.0, rotation_deg: 0.0 };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let hflip = rng.random_bool(cfg.hflip_prob);
        let vflip = rng.random_bool(cfg.vflip_prob);
        let j = cfg.jitter;
        let mut factor = || if j > 0.0 { rng.random_range(1.0 - j..=1.0 + j) } else { 1.0 };
        let (brightness, contrast, saturation) = (factor(), factor(), factor());
        let r = cfg.max_rotation_deg;
        let rotation_deg = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        AugmentParams { hflip, vflip, brightness, contrast, saturation, rotation_deg }
    }
}

/// Resize, flips, colour jitter and rotation, before normalization.
pub fn augment_pixels(img: &RgbImage, resolution: usize, p: &AugmentParams) -> PixelImage {
    let mut px = PixelImage::from_rgb(&resize(img, resolution));
    if p.hflip {
        px.hflip();
    }
    if p.vflip {
        px.vflip();
    }
    px.adjust_brightness(p.brightness);
    px.adjust_contrast(p.contrast);
    px.adjust_saturation(p.saturation);
    px.rotate(p.rotation_deg)
}

pub fn augment(img: &RgbImage, resolution: usize, p: &AugmentParams) -> Tensor<f32> {
    normalize(&augment_pixels(img, resolution, p))
}

pub fn train_transforms(img: &RgbImage, resolution: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Tensor<f32> {
    augment(img, resolution, &AugmentParams::sample(cfg, rng))
}
