//! Training-time image augmentation.
//!
//! Order: random crop-and-resize, horizontal flip, brightness/contrast/
//! saturation jitter, grayscale, clamp to `[0, 1]`, per-channel
//! normalization. Evaluation uses [`normalize`] alone so train and test see
//! the same value range.

use serde::{Deserialize, Serialize};

use crate::error::{DgError, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Augmentation settings; defaults follow the standard recipe the trainers
/// use (flip 0.5, jitter scales in `[0.6, 1.4]`, grayscale 0.1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    pub crop_enabled: bool,
    pub flip_probability: f64,
    pub jitter_range: (f64, f64),
    pub grayscale_probability: f64,
    pub normalize_mean: [f64; 3],
    pub normalize_std: [f64; 3],
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            crop_enabled: true,
            flip_probability: 0.5,
            jitter_range: (0.6, 1.4),
            grayscale_probability: 0.1,
            normalize_mean: [0.5, 0.5, 0.5],
            normalize_std: [0.5, 0.5, 0.5],
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(DgError::Config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        if !(0.0..=1.0).contains(&self.grayscale_probability) {
            return Err(DgError::Config(format!(
                "grayscale probability {} outside [0, 1]",
                self.grayscale_probability
            )));
        }
        if self.jitter_range.0 > self.jitter_range.1 {
            return Err(DgError::Config(format!(
                "jitter range low {} above high {}",
                self.jitter_range.0, self.jitter_range.1
            )));
        }
        if self.normalize_std.iter().any(|&s| s == 0.0) {
            return Err(DgError::Config("normalization std of 0".into()));
        }
        Ok(())
    }
}

fn dims(image: &Tensor<f64>) -> Result<(usize, usize)> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(DgError::Dimension(format!(
            "augment expects a [3, h, w] image, got {shape:?}"
        )));
    }
    Ok((shape[1], shape[2]))
}

/// Mirrors the image about its vertical axis. An involution.
pub fn hflip(image: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = dims(image).expect("hflip shape");
    let src = image.data();
    let mut out = vec![0.0f64; src.len()];
    let plane = h * w;
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                out[c * plane + i * w + j] = src[c * plane + i * w + (w - 1 - j)];
            }
        }
    }
    Tensor::from_vec(image.shape().to_vec(), out).expect("hflip shape")
}

/// Per-channel `(x - mean) / std`.
pub fn normalize(image: &Tensor<f64>, cfg: &AugConfig) -> Tensor<f64> {
    let (h, w) = dims(image).expect("normalize shape");
    let plane = h * w;
    let src = image.data();
    let mut out = vec![0.0f64; src.len()];
    for c in 0..3 {
        let (m, s) = (cfg.normalize_mean[c], cfg.normalize_std[c]);
        for p in 0..plane {
            out[c * plane + p] = (src[c * plane + p] - m) / s;
        }
    }
    Tensor::from_vec(image.shape().to_vec(), out).expect("normalize shape")
}

fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Bilinear crop-and-resize back to the full extent.
fn crop_resize(image: &Tensor<f64>, frac: f64, oy: usize, ox: usize) -> Tensor<f64> {
    let (h, w) = dims(image).expect("crop shape");
    let ch = ((frac * h as f64).floor() as usize).clamp(1, h);
    let cw = ((frac * w as f64).floor() as usize).clamp(1, w);
    let oy = oy.min(h - ch);
    let ox = ox.min(w - cw);
    let plane = h * w;
    let src = image.data();
    let mut out = vec![0.0f64; src.len()];
    for c in 0..3 {
        for i in 0..h {
            let sy = ((i as f64 + 0.5) * ch as f64 / h as f64 - 0.5).clamp(0.0, ch as f64 - 1.0);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(ch - 1);
            let ty = sy - y0 as f64;
            for j in 0..w {
                let sx =
                    ((j as f64 + 0.5) * cw as f64 / w as f64 - 0.5).clamp(0.0, cw as f64 - 1.0);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(cw - 1);
                let tx = sx - x0 as f64;
                let at = |yy: usize, xx: usize| src[c * plane + (oy + yy) * w + (ox + xx)];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[c * plane + i * w + j] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    Tensor::from_vec(image.shape().to_vec(), out).expect("crop shape")
}

/// Applies the full pipeline with decisions drawn from `stream`.
pub fn augment(image: &Tensor<f64>, cfg: &AugConfig, stream: &mut Stream) -> Result<Tensor<f64>> {
    let (h, w) = dims(image)?;
    cfg.validate()?;
    let plane = h * w;

    let mut img = image.clone();

    if cfg.crop_enabled {
        let frac = stream.range(0.8, 1.0);
        let ch = ((frac * h as f64).floor() as usize).clamp(1, h);
        let cw = ((frac * w as f64).floor() as usize).clamp(1, w);
        let oy = stream.below(h - ch + 1);
        let ox = stream.below(w - cw + 1);
        img = crop_resize(&img, frac, oy, ox);
    }

    if cfg.flip_probability > 0.0 && stream.bernoulli(cfg.flip_probability) {
        img = hflip(&img);
    }

    // unit factors are skipped outright so the identity configuration is
    // bit-exact
    let (lo, hi) = cfg.jitter_range;
    let brightness = stream.range(lo, hi);
    let contrast = stream.range(lo, hi);
    let saturation = stream.range(lo, hi);
    {
        let data = img.data_mut();
        if brightness != 1.0 {
            for v in data.iter_mut() {
                *v *= brightness;
            }
        }
        if contrast != 1.0 {
            // blend with the mean luminance
            let mut mean = 0.0;
            for p in 0..plane {
                mean += luminance(data[p], data[plane + p], data[2 * plane + p]);
            }
            mean /= plane as f64;
            for v in data.iter_mut() {
                *v = mean + (*v - mean) * contrast;
            }
        }
        if saturation != 1.0 {
            // blend each pixel with its own luminance
            for p in 0..plane {
                let l = luminance(data[p], data[plane + p], data[2 * plane + p]);
                for c in 0..3 {
                    let v = &mut data[c * plane + p];
                    *v = l + (*v - l) * saturation;
                }
            }
        }
    }

    if cfg.grayscale_probability > 0.0 && stream.bernoulli(cfg.grayscale_probability) {
        let data = img.data_mut();
        for p in 0..plane {
            let l = luminance(data[p], data[plane + p], data[2 * plane + p]);
            data[p] = l;
            data[plane + p] = l;
            data[2 * plane + p] = l;
        }
    }

    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    Ok(normalize(&img, cfg))
}
