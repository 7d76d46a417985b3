//! Mask-driven cropping, bilinear resizing, normalization and seeded
//! augmentation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::util::rng_for;
use crate::Tensor64;

/// Half-open pixel box `[top, top+height) × [left, left+width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Smallest box covering every positive mask pixel, grown on each side by
/// `round(pad_fraction × box extent)` pixels and clipped to the image.
pub fn mask_bbox(mask: &Tensor64, pad_fraction: f64) -> Result<CropBox> {
    if mask.rank() != 2 {
        return Err(Error::shape(format!("mask must be H×W, got {:?}", mask.shape())));
    }
    if !(pad_fraction >= 0.0) || !pad_fraction.is_finite() {
        return Err(Error::invalid(format!("pad fraction must be >= 0, got {pad_fraction}")));
    }
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let mut rows = (usize::MAX, 0);
    let mut cols = (usize::MAX, 0);
    for (i, &v) in mask.data().iter().enumerate() {
        if v > 0.0 {
            let (r, c) = (i / w, i % w);
            rows = (rows.0.min(r), rows.1.max(r));
            cols = (cols.0.min(c), cols.1.max(c));
        }
    }
    if rows.0 == usize::MAX {
        return Err(Error::NoForeground);
    }
    let grow = |(lo, hi): (usize, usize), limit: usize| {
        let extent = hi - lo + 1;
        let pad = (pad_fraction * extent as f64).round() as usize;
        let lo = lo.saturating_sub(pad);
        let hi = (hi + pad).min(limit - 1);
        (lo, hi - lo + 1)
    };
    let (top, height) = grow(rows, h);
    let (left, width) = grow(cols, w);
    Ok(CropBox {
        top,
        left,
        height,
        width,
    })
}

pub fn crop(image: &Tensor64, b: CropBox) -> Result<Tensor64> {
    let (c, h, w) = chw(image)?;
    if b.top + b.height > h || b.left + b.width > w || b.height == 0 || b.width == 0 {
        return Err(Error::shape(format!("crop {b:?} outside {h}×{w} image")));
    }
    let mut out = Vec::with_capacity(c * b.height * b.width);
    for ch in 0..c {
        for r in b.top..b.top + b.height {
            let start = (ch * h + r) * w + b.left;
            out.extend_from_slice(&image.data()[start..start + b.width]);
        }
    }
    Tensor64::new(vec![c, b.height, b.width], out)
}

pub fn bbox_crop(image: &Tensor64, mask: &Tensor64, pad_fraction: f64) -> Result<Tensor64> {
    let (_, h, w) = chw(image)?;
    if mask.shape() != [h, w] {
        return Err(Error::shape(format!(
            "mask {:?} does not match image spatial size {h}×{w}",
            mask.shape()
        )));
    }
    crop(image, mask_bbox(mask, pad_fraction)?)
}

fn chw(image: &Tensor64) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::shape(format!("image must be C×H×W, got {s:?}"))),
    }
}

/// Source coordinate and weights for one output index (half-pixel centers).
fn taps(out: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resize of every channel to `size × size`, sampling at pixel
/// centers with edge clamping.
pub fn resize_bilinear(image: &Tensor64, size: usize) -> Result<Tensor64> {
    let (c, h, w) = chw(image)?;
    if size < 2 {
        return Err(Error::invalid(format!("target size must be >= 2, got {size}")));
    }
    let ys: Vec<_> = (0..size).map(|r| taps(r, h, size)).collect();
    let xs: Vec<_> = (0..size).map(|q| taps(q, w, size)).collect();
    let src = image.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor64::new(vec![c, size, size], out)
}

/// Per-channel `(x − mean) / std`.
pub fn normalize(image: &Tensor64, mean: &[f64], std: &[f64]) -> Result<Tensor64> {
    let (c, h, w) = chw(image)?;
    if mean.len() != c || std.len() != c {
        return Err(Error::shape(format!(
            "{c} channels but {} means and {} stds",
            mean.len(),
            std.len()
        )));
    }
    if let Some(s) = std.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::invalid(format!("std must be > 0, got {s}")));
    }
    let mut out = image.clone();
    for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        for v in plane {
            *v = (*v - mean[ch]) / std[ch];
        }
    }
    Ok(out)
}

pub fn resize_normalize(image: &Tensor64, size: usize, mean: &[f64], std: &[f64]) -> Result<Tensor64> {
    normalize(&resize_bilinear(image, size)?, mean, std)
}

/// Ranges for the seeded augmentations, applied in the order flip,
/// brightness, contrast.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    /// Brightness offset drawn from `[−brightness, brightness]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 − contrast, 1 + contrast]`.
    pub contrast: f64,
}

impl AugmentPolicy {
    pub const NONE: AugmentPolicy = AugmentPolicy {
        flip_prob: 0.0,
        brightness: 0.0,
        contrast: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob)));
        }
        if !(self.brightness >= 0.0) {
            return Err(Error::Config(format!("brightness must be >= 0, got {}", self.brightness)));
        }
        if !(0.0..1.0).contains(&self.contrast) {
            return Err(Error::Config(format!("contrast must lie in [0, 1), got {}", self.contrast)));
        }
        Ok(())
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            brightness: 0.1,
            contrast: 0.1,
        }
    }
}

pub fn flip_horizontal(image: &Tensor64) -> Result<Tensor64> {
    let (_, _, w) = chw(image)?;
    let mut out = image.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    Ok(out)
}

/// Applies `policy` drawing from `rng`. Zero ranges consume no randomness
/// and leave the image untouched.
pub fn augment_with<R: Rng>(image: &Tensor64, policy: &AugmentPolicy, rng: &mut R) -> Result<Tensor64> {
    let mut out = if policy.flip_prob > 0.0 && rng.random::<f64>() < policy.flip_prob {
        flip_horizontal(image)?
    } else {
        chw(image)?;
        image.clone()
    };
    if policy.brightness > 0.0 {
        let delta = rng.random_range(-policy.brightness..=policy.brightness);
        out.data_mut().iter_mut().for_each(|v| *v += delta);
    }
    if policy.contrast > 0.0 {
        let factor = rng.random_range(1.0 - policy.contrast..=1.0 + policy.contrast);
        let mean = out.sum() / out.len() as f64;
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = mean + (*v - mean) * factor);
    }
    Ok(out)
}

/// Augmentation whose randomness depends only on `(id, epoch, seed)`.
pub fn augment(image: &Tensor64, policy: &AugmentPolicy, id: &str, epoch: usize, seed: u64) -> Result<Tensor64> {
    let mut rng = rng_for(seed, &["augment", id, &epoch.to_string()]);
    augment_with(image, policy, &mut rng)
}
