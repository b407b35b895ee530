//! Image augmentation for classifier inputs and adaptive discriminator
//! augmentation (ADA).
//!
//! All transforms act on NHWC images in `[0, 1]`. ADA is built from
//! per-sample pixel remappings and per-sample affine colour changes, so it
//! stays differentiable with respect to its input and can sit between the
//! generator and the feature extractor.

use std::rc::Rc;

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ops, Array, Tensor};
use crate::error::{Error, Result};

/// Largest ADA probability permitted anywhere.
pub const ADA_P_CAP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropConfig {
    /// Side of the square window taken from the padded image.
    pub size: usize,
    /// Zero padding added on every side before cropping.
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierAugConfig {
    pub flip_prob: f64,
    /// Crops smaller than the image are resized back with nearest sampling.
    pub crop: Option<CropConfig>,
    /// Augment replayed synthetic images as well as real ones.
    pub augment_synthetic: bool,
}

impl Default for ClassifierAugConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            crop: None,
            augment_synthetic: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaOp {
    Flip,
    Rot90,
    Translate,
    Color,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaConfig {
    pub enabled: bool,
    pub ops: Vec<AdaOp>,
    pub p_cap: f64,
    /// Target for the mean sign of real-side scores.
    pub target: f64,
    pub adjust_step: f64,
    /// Discriminator steps between probability updates.
    pub interval: usize,
    /// Largest translation as a fraction of the image side.
    pub max_translate: f64,
    pub brightness_std: f64,
    pub contrast_std: f64,
}

impl Default for AdaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            ops: vec![AdaOp::Flip, AdaOp::Rot90, AdaOp::Translate, AdaOp::Color],
            p_cap: ADA_P_CAP,
            target: 0.6,
            adjust_step: 0.01,
            interval: 4,
            max_translate: 0.125,
            brightness_std: 0.2,
            contrast_std: 0.5 * std::f64::consts::LN_2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugPipelineConfig {
    pub classifier: ClassifierAugConfig,
    pub ada: AdaConfig,
}

impl AugPipelineConfig {
    pub fn validate(&self, image: (usize, usize, usize)) -> Result<()> {
        let c = &self.classifier;
        if !(0.0..=1.0).contains(&c.flip_prob) {
            return Err(Error::Config(format!("flip_prob {} outside [0, 1]", c.flip_prob)));
        }
        if let Some(crop) = &c.crop {
            check_crop(crop, image.0, image.1)?;
        }
        let a = &self.ada;
        if !(0.0..=ADA_P_CAP).contains(&a.p_cap) {
            return Err(Error::Config(format!("ADA p_cap {} outside [0, {ADA_P_CAP}]", a.p_cap)));
        }
        if a.interval == 0 {
            return Err(Error::Config("ADA interval must be at least 1".into()));
        }
        if !(a.adjust_step >= 0.0 && a.adjust_step.is_finite()) {
            return Err(Error::Config(format!("ADA adjust_step {} must be non-negative", a.adjust_step)));
        }
        if !(0.0..0.5).contains(&a.max_translate) {
            return Err(Error::Config(format!("max_translate {} outside [0, 0.5)", a.max_translate)));
        }
        Ok(())
    }
}

fn check_crop(crop: &CropConfig, h: usize, w: usize) -> Result<()> {
    if crop.size == 0 || crop.size > h.min(w) + 2 * crop.padding {
        return Err(Error::Config(format!(
            "crop size {} does not fit a {h}x{w} image with padding {}",
            crop.size, crop.padding
        )));
    }
    Ok(())
}

fn dims(images: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match images {
        [b, h, w, c] => Ok((*b, *h, *w, *c)),
        s => Err(Error::Shape(format!("expected NHWC images, got {s:?}"))),
    }
}

/// Per-sample pixel map: output `(y, x)` reads source `(y, x)` of `src`.
type PixelMap = Vec<Option<(usize, usize)>>;

fn identity_map(h: usize, w: usize) -> PixelMap {
    (0..h * w).map(|i| Some((i / w, i % w))).collect()
}

/// Composes `outer ∘ inner`: first apply `inner`, then `outer`.
fn compose(inner: &PixelMap, outer: &PixelMap, w: usize) -> PixelMap {
    outer
        .iter()
        .map(|o| o.and_then(|(y, x)| inner[y * w + x]))
        .collect()
}

fn flip_map(h: usize, w: usize) -> PixelMap {
    (0..h * w).map(|i| Some((i / w, w - 1 - i % w))).collect()
}

/// Counter-clockwise quarter turns of a square image.
fn rot90_map(n: usize, turns: usize) -> PixelMap {
    (0..n * n)
        .map(|i| {
            let (mut y, mut x) = (i / n, i % n);
            for _ in 0..turns % 4 {
                let (ny, nx) = (x, n - 1 - y);
                y = ny;
                x = nx;
            }
            Some((y, x))
        })
        .collect()
}

fn reflect(v: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = v.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Integer shift with reflected borders.
fn translate_map(h: usize, w: usize, dy: isize, dx: isize) -> PixelMap {
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            Some((reflect(y - dy, h), reflect(x - dx, w)))
        })
        .collect()
}

/// Pad-and-crop with `None` outside the source; resized back to `h×w`.
fn crop_map(h: usize, w: usize, crop: &CropConfig, oy: usize, ox: usize) -> PixelMap {
    let p = crop.padding as isize;
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let cy = (y * crop.size / h) as isize + oy as isize - p;
            let cx = (x * crop.size / w) as isize + ox as isize - p;
            if cy < 0 || cx < 0 || cy >= h as isize || cx >= w as isize {
                None
            } else {
                Some((cy as usize, cx as usize))
            }
        })
        .collect()
}

fn flatten(maps: &[PixelMap], w: usize) -> Rc<Vec<Option<u32>>> {
    Rc::new(
        maps.iter()
            .flat_map(|m| m.iter().map(|p| p.map(|(y, x)| (y * w + x) as u32)))
            .collect(),
    )
}

fn gather(images: &Tensor, maps: &[PixelMap], w: usize) -> Tensor {
    ops::spatial_gather(images, flatten(maps, w))
}

/// Horizontally flips the samples whose mask entry is true.
pub fn flip_horizontal(images: &Array, mask: &[bool]) -> Result<Array> {
    let (b, h, w, _) = dims(images.shape())?;
    if mask.len() != b {
        return Err(Error::Shape(format!("{} mask entries for {b} images", mask.len())));
    }
    let maps: Vec<PixelMap> = mask
        .iter()
        .map(|&m| if m { flip_map(h, w) } else { identity_map(h, w) })
        .collect();
    Ok(gather(&Tensor::constant(images.clone()), &maps, w).into_value())
}

/// Random horizontal flip and optional pad-and-crop, independently per
/// sample.
pub fn apply_classifier_augs<R: Rng + ?Sized>(images: &Array, cfg: &ClassifierAugConfig, rng: &mut R) -> Result<Array> {
    let (b, h, w, _) = dims(images.shape())?;
    if let Some(crop) = &cfg.crop {
        check_crop(crop, h, w)?;
    }
    if cfg.flip_prob == 0.0 && cfg.crop.is_none() {
        return Ok(images.clone());
    }
    let mut maps = Vec::with_capacity(b);
    for _ in 0..b {
        let mut m = identity_map(h, w);
        if let Some(crop) = &cfg.crop {
            let span_y = h + 2 * crop.padding - crop.size;
            let span_x = w + 2 * crop.padding - crop.size;
            let oy = rng.random_range(0..=span_y);
            let ox = rng.random_range(0..=span_x);
            m = crop_map(h, w, crop, oy, ox);
        }
        if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
            m = compose(&m, &flip_map(h, w), w);
        }
        maps.push(m);
    }
    Ok(gather(&Tensor::constant(images.clone()), &maps, w).into_value())
}

/// Stochastic ADA pipeline: each configured op fires per sample with
/// probability `p`. Differentiable with respect to `images`.
pub fn ada_apply<R: Rng + ?Sized>(images: &Tensor, p: f64, cfg: &AdaConfig, rng: &mut R) -> Result<Tensor> {
    if !(0.0..=cfg.p_cap.min(ADA_P_CAP)).contains(&p) {
        return Err(Error::Contract(format!(
            "ADA probability {p} outside [0, {}]",
            cfg.p_cap.min(ADA_P_CAP)
        )));
    }
    let (b, h, w, _) = dims(images.shape())?;
    if p == 0.0 || !cfg.enabled || cfg.ops.is_empty() {
        return Ok(images.clone());
    }
    let mut maps: Vec<PixelMap> = vec![identity_map(h, w); b];
    let mut spatial = false;
    let mut offset = vec![0.0; b];
    let mut contrast = vec![1.0; b];
    let mut colour = false;
    let bright = Normal::new(0.0, cfg.brightness_std).map_err(|e| Error::Config(e.to_string()))?;
    let con = Normal::new(0.0, cfg.contrast_std).map_err(|e| Error::Config(e.to_string()))?;
    let max_shift = (cfg.max_translate * h.min(w) as f64).round() as i64;
    for &op in &cfg.ops {
        for (i, m) in maps.iter_mut().enumerate() {
            if rng.random::<f64>() >= p {
                continue;
            }
            match op {
                AdaOp::Flip => {
                    *m = compose(m, &flip_map(h, w), w);
                    spatial = true;
                }
                AdaOp::Rot90 if h == w => {
                    let turns = rng.random_range(1..4);
                    *m = compose(m, &rot90_map(h, turns), w);
                    spatial = true;
                }
                AdaOp::Rot90 => {}
                AdaOp::Translate if max_shift > 0 => {
                    let dy = rng.random_range(-max_shift..=max_shift) as isize;
                    let dx = rng.random_range(-max_shift..=max_shift) as isize;
                    *m = compose(m, &translate_map(h, w, dy, dx), w);
                    spatial = true;
                }
                AdaOp::Translate => {}
                AdaOp::Color => {
                    offset[i] += bright.sample(rng);
                    contrast[i] *= con.sample(rng).exp();
                    colour = true;
                }
            }
        }
    }
    let mut out = if spatial { gather(images, &maps, w) } else { images.clone() };
    if colour {
        // x' = c·(x − μ) + μ + o with μ the per-sample mean
        let shape = out.shape().to_vec();
        let flat = ops::reshape(&out, &[b, shape[1] * shape[2] * shape[3]]);
        let mu = ops::mean_axis(&flat, 1);
        let c = Tensor::constant(Array::from_shape_vec(IxDyn(&[b, 1]), contrast).expect("contrast"));
        let o = Tensor::constant(Array::from_shape_vec(IxDyn(&[b, 1]), offset).expect("offset"));
        let centred = ops::mul(&ops::sub(&flat, &mu), &c);
        let moved = ops::add(&ops::add(&centred, &mu), &o);
        out = ops::reshape(&moved, &shape);
    }
    Ok(out)
}

/// `p' = clamp(p + step·sgn(mean(sign(real)) − target), 0, cap)`.
pub fn ada_update(p: f64, real_scores: &[f64], cfg: &AdaConfig) -> f64 {
    if real_scores.is_empty() {
        return p;
    }
    let r = real_scores.iter().map(|&s| sign(s)).sum::<f64>() / real_scores.len() as f64;
    let cap = cfg.p_cap.min(ADA_P_CAP);
    let next = (p + cfg.adjust_step * sign(r - cfg.target)).clamp(0.0, cap);
    debug_assert!(next <= ADA_P_CAP);
    next
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
