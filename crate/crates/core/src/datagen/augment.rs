use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::RngStream;

use super::image::Image;

/// Color jitter strengths; each factor is drawn from `[1 − s, 1 + s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
        }
    }
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    /// `(H, W)` of emitted samples; `None` follows the model input.
    pub output_size: Option<[usize; 2]>,
    /// Fraction of the source area kept by the random crop.
    pub crop_scale: [f64; 2],
    /// Rotation drawn uniformly from `±rotation_degrees`.
    pub rotation_degrees: f64,
    pub flip_probability: f64,
    pub jitter: Jitter,
    pub cutmix: bool,
    pub cutmix_beta: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            output_size: None,
            crop_scale: [0.08, 1.0],
            rotation_degrees: 30.0,
            flip_probability: 0.5,
            jitter: Jitter::default(),
            cutmix: true,
            cutmix_beta: 1.0,
        }
    }
}

impl AugConfig {
    /// Crop of the whole image, no flip, rotation, jitter or mixing.
    pub fn identity() -> Self {
        Self {
            output_size: None,
            crop_scale: [1.0, 1.0],
            rotation_degrees: 0.0,
            flip_probability: 0.0,
            jitter: Jitter::NONE,
            cutmix: false,
            cutmix_beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!("aug.crop_scale must satisfy 0 < lo <= hi <= 1, got {:?}", self.crop_scale)));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!("aug.flip_probability must be in [0, 1], got {}", self.flip_probability)));
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees <= 180.0) {
            return Err(Error::InvalidArgument(format!("aug.rotation_degrees must be in [0, 180], got {}", self.rotation_degrees)));
        }
        let j = self.jitter;
        for (name, v) in [("brightness", j.brightness), ("contrast", j.contrast), ("saturation", j.saturation)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("aug.jitter.{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.cutmix_beta > 0.0 && self.cutmix_beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("aug.cutmix_beta must be positive, got {}", self.cutmix_beta)));
        }
        if let Some([h, w]) = self.output_size {
            if h == 0 || w == 0 {
                return Err(Error::InvalidArgument("aug.output_size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Random-resized-crop window `(top, left, h, w)` in source pixels.
fn crop_window(src_h: usize, src_w: usize, scale: [f64; 2], rng: &mut RngStream) -> (f32, f32, f32, f32) {
    let (h, w) = (src_h as f64, src_w as f64);
    let area = h * w;
    let log_ratio = [(3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln()];
    for _ in 0..10 {
        let target = area * rng.uniform_range(scale[0], scale[1]);
        let ratio = rng.uniform_range(log_ratio[0], log_ratio[1]).exp();
        let cw = (target * ratio).sqrt();
        let ch = (target / ratio).sqrt();
        if cw <= w && ch <= h {
            let top = rng.uniform_range(0.0, h - ch);
            let left = rng.uniform_range(0.0, w - cw);
            return (top as f32, left as f32, ch as f32, cw as f32);
        }
    }
    (0.0, 0.0, h as f32, w as f32)
}

fn jitter(im: &mut Image, j: Jitter, rng: &mut RngStream) {
    let mut factor = |s: f64| if s > 0.0 { rng.uniform_range(1.0 - s, 1.0 + s) as f32 } else { 1.0 };
    let (b, c, s) = (factor(j.brightness), factor(j.contrast), factor(j.saturation));
    if b != 1.0 {
        im.data.iter_mut().for_each(|v| *v *= b);
        im.clamp_unit();
    }
    if c != 1.0 {
        let mean = im.grayscale().iter().sum::<f32>() / (im.height * im.width) as f32;
        im.data.iter_mut().for_each(|v| *v = mean + c * (*v - mean));
        im.clamp_unit();
    }
    if s != 1.0 && im.channels == 3 {
        let gray = im.grayscale();
        let plane = gray.len();
        for ch in 0..3 {
            for (i, g) in gray.iter().enumerate() {
                let v = &mut im.data[ch * plane + i];
                *v = g + s * (*v - g);
            }
        }
        im.clamp_unit();
    }
}

/// Crop → resize → flip → rotation → color jitter. Each stage draws from
/// its own sub-stream of `rng`.
pub fn augment(src: &Image, cfg: &AugConfig, out_h: usize, out_w: usize, rng: &RngStream) -> Image {
    let (top, left, h, w) = crop_window(src.height, src.width, cfg.crop_scale, &mut rng.split("crop"));
    let mut im = if (top, left, h, w) == (0.0, 0.0, src.height as f32, src.width as f32) {
        src.resize(out_h, out_w)
    } else {
        src.crop_resize(top, left, h, w, out_h, out_w)
    };
    if cfg.flip_probability > 0.0 && rng.split("flip").bernoulli(cfg.flip_probability) {
        im = im.flip_horizontal();
    }
    if cfg.rotation_degrees > 0.0 {
        let r = cfg.rotation_degrees;
        im = im.rotate(rng.split("rotate").uniform_range(-r, r) as f32);
    }
    jitter(&mut im, cfg.jitter, &mut rng.split("jitter"));
    im.clamp_unit();
    im
}

/// Side lengths of the pasted box for mix coefficient `m`.
pub fn cutmix_box(m: f64, height: usize, width: usize) -> (usize, usize) {
    let side = (1.0 - m.clamp(0.0, 1.0)).sqrt();
    ((side * height as f64).round() as usize, (side * width as f64).round() as usize)
}

/// Pastes a box of `x2` covering a `1 − m` fraction of the area into `x1`.
pub fn cutmix_with(x1: &Image, x2: &Image, m: f64, rng: &mut RngStream) -> Result<Image> {
    if x1.shape() != x2.shape() {
        return Err(shape_err("cutmix", format!("{:?} vs {:?}", x1.shape(), x2.shape())));
    }
    let (bh, bw) = cutmix_box(m, x1.height, x1.width);
    let top = rng.below(x1.height - bh + 1);
    let left = rng.below(x1.width - bw + 1);
    let mut out = x1.clone();
    for c in 0..x1.channels {
        for y in top..top + bh {
            for x in left..left + bw {
                out.set(c, y, x, x2.at(c, y, x));
            }
        }
    }
    Ok(out)
}

/// CutMix with `m ~ Beta(beta, beta)`.
pub fn cutmix(x1: &Image, x2: &Image, rng: &mut RngStream, beta: f64) -> Result<Image> {
    let dist = Beta::new(beta, beta).map_err(|e| Error::InvalidArgument(format!("cutmix beta {beta}: {e}")))?;
    let m = dist.sample(rng);
    cutmix_with(x1, x2, m, rng)
}
