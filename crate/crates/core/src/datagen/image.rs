use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// Source `(index, weight)` pairs for each output position along one axis.
///
/// Each output samples `taps` evenly spaced points of its footprint (a box
/// filter when shrinking by more than 2×, so thin structures survive), each
/// point interpolated linearly and clamped to the border.
fn axis_weights(start: f32, len: f32, out: usize, size: usize) -> Vec<Vec<(usize, f32)>> {
    let step = len / out as f32;
    let taps = (step.ceil() as usize).clamp(1, 4);
    let norm = 1.0 / taps as f32;
    let last = (size - 1) as f32;
    (0..out)
        .map(|o| {
            let mut v = Vec::with_capacity(2 * taps);
            for t in 0..taps {
                let f = (t as f32 + 0.5) / taps as f32;
                let p = (start + (o as f32 + f) * step - 0.5).clamp(0.0, last);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(size - 1);
                let frac = p - i0 as f32;
                v.push((i0, (1.0 - frac) * norm));
                v.push((i1, frac * norm));
            }
            v
        })
        .collect()
}

/// Planar `C×H×W` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_err(
                "image",
                format!("{} values for {channels}×{height}×{width}", data.len()),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel-centre coordinates, clamped to the border.
    pub fn sample(&self, c: usize, y: f32, x: f32) -> f32 {
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let top = self.at(c, y0, x0) * (1.0 - fx) + self.at(c, y0, x1) * fx;
        let bottom = self.at(c, y1, x0) * (1.0 - fx) + self.at(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resamples the window `(top, left, h, w)` (source pixels) to `out_h × out_w`.
    pub fn crop_resize(&self, top: f32, left: f32, h: f32, w: f32, out_h: usize, out_w: usize) -> Image {
        let ys = axis_weights(top, h, out_h, self.height);
        let xs = axis_weights(left, w, out_w, self.width);
        let lo = ys.iter().flatten().map(|t| t.0).min().unwrap_or(0);
        let hi = ys.iter().flatten().map(|t| t.0).max().unwrap_or(0);
        let mut rows = vec![0.0f32; self.height * out_w];
        let mut out = Image::filled(self.channels, out_h, out_w, 0.0);
        for c in 0..self.channels {
            let plane = &self.data[c * self.height * self.width..(c + 1) * self.height * self.width];
            for (y, row) in rows.chunks_mut(out_w).enumerate().take(hi + 1).skip(lo) {
                let src = &plane[y * self.width..(y + 1) * self.width];
                for (ox, taps) in xs.iter().enumerate() {
                    row[ox] = taps.iter().map(|&(i, wt)| src[i] * wt).sum();
                }
            }
            let dst = &mut out.data[c * out_h * out_w..(c + 1) * out_h * out_w];
            for (oy, taps) in ys.iter().enumerate() {
                for ox in 0..out_w {
                    dst[oy * out_w + ox] = taps.iter().map(|&(i, wt)| rows[i * out_w + ox] * wt).sum();
                }
            }
        }
        out
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> Image {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        self.crop_resize(0.0, 0.0, self.height as f32, self.width as f32, out_h, out_w)
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.at(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Rotation about the centre; uncovered corners repeat the border.
    pub fn rotate(&self, degrees: f32) -> Image {
        if degrees == 0.0 {
            return self.clone();
        }
        let (s, c) = degrees.to_radians().sin_cos();
        let cy = (self.height as f32 - 1.0) / 2.0;
        let cx = (self.width as f32 - 1.0) / 2.0;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                let sy = cy + c * dy - s * dx;
                let sx = cx + s * dy + c * dx;
                for ch in 0..self.channels {
                    out.set(ch, y, x, self.sample(ch, sy, sx));
                }
            }
        }
        out
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len().max(1) as f32
    }

    /// Per-pixel luma for RGB, identity for single-channel images.
    pub fn grayscale(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        if self.channels != 3 {
            return self.data[..plane].to_vec();
        }
        (0..plane)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[plane + i] + 0.114 * self.data[2 * plane + i])
            .collect()
    }

    /// Repeats a single channel to three; RGB passes through.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let plane = &self.data[..self.height * self.width];
        let data = plane.iter().chain(plane).chain(plane).copied().collect();
        Image::new(3, self.height, self.width, data).expect("sizes match")
    }

    /// Stacks images of identical shape into an `N×C×H×W` tensor.
    pub fn batch(images: &[Image]) -> Result<Tensor<f32>> {
        let Some(first) = images.first() else {
            return Err(Error::InvalidArgument("cannot batch zero images".into()));
        };
        let shape = first.shape();
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if im.shape() != shape {
                return Err(shape_err("batch", format!("{:?} vs {:?}", im.shape(), shape)));
            }
            data.extend_from_slice(&im.data);
        }
        Tensor::new(vec![images.len(), shape[0], shape[1], shape[2]], data)
    }
}

/// Decodes a PNG or binary PPM file to an RGB image.
pub fn load_image(path: &Path) -> Result<Image> {
    let err = |msg: String| Error::Image {
        path: path.to_path_buf(),
        msg,
    };
    let decoded = image::open(path).map_err(|e| err(e.to_string()))?.to_rgb8();
    let (w, h) = decoded.dimensions();
    let (w, h) = (w as usize, h as usize);
    if w == 0 || h == 0 {
        return Err(err("empty image".into()));
    }
    let mut out = Image::filled(3, h, w, 0.0);
    for (x, y, px) in decoded.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, px[c] as f32 / 255.0);
        }
    }
    Ok(out)
}

/// Encodes an RGB image; the format follows the extension (`.png`, `.ppm`).
pub fn save_image(path: &Path, im: &Image) -> Result<()> {
    let rgb = im.to_rgb();
    let buf = image::RgbImage::from_fn(rgb.width as u32, rgb.height as u32, |x, y| {
        let px = |c| (rgb.at(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
