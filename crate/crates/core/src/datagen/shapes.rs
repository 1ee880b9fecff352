//! Procedurally rendered shape images, a small stand-in for natural-image
//! class-incremental benchmarks.

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

use super::dataset::{Dataset, LabeledSet};
use super::image::Image;

pub const SHAPES: [&str; 6] = ["disk", "square", "triangle", "cross", "ring", "diamond"];

const PALETTE: [[f32; 3]; 6] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.75, 0.20],
    [0.20, 0.30, 0.90],
    [0.90, 0.85, 0.15],
    [0.80, 0.20, 0.80],
    [0.15, 0.80, 0.85],
];

/// `(shape, color, striped)` rendered for a class.
pub fn class_recipe(class: u32) -> (usize, usize, bool) {
    let c = class as usize;
    let n = SHAPES.len();
    (c % n, (c / n) % PALETTE.len(), (c / (n * PALETTE.len())) % 2 == 1)
}

fn inside(shape: usize, u: f32, v: f32) -> bool {
    match shape {
        0 => u * u + v * v <= 1.0,
        1 => u.abs().max(v.abs()) <= 0.8,
        2 => v >= -0.55 && v <= 1.0 - 3f32.sqrt() * u.abs(),
        3 => (u.abs() <= 0.3 && v.abs() <= 0.95) || (v.abs() <= 0.3 && u.abs() <= 0.95),
        4 => {
            let r = u * u + v * v;
            (0.3..=1.0).contains(&r)
        }
        _ => u.abs() + v.abs() <= 1.0,
    }
}

/// Renders one sample of `class` on a `size × size` RGB canvas.
pub fn render_shape(class: u32, size: usize, rng: &mut RngStream) -> Image {
    let (shape, color, striped) = class_recipe(class);
    let s = size as f32;
    let cy = s / 2.0 + rng.uniform_range(-0.15, 0.15) as f32 * s;
    let cx = s / 2.0 + rng.uniform_range(-0.15, 0.15) as f32 * s;
    let radius = rng.uniform_range(0.28, 0.40) as f32 * s;
    let (sin, cos) = (rng.uniform_range(-25.0, 25.0) as f32).to_radians().sin_cos();
    let gain = rng.uniform_range(0.8, 1.1) as f32;
    let fg: Vec<f32> = PALETTE[color]
        .iter()
        .map(|&c| (c * gain + rng.uniform_range(-0.08, 0.08) as f32).clamp(0.0, 1.0))
        .collect();
    let base = rng.uniform_range(0.2, 0.6) as f32;
    let tint: Vec<f32> = (0..3).map(|_| rng.uniform_range(-0.05, 0.05) as f32).collect();
    let (gy, gx) = (rng.uniform_range(-0.1, 0.1) as f32, rng.uniform_range(-0.1, 0.1) as f32);

    let mut im = Image::filled(3, size, size, 0.0);
    const SUB: usize = 2;
    for y in 0..size {
        for x in 0..size {
            let mut cover = 0.0;
            let mut stripe_cover = 0.0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let py = y as f32 + (sy as f32 + 0.5) / SUB as f32 - cy;
                    let px = x as f32 + (sx as f32 + 0.5) / SUB as f32 - cx;
                    let u = (cos * px + sin * py) / radius;
                    let v = (-sin * px + cos * py) / radius;
                    if inside(shape, u, v) {
                        cover += 1.0;
                        if striped && ((y + x) / 2) % 2 == 0 {
                            stripe_cover += 1.0;
                        }
                    }
                }
            }
            let area = (SUB * SUB) as f32;
            let (cover, dark) = (cover / area, stripe_cover / area);
            let ramp = gy * (y as f32 / s - 0.5) + gx * (x as f32 / s - 0.5);
            for c in 0..3 {
                let bg = base + tint[c] + ramp + rng.uniform_range(-0.07, 0.07) as f32;
                let paint = fg[c] * (1.0 - 0.45 * dark / cover.max(1e-6));
                im.set(c, y, x, (cover * paint + (1.0 - cover) * bg).clamp(0.0, 1.0));
            }
        }
    }
    im
}

/// `n_classes × samples_per_class` labeled images; one fifth of each class
/// (at least one sample) is held out for testing.
pub fn shapes_dataset(seed: u64, n_classes: u32, samples_per_class: usize, image_size: usize) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!("shapes dataset needs >= 2 classes, got {n_classes}")));
    }
    if samples_per_class < 2 || image_size < 4 {
        return Err(Error::InvalidArgument(format!(
            "shapes dataset needs >= 2 samples per class and images >= 4 px (got {samples_per_class}, {image_size})"
        )));
    }
    let n_test = (samples_per_class / 5).max(1);
    let root = RngStream::new(seed, "shapes");
    let (mut train, mut test) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    for class in 0..n_classes {
        let class_stream = root.split_index("class", class as u64);
        for k in 0..samples_per_class {
            let mut rng = class_stream.split_index("sample", k as u64);
            let im = render_shape(class, image_size, &mut rng);
            let dst = if k < samples_per_class - n_test { &mut train } else { &mut test };
            dst.0.push(im);
            dst.1.push(class);
        }
    }
    let pack = |(images, labels): (Vec<Image>, Vec<u32>)| -> Result<LabeledSet> {
        LabeledSet::new(Image::batch(&images)?, labels)
    };
    Dataset::new(pack(train)?, pack(test)?)
}

/// One rendered sample per class, for inspection.
pub fn class_gallery(n_classes: u32, image_size: usize, seed: u64) -> Result<Tensor<f32>> {
    let root = RngStream::new(seed, "gallery");
    let images: Vec<Image> = (0..n_classes)
        .map(|c| render_shape(c, image_size, &mut root.split_index("class", c as u64)))
        .collect();
    Image::batch(&images)
}
