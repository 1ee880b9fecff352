//! A busy procedural picture used as the default single consolidation image.

use crate::numerics::RngStream;

use super::image::Image;

fn random_color(rng: &mut RngStream) -> [f32; 3] {
    // Saturated hue plus a random lightness shift.
    let h = rng.uniform() as f32 * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let rgb = match i {
        0 => [1.0, f, 0.0],
        1 => [1.0 - f, 1.0, 0.0],
        2 => [0.0, 1.0, f],
        3 => [0.0, 1.0 - f, 1.0],
        4 => [f, 0.0, 1.0],
        _ => [1.0, 0.0, 1.0 - f],
    };
    let light = rng.uniform_range(0.15, 0.95) as f32;
    let sat = rng.uniform_range(0.3, 1.0) as f32;
    rgb.map(|c| (light * (1.0 - sat) + c * sat * light * 1.2).clamp(0.0, 1.0))
}

/// Renders a `size × size` RGB poster of overlapping ellipses, boxes,
/// triangles, rings, stripes and checkerboards on a gradient.
pub fn poster_image(size: usize, seed: u64) -> Image {
    let root = RngStream::new(seed, "poster");
    let mut rng = root.split("layout");
    let s = size as f32;
    let mut im = Image::filled(3, size, size, 0.0);
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle = rng.uniform_range(0.0, std::f64::consts::TAU) as f32;
    let (dy, dx) = angle.sin_cos();
    for y in 0..size {
        for x in 0..size {
            let t = (((y as f32 / s - 0.5) * dy + (x as f32 / s - 0.5) * dx) + 0.75).clamp(0.0, 1.5) / 1.5;
            for c in 0..3 {
                im.set(c, y, x, c0[c] * (1.0 - t) + c1[c] * t);
            }
        }
    }
    let n_shapes = 24 + size / 2;
    for k in 0..n_shapes {
        let mut r = root.split_index("shape", k as u64);
        let kind = r.below(6);
        let color = random_color(&mut r);
        let alt = random_color(&mut r);
        let alpha = r.uniform_range(0.55, 1.0) as f32;
        // Sizes follow a rough power law: many small, a few large.
        let extent = s * (0.03 + 0.35 * r.uniform().powf(2.0) as f32);
        let (cy, cx) = (r.uniform() as f32 * s, r.uniform() as f32 * s);
        let aspect = r.uniform_range(0.4, 1.0) as f32;
        let (sin, cos) = (r.uniform_range(0.0, std::f64::consts::PI) as f32).sin_cos();
        let period = r.uniform_range(2.0, 6.0) as f32;
        let reach = (extent * 1.5) as isize + 1;
        for y in (cy as isize - reach).max(0)..(cy as isize + reach).min(size as isize) {
            for x in (cx as isize - reach).max(0)..(cx as isize + reach).min(size as isize) {
                let (py, px) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                let u = (cos * px + sin * py) / extent;
                let v = (-sin * px + cos * py) / (extent * aspect);
                let paint = match kind {
                    0 => (u * u + v * v <= 1.0).then_some(color),
                    1 => (u.abs() <= 1.0 && v.abs() <= 1.0).then_some(color),
                    2 => (v >= -0.5 && v <= 1.0 - 1.7 * u.abs()).then_some(color),
                    3 => {
                        let rr = u * u + v * v;
                        (0.45..=1.0).contains(&rr).then_some(color)
                    }
                    4 => (u.abs() <= 1.0 && v.abs() <= 1.0)
                        .then(|| if ((u * extent / period).floor() as i32) % 2 == 0 { color } else { alt }),
                    _ => (u.abs() <= 1.0 && v.abs() <= 1.0).then(|| {
                        let a = (u * extent / period).floor() as i32 + (v * extent * aspect / period).floor() as i32;
                        if a.rem_euclid(2) == 0 { color } else { alt }
                    }),
                };
                if let Some(p) = paint {
                    for c in 0..3 {
                        let old = im.at(c, y as usize, x as usize);
                        im.set(c, y as usize, x as usize, old * (1.0 - alpha) + p[c] * alpha);
                    }
                }
            }
        }
    }
    let mut grain = root.split("grain");
    im.data.iter_mut().for_each(|v| *v = (*v + grain.uniform_range(-0.03, 0.03) as f32).clamp(0.0, 1.0));
    im
}
