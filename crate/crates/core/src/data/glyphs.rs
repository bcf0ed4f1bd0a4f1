//! Procedural grayscale glyphs: ten shape classes drawn at jittered position,
//! scale and rotation, plus additive Gaussian pixel noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Image};
use crate::error::{Error, Result};
use crate::rng;

pub const GLYPH_CLASSES: [&str; 10] = [
    "disk", "ring", "cross", "bars_0", "bars_45", "bars_90", "bars_135", "triangle", "checker",
    "dot_grid",
];

/// Draw parameters for a single glyph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphParams {
    /// Center offset in units of half the image side.
    pub offset: (f32, f32),
    /// Glyph radius in units of half the image side.
    pub scale: f32,
    /// Radians.
    pub rotation: f32,
    /// Foreground intensity.
    pub intensity: f32,
    pub noise_sigma: f32,
}

impl GlyphParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            offset: (rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)),
            scale: rng.random_range(0.45..0.95),
            rotation: rng.random_range(-0.35..0.35),
            intensity: rng.random_range(0.3..1.0),
            noise_sigma: 0.1,
        }
    }
}

fn inside(class: usize, u: f32, v: f32) -> bool {
    let r = (u * u + v * v).sqrt();
    match class {
        0 => r < 0.62,
        1 => (0.42..0.68).contains(&r),
        2 => (u.abs() < 0.2 && v.abs() < 0.75) || (v.abs() < 0.2 && u.abs() < 0.75),
        3..=6 => {
            let phi = (class - 3) as f32 * std::f32::consts::FRAC_PI_4;
            let (s, c) = phi.sin_cos();
            let along = u * c + v * s;
            let across = -u * s + v * c;
            // graded lengths keep 45 and 135 apart under a horizontal flip
            [(-0.5f32, 0.3f32), (0.0, 0.55), (0.5, 0.8)]
                .iter()
                .any(|&(o, len)| (across - o).abs() < 0.13 && along.abs() < len)
        }
        7 => {
            // upward triangle with circumradius 0.8
            let (a, b) = (v + 0.4, 0.8 * 3f32.sqrt() / 2.0);
            a > 0.0 && a < 1.2 && u.abs() < b * (1.2 - a) / 1.2
        }
        8 => {
            if u.abs() >= 0.72 || v.abs() >= 0.72 {
                return false;
            }
            let cu = ((u + 0.72) / 0.36).floor() as i32;
            let cv = ((v + 0.72) / 0.36).floor() as i32;
            (cu + cv) % 2 == 0
        }
        9 => {
            let near = |t: f32| [-0.5f32, 0.0, 0.5].iter().map(|o| (t - o).abs()).fold(f32::MAX, f32::min);
            let (du, dv) = (near(u), near(v));
            u.abs() < 0.65 && v.abs() < 0.65 && du * du + dv * dv < 0.15 * 0.15
        }
        _ => false,
    }
}

/// Renders one glyph. Without noise every pixel is either 0 or `intensity`.
pub fn render_glyph(class: usize, size: usize, p: &GlyphParams, rng: &mut impl Rng) -> Image {
    let half = size as f32 / 2.0;
    let (sin, cos) = p.rotation.sin_cos();
    let normal = Normal::new(0.0f32, p.noise_sigma.max(0.0)).expect("finite sigma");
    let mut img = Image::filled(size, size, 1, 0.0);
    for y in 0..size {
        for x in 0..size {
            let px = (x as f32 + 0.5 - half) / half - p.offset.0;
            let py = (y as f32 + 0.5 - half) / half - p.offset.1;
            let u = (px * cos + py * sin) / p.scale;
            let v = (-px * sin + py * cos) / p.scale;
            let mut val = if inside(class, u, v) { p.intensity } else { 0.0 };
            if p.noise_sigma > 0.0 {
                val += normal.sample(rng);
            }
            img.set(y, x, 0, val.clamp(0.0, 1.0));
        }
    }
    img
}

/// `n_per_class` examples of each of the first `n_classes` glyph classes,
/// interleaved class by class. Deterministic in `seed`.
pub fn make_synthetic_glyphs(seed: u64, n_classes: usize, n_per_class: usize, size: usize) -> Result<Dataset> {
    if n_classes == 0 || n_classes > GLYPH_CLASSES.len() {
        return Err(Error::InvalidArgument(format!("n_classes must be in 1..=10, got {n_classes}")));
    }
    if size < 16 {
        return Err(Error::InvalidArgument(format!("glyph size must be at least 16, got {size}")));
    }
    let mut images = Vec::with_capacity(n_classes * n_per_class);
    let mut labels = Vec::with_capacity(n_classes * n_per_class);
    for i in 0..n_per_class {
        for class in 0..n_classes {
            let mut r = rng::stream(seed, "glyph", class as u64, i as u64);
            let params = GlyphParams::sample(&mut r);
            images.push(render_glyph(class, size, &params, &mut r));
            labels.push(class);
        }
    }
    Dataset::new("glyphs", n_classes, images, labels)
}
