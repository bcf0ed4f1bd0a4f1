//! Strong augmentation: weak augmentation, two transforms drawn uniformly
//! (with replacement) from the pool with uniformly drawn magnitudes, then a
//! half-side square cutout filled with mid gray.

use rand::Rng;

use super::weak::weak_augment;
use crate::data::Image;

const FILL: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrongOp {
    Identity,
    AutoContrast,
    Brightness,
    Contrast,
    Sharpness,
    Posterize,
    Solarize,
    Equalize,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

pub const STRONG_POOL: [StrongOp; 13] = [
    StrongOp::AutoContrast,
    StrongOp::Brightness,
    StrongOp::Contrast,
    StrongOp::Sharpness,
    StrongOp::Posterize,
    StrongOp::Solarize,
    StrongOp::Equalize,
    StrongOp::Rotate,
    StrongOp::ShearX,
    StrongOp::ShearY,
    StrongOp::TranslateX,
    StrongOp::TranslateY,
    StrongOp::Identity,
];

impl StrongOp {
    /// Magnitude range sampled uniformly for this op.
    pub fn range(self) -> (f32, f32) {
        match self {
            StrongOp::Identity | StrongOp::AutoContrast | StrongOp::Equalize => (0.0, 0.0),
            StrongOp::Brightness | StrongOp::Contrast | StrongOp::Sharpness => (0.05, 0.95),
            StrongOp::Posterize => (4.0, 8.0),
            StrongOp::Solarize => (0.0, 1.0),
            StrongOp::Rotate => (-30.0, 30.0),
            StrongOp::ShearX | StrongOp::ShearY | StrongOp::TranslateX | StrongOp::TranslateY => (-0.3, 0.3),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrongConfig {
    pub num_ops: usize,
    pub cutout: bool,
    /// Replaces the random draw of (op, magnitude) pairs; used by tests.
    pub forced_ops: Option<Vec<(StrongOp, f32)>>,
}

impl Default for StrongConfig {
    fn default() -> Self {
        Self {
            num_ops: 2,
            cutout: true,
            forced_ops: None,
        }
    }
}

fn blend(base: &Image, img: &Image, factor: f32) -> Image {
    let mut out = img.clone();
    for (o, (b, v)) in out.pixels.iter_mut().zip(base.pixels.iter().zip(&img.pixels)) {
        *o = (b + factor * (v - b)).clamp(0.0, 1.0);
    }
    out
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn per_channel(img: &Image, mut f: impl FnMut(&[f32]) -> Vec<f32>) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        let plane: Vec<f32> = img.pixels.iter().skip(c).step_by(img.channels).copied().collect();
        let mapped = f(&plane);
        for (i, v) in mapped.into_iter().enumerate() {
            out.pixels[i * img.channels + c] = v;
        }
    }
    out
}

fn autocontrast(img: &Image) -> Image {
    per_channel(img, |p| {
        let lo = p.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi - lo <= f32::EPSILON {
            p.to_vec()
        } else {
            p.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        }
    })
}

fn equalize(img: &Image) -> Image {
    per_channel(img, |p| {
        let mut hist = [0usize; 256];
        for &v in p {
            hist[quantize(v) as usize] += 1;
        }
        // histogram equalization on 8-bit levels, ignoring the top non-empty bin
        let nonzero: Vec<usize> = hist.iter().copied().filter(|&h| h > 0).collect();
        let step = if nonzero.len() <= 1 {
            0
        } else {
            (nonzero.iter().sum::<usize>() - nonzero[nonzero.len() - 1]) / 255
        };
        if step == 0 {
            return p.to_vec();
        }
        let mut lut = [0u8; 256];
        let mut acc = step / 2;
        for (level, slot) in lut.iter_mut().enumerate() {
            *slot = (acc / step).min(255) as u8;
            acc += hist[level];
        }
        p.iter().map(|&v| lut[quantize(v) as usize] as f32 / 255.0).collect()
    })
}

fn smooth(img: &Image) -> Image {
    // 3x3 kernel [1 1 1; 1 5 1; 1 1 1] / 13, border pixels kept
    let mut out = img.clone();
    let (h, w) = (img.height, img.width);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for c in 0..img.channels {
                let mut s = 4.0 * img.at(y, x, c);
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += img.at(y + dy - 1, x + dx - 1, c);
                    }
                }
                out.set(y, x, c, s / 13.0);
            }
        }
    }
    out
}

/// Inverse-maps every output pixel through `src_of` (pixel-center
/// coordinates relative to the image center) and samples bilinearly, with
/// mid gray outside the source.
fn warp(img: &Image, src_of: impl Fn(f32, f32) -> (f32, f32)) -> Image {
    let (h, w) = (img.height, img.width);
    let (cy, cx) = (h as f32 / 2.0, w as f32 / 2.0);
    let mut out = img.clone();
    let sample = |y: isize, x: isize, c: usize| -> f32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            FILL
        } else {
            img.at(y as usize, x as usize, c)
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src_of(x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let fx = sx + cx - 0.5;
            let fy = sy + cy - 0.5;
            let x0 = fx.floor();
            let y0 = fy.floor();
            let (ax, ay) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..img.channels {
                let v = (1.0 - ay) * ((1.0 - ax) * sample(y0, x0, c) + ax * sample(y0, x0 + 1, c))
                    + ay * ((1.0 - ax) * sample(y0 + 1, x0, c) + ax * sample(y0 + 1, x0 + 1, c));
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn apply_op(img: &Image, op: StrongOp, magnitude: f32) -> Image {
    match op {
        StrongOp::Identity => img.clone(),
        StrongOp::AutoContrast => autocontrast(img),
        StrongOp::Equalize => equalize(img),
        StrongOp::Brightness => blend(&Image::filled(img.height, img.width, img.channels, 0.0), img, magnitude),
        StrongOp::Contrast => {
            let mean = img.pixels.iter().map(|&v| v as f64).sum::<f64>() / img.pixels.len() as f64;
            blend(&Image::filled(img.height, img.width, img.channels, mean as f32), img, magnitude)
        }
        StrongOp::Sharpness => blend(&smooth(img), img, magnitude),
        StrongOp::Posterize => {
            let bits = magnitude.round().clamp(1.0, 8.0) as u32;
            let mask = !((1u16 << (8 - bits)) - 1) as u8;
            let mut out = img.clone();
            for v in &mut out.pixels {
                *v = (quantize(*v) & mask) as f32 / 255.0;
            }
            out
        }
        StrongOp::Solarize => {
            let mut out = img.clone();
            for v in &mut out.pixels {
                if *v >= magnitude {
                    *v = 1.0 - *v;
                }
            }
            out
        }
        StrongOp::Rotate => {
            let (s, c) = magnitude.to_radians().sin_cos();
            warp(img, |x, y| (c * x + s * y, -s * x + c * y))
        }
        StrongOp::ShearX => warp(img, |x, y| (x + magnitude * y, y)),
        StrongOp::ShearY => warp(img, |x, y| (x, y + magnitude * x)),
        StrongOp::TranslateX => {
            let t = magnitude * img.width as f32;
            warp(img, |x, y| (x - t, y))
        }
        StrongOp::TranslateY => {
            let t = magnitude * img.height as f32;
            warp(img, |x, y| (x, y - t))
        }
    }
}

/// Fills a `side`×`side` square at (top, left) with mid gray.
pub fn cutout(img: &mut Image, top: usize, left: usize, side: usize) {
    for y in top..(top + side).min(img.height) {
        for x in left..(left + side).min(img.width) {
            for c in 0..img.channels {
                img.set(y, x, c, FILL);
            }
        }
    }
}

pub fn strong_augment(img: &Image, rng: &mut impl Rng, cfg: &StrongConfig) -> Image {
    let mut out = weak_augment(img, rng);
    let ops: Vec<(StrongOp, f32)> = match &cfg.forced_ops {
        Some(ops) => ops.clone(),
        None => (0..cfg.num_ops)
            .map(|_| {
                let op = STRONG_POOL[rng.random_range(0..STRONG_POOL.len())];
                let (lo, hi) = op.range();
                let m = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                (op, m)
            })
            .collect(),
    };
    for (op, m) in ops {
        out = apply_op(&out, op, m);
    }
    if cfg.cutout {
        let side = (out.height.min(out.width) / 2).max(1);
        let top = rng.random_range(0..=out.height - side);
        let left = rng.random_range(0..=out.width - side);
        cutout(&mut out, top, left, side);
    }
    out
}
