//! Mixing operators. The first operand is the base image, the second is
//! blended (mixup) or resized and pasted (ResizeMix); the mixed label is
//! `(1 − λ_eff)·first + λ_eff·second` for ResizeMix and
//! `λ·first + (1 − λ)·second` for mixup.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::Image;
use crate::error::{Error, Result};

pub const LAMBDA_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixStrategy {
    ResizeMix,
    Mixup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixOutcome {
    pub image: Image,
    pub label: Vec<f64>,
    /// Weight of the second operand's label.
    pub lambda_eff: f64,
    pub rect: Option<PatchRect>,
}

/// One Beta(α, α) draw, clamped away from 0 and 1.
pub fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("Beta parameter must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(beta.sample(rng).clamp(LAMBDA_CLAMP, 1.0 - LAMBDA_CLAMP))
}

fn check_pair(a: &Image, ya: &[f64], b: &Image, yb: &[f64]) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "cannot mix {}x{}x{} with {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if ya.len() != yb.len() {
        return Err(Error::Shape(format!("label lengths {} and {}", ya.len(), yb.len())));
    }
    Ok(())
}

/// Bilinear resize with pixel-center alignment.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Image {
    let mut out = Image::filled(height, width, img.channels, 0.0);
    let sy = img.height as f32 / height as f32;
    let sx = img.width as f32 / width as f32;
    for y in 0..height {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let ay = fy - y0 as f32;
        for x in 0..width {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let ax = fx - x0 as f32;
            for c in 0..img.channels {
                let v = (1.0 - ay) * ((1.0 - ax) * img.at(y0, x0, c) + ax * img.at(y0, x1, c))
                    + ay * ((1.0 - ax) * img.at(y1, x0, c) + ax * img.at(y1, x1, c));
                out.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// ResizeMix with a given λ: the source is resized to
/// `max(1, round(√λ·H)) × max(1, round(√λ·W))` and pasted at a uniformly
/// drawn position; the label weight is the realized area fraction.
pub fn resizemix_with_lambda(
    target: (&Image, &[f64]),
    source: (&Image, &[f64]),
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<MixOutcome> {
    let (t_img, t_lab) = target;
    let (s_img, s_lab) = source;
    check_pair(t_img, t_lab, s_img, s_lab)?;
    let (h, w) = (t_img.height, t_img.width);
    let side = lambda.clamp(0.0, 1.0).sqrt();
    let ph = ((side * h as f64).round() as usize).clamp(1, h);
    let pw = ((side * w as f64).round() as usize).clamp(1, w);
    let top = rng.random_range(0..=h - ph);
    let left = rng.random_range(0..=w - pw);
    let patch = resize_bilinear(s_img, ph, pw);
    let mut image = t_img.clone();
    for y in 0..ph {
        for x in 0..pw {
            for c in 0..t_img.channels {
                image.set(top + y, left + x, c, patch.at(y, x, c));
            }
        }
    }
    let lambda_eff = (ph * pw) as f64 / (h * w) as f64;
    let label = t_lab
        .iter()
        .zip(s_lab)
        .map(|(a, b)| (1.0 - lambda_eff) * a + lambda_eff * b)
        .collect();
    Ok(MixOutcome {
        image,
        label,
        lambda_eff,
        rect: Some(PatchRect {
            top,
            left,
            height: ph,
            width: pw,
        }),
    })
}

pub fn resizemix(
    target: (&Image, &[f64]),
    source: (&Image, &[f64]),
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<MixOutcome> {
    let lambda = sample_lambda(alpha, rng)?;
    resizemix_with_lambda(target, source, lambda, rng)
}

/// Pixelwise `λ·a + (1 − λ)·b`; `lambda_eff` reports λ.
pub fn mixup_with_lambda(a: (&Image, &[f64]), b: (&Image, &[f64]), lambda: f64) -> Result<MixOutcome> {
    check_pair(a.0, a.1, b.0, b.1)?;
    let la = lambda as f32;
    let lb = (1.0 - lambda) as f32;
    let mut image = a.0.clone();
    for (o, (x, y)) in image.pixels.iter_mut().zip(a.0.pixels.iter().zip(&b.0.pixels)) {
        *o = (la * x + lb * y).clamp(0.0, 1.0);
    }
    let label = a.1.iter().zip(b.1).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect();
    Ok(MixOutcome {
        image,
        label,
        lambda_eff: lambda,
        rect: None,
    })
}

pub fn mixup(a: (&Image, &[f64]), b: (&Image, &[f64]), alpha: f64, rng: &mut impl Rng) -> Result<MixOutcome> {
    let lambda = sample_lambda(alpha, rng)?;
    mixup_with_lambda(a, b, lambda)
}

/// Mixes `first ⊕ second` with the chosen strategy. The returned weight of
/// `second`'s label is `lambda_eff` for ResizeMix and `1 − lambda_eff` for
/// mixup.
pub fn mix_pair(
    strategy: MixStrategy,
    first: (&Image, &[f64]),
    second: (&Image, &[f64]),
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<MixOutcome> {
    match strategy {
        MixStrategy::ResizeMix => resizemix(first, second, alpha, rng),
        MixStrategy::Mixup => mixup(first, second, alpha, rng),
    }
}
