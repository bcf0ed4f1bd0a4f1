use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Pixels in [0, 1], interleaved per pixel (row-major, channels last).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height * width * channels != pixels.len() {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image with {} values",
                pixels.len()
            )));
        }
        if !(channels == 1 || channels == 3) {
            return Err(Error::Shape(format!("{channels} channels")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = (y * self.width + x) * self.channels + c;
        self.pixels[i] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Binary PPM (P6, 8-bit); grayscale is replicated to RGB.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in self.pixels.chunks_exact(self.channels) {
            for c in 0..3 {
                let v = if self.channels == 3 { px[c] } else { px[0] };
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }
}

/// Per-channel mean/std used to standardize model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for img in images {
            if sum.is_empty() {
                sum = vec![0.0; img.channels];
                sq = vec![0.0; img.channels];
            } else if sum.len() != img.channels {
                return Err(Error::Shape("mixed channel counts".into()));
            }
            for px in img.pixels.chunks_exact(img.channels) {
                for (c, &v) in px.iter().enumerate() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            count += img.height * img.width;
        }
        if count == 0 {
            return Err(Error::InvalidArgument("no images for channel statistics".into()));
        }
        let n = count as f64;
        let mean: Vec<f32> = sum.iter().map(|s| (s / n) as f32).collect();
        let std = sum
            .iter()
            .zip(&sq)
            .map(|(s, q)| {
                let m = s / n;
                ((q / n - m * m).max(0.0).sqrt() as f32).max(1e-3)
            })
            .collect();
        Ok(Self { mean, std })
    }

    /// Stacks images into a standardized [n, c, h, w] tensor.
    pub fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        if c != self.mean.len() {
            return Err(Error::Shape(format!("{c}-channel image, {}-channel stats", self.mean.len())));
        }
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if !img.same_dims(first) {
                return Err(Error::Shape("images in a batch differ in size".into()));
            }
            for ch in 0..c {
                let (m, s) = (self.mean[ch], self.std[ch]);
                data.extend(img.pixels.iter().skip(ch).step_by(c).map(|v| (v - m) / s));
            }
        }
        Tensor::new(vec![images.len(), c, h, w], data)
    }
}
