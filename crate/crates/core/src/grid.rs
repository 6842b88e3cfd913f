//! Dense per-pixel containers: images, log-depth fields and binary masks.

use crate::error::{Error, Result};

/// Row-major image with 1 or 3 interleaved channels, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Domain(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Domain(format!(
                "image buffer has {} samples, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("image contains non-finite samples".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Per-pixel channel mean.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    /// Rounds every sample to the nearest 8-bit level.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}

/// Per-pixel depth stored as natural-log meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthField {
    width: usize,
    height: usize,
    log_depth: Vec<f64>,
}

impl DepthField {
    pub fn from_log_depth(width: usize, height: usize, log_depth: Vec<f64>) -> Result<Self> {
        if log_depth.len() != width * height {
            return Err(Error::Domain(format!(
                "depth buffer has {} samples, expected {}",
                log_depth.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            log_depth,
        })
    }

    /// Builds a field from metric depths; every depth must be positive.
    pub fn from_depth(width: usize, height: usize, depth: &[f64]) -> Result<Self> {
        if let Some(bad) = depth.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::Domain(format!("depth must be positive and finite, got {bad}")));
        }
        Self::from_log_depth(width, height, depth.iter().map(|d| d.ln()).collect())
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        Self {
            width,
            height,
            log_depth: vec![depth.ln(); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.log_depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_depth.is_empty()
    }

    pub fn log_depth(&self) -> &[f64] {
        &self.log_depth
    }

    pub fn log_depth_mut(&mut self) -> &mut [f64] {
        &mut self.log_depth
    }

    #[inline]
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.log_depth[y * self.width + x].exp()
    }

    pub fn depths(&self) -> Vec<f64> {
        self.log_depth.iter().map(|l| l.exp()).collect()
    }

    /// Multiplies every depth by `factor`.
    pub fn scaled(&self, factor: f64) -> DepthField {
        let shift = factor.ln();
        DepthField {
            width: self.width,
            height: self.height,
            log_depth: self.log_depth.iter().map(|l| l + shift).collect(),
        }
    }

    /// Bilinear resampling of log-depth onto a `width` x `height` grid that
    /// covers the same field of view (pixel centers aligned by area).
    pub fn resample(&self, width: usize, height: usize) -> DepthField {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let (mw, mh) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, mh);
            let y0 = (fy.floor() as usize).min(self.height.saturating_sub(2));
            let ty = if self.height > 1 { fy - y0 as f64 } else { 0.0 };
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, mw);
                let x0 = (fx.floor() as usize).min(self.width.saturating_sub(2));
                let tx = if self.width > 1 { fx - x0 as f64 } else { 0.0 };
                let x1 = (x0 + 1).min(self.width - 1);
                let l = |xx: usize, yy: usize| self.log_depth[yy * self.width + xx];
                let top = l(x0, y0) * (1.0 - tx) + l(x1, y0) * tx;
                let bottom = l(x0, y1) * (1.0 - tx) + l(x1, y1) * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        DepthField {
            width,
            height,
            log_depth: out,
        }
    }

    /// Projects log-depth onto `[ln d_min, ln d_max]`.
    pub fn clamp_depth(&mut self, d_min: f64, d_max: f64) {
        let (lo, hi) = (d_min.ln(), d_max.ln());
        for l in &mut self.log_depth {
            *l = l.clamp(lo, hi);
        }
    }
}

/// One bit per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Domain(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.bits.len() as f64
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a || b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::dims("mask combination", self.dims(), other.dims()));
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| f(*a, *b)).collect(),
        })
    }
}
