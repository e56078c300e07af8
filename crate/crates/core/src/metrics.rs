//! Image-quality metrics on `[0, 1]` float images.

use thiserror::Error;

use crate::render::RenderTarget;

/// Reported PSNR for identical images (and the upper clamp otherwise).
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize, usize), b: (usize, usize, usize) },
    #[error("buffer of {found} values does not match {width}x{height}x{channels}")]
    BufferSize { width: usize, height: usize, channels: usize, found: usize },
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    TooSmall { width: usize, height: usize, window: usize },
}

/// Borrowed interleaved image, row-major `[H][W][C]`.
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub data: &'a [f32],
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl<'a> ImageRef<'a> {
    pub fn new(data: &'a [f32], width: usize, height: usize, channels: usize) -> Result<Self, MetricError> {
        if data.len() != width * height * channels {
            return Err(MetricError::BufferSize { width, height, channels, found: data.len() });
        }
        Ok(Self { data, width, height, channels })
    }

    pub fn rgb(target: &'a RenderTarget) -> Self {
        Self { data: &target.rgb, width: target.width as usize, height: target.height as usize, channels: 3 }
    }

    pub fn alpha(target: &'a RenderTarget) -> Self {
        Self { data: &target.alpha, width: target.width as usize, height: target.height as usize, channels: 1 }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    #[inline]
    fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        f64::from(self.data[(y * self.width + x) * self.channels + c])
    }
}

pub(crate) fn same_dims(a: &ImageRef<'_>, b: &ImageRef<'_>) -> Result<(), MetricError> {
    if a.dims() != b.dims() {
        return Err(MetricError::DimensionMismatch { a: a.dims(), b: b.dims() });
    }
    Ok(())
}

pub fn mse(a: ImageRef<'_>, b: ImageRef<'_>) -> Result<f64, MetricError> {
    same_dims(&a, &b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(b.data).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum();
    Ok(sum / a.data.len() as f64)
}

/// PSNR for peak value 1, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: ImageRef<'_>, b: ImageRef<'_>) -> Result<f64, MetricError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM over all channels and all fully-inside 11×11 window positions.
pub fn ssim(a: ImageRef<'_>, b: ImageRef<'_>) -> Result<f64, MetricError> {
    same_dims(&a, &b)?;
    let (w, h, ch) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall { width: w, height: h, window: SSIM_WINDOW });
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    // separable filtering of x, y, x², y², xy
    let mut total = 0.0;
    let mut plane = vec![[0.0f64; 5]; w * h];
    let mut horiz = vec![[0.0f64; 5]; ow * h];
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let (p, q) = (a.at(x, y, c), b.at(x, y, c));
                plane[y * w + x] = [p, q, p * p, q * q, p * q];
            }
        }
        for y in 0..h {
            for x in 0..ow {
                let mut acc = [0.0; 5];
                for (k, &t) in taps.iter().enumerate() {
                    let v = plane[y * w + x + k];
                    for m in 0..5 {
                        acc[m] += t * v[m];
                    }
                }
                horiz[y * ow + x] = acc;
            }
        }
        for y in 0..oh {
            for x in 0..ow {
                let mut s = [0.0; 5];
                for (k, &t) in taps.iter().enumerate() {
                    let v = horiz[(y + k) * ow + x];
                    for m in 0..5 {
                        s[m] += t * v[m];
                    }
                }
                total += ssim_from_moments(s, c1, c2);
            }
        }
    }
    Ok(total / (ow * oh * ch) as f64)
}

/// SSIM of one window from `[E x, E y, E x², E y², E xy]`.
#[inline]
pub(crate) fn ssim_from_moments(s: [f64; 5], c1: f64, c2: f64) -> f64 {
    let (mx, my) = (s[0], s[1]);
    let vx = s[2] - mx * mx;
    let vy = s[3] - my * my;
    let cov = s[4] - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}
