//! Deterministic CPU Gaussian splatting.
//!
//! Gaussians are projected with the usual EWA approximation, binned into
//! 16×16 pixel tiles and alpha-composited front to back in increasing view
//! depth (ties broken by point index). Pixel `(x, y)` is sampled at integer
//! coordinates, so a splat centered on `(cx, cy)` hits that pixel with zero
//! offset. [`render_oracle`] evaluates the same compositing naively over every
//! Gaussian for every pixel and is the reference for the tiled path.

mod camera;
mod image;
mod raster;

pub use camera::{project, Camera, CameraError, Projection, ScreenGaussian};
pub use image::{encode_gray_png, encode_rgb_png, encode_ppm};
pub use raster::{render, render_oracle, Contribution, ForwardRecord, Rasterizer};

use thiserror::Error;

/// Skip contributions below this alpha.
pub const MIN_ALPHA: f32 = 1.0 / 255.0;
/// Per-splat alpha clamp.
pub const MAX_ALPHA: f32 = 0.99;
/// Screen-space low-pass added to every 2D covariance, in pixel².
pub const COV_LOW_PASS: f32 = 0.3;
/// Splats closer than this (camera z) are culled.
pub const NEAR_PLANE: f32 = 1e-4;
pub const TILE_SIZE: usize = 16;
/// The tiled path stops compositing a pixel once its transmittance drops
/// below this; the remaining contributions are bounded by it.
pub const TRANSMITTANCE_STOP: f32 = 1e-6;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("render target is {target:?} but the camera is {camera:?}")]
    TargetSize { target: (u32, u32), camera: (u32, u32) },
    #[error("scene arrays disagree in length: {0}")]
    SceneShape(String),
    #[error("color_backward needs a recorded forward pass; call render_recorded first")]
    NoForwardRecord,
    #[error("gradient buffer has {found} values, expected {expected}")]
    GradientSize { expected: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encoding: {0}")]
    Png(String),
}

/// Borrowed per-point arrays of a Gaussian scene.
#[derive(Debug, Clone, Copy)]
pub struct SplatView<'a> {
    pub positions: &'a [[f32; 3]],
    pub rotations: &'a [[f32; 4]],
    pub scales: &'a [[f32; 3]],
    pub colors: &'a [[f32; 3]],
    pub opacities: &'a [f32],
}

impl SplatView<'_> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn check(&self) -> Result<(), RenderError> {
        let n = self.positions.len();
        let lens = [self.rotations.len(), self.scales.len(), self.colors.len(), self.opacities.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(RenderError::SceneShape(format!("{n} positions vs {lens:?}")));
        }
        Ok(())
    }
}

/// Owned Gaussian scene, mostly for tests and tools.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    pub scales: Vec<[f32; 3]>,
    pub colors: Vec<[f32; 3]>,
    pub opacities: Vec<f32>,
}

impl GaussianCloud {
    pub fn view(&self) -> SplatView<'_> {
        SplatView {
            positions: &self.positions,
            rotations: &self.rotations,
            scales: &self.scales,
            colors: &self.colors,
            opacities: &self.opacities,
        }
    }

    pub fn push(&mut self, position: [f32; 3], rotation: [f32; 4], scale: [f32; 3], color: [f32; 3], opacity: f32) {
        self.positions.push(position);
        self.rotations.push(rotation);
        self.scales.push(scale);
        self.colors.push(color);
        self.opacities.push(opacity);
    }
}

/// RGB image plus accumulated alpha (silhouette).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTarget {
    pub width: u32,
    pub height: u32,
    /// Row-major `[H][W][3]`.
    pub rgb: Vec<f32>,
    /// Row-major `[H][W]`.
    pub alpha: Vec<f32>,
    pub background: [f32; 3],
}

impl RenderTarget {
    pub fn new(width: u32, height: u32, background: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, rgb: vec![0.0; 3 * n], alpha: vec![0.0; n], background }
    }

    pub fn for_camera(camera: &Camera, background: [f32; 3]) -> Self {
        Self::new(camera.width, camera.height, background)
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn alpha_at(&self, x: u32, y: u32) -> f32 {
        self.alpha[y as usize * self.width as usize + x as usize]
    }

    /// Largest absolute difference over all rgb and alpha values.
    pub fn max_abs_diff(&self, other: &RenderTarget) -> f32 {
        self.rgb
            .iter()
            .zip(&other.rgb)
            .chain(self.alpha.iter().zip(&other.alpha))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.rgb.iter().map(|&v| quantize(v)).collect()
    }

    pub fn alpha8(&self) -> Vec<u8> {
        self.alpha.iter().map(|&v| quantize(v)).collect()
    }

    pub fn write_png(&self, path: impl AsRef<std::path::Path>) -> Result<(), RenderError> {
        std::fs::write(path, encode_rgb_png(self.width, self.height, &self.to_rgb8())?)?;
        Ok(())
    }

    pub fn write_alpha_png(&self, path: impl AsRef<std::path::Path>) -> Result<(), RenderError> {
        std::fs::write(path, encode_gray_png(self.width, self.height, &self.alpha8())?)?;
        Ok(())
    }

    pub fn write_ppm(&self, path: impl AsRef<std::path::Path>) -> Result<(), RenderError> {
        std::fs::write(path, encode_ppm(self.width, self.height, &self.to_rgb8()))?;
        Ok(())
    }
}

/// `[0, 1]` float to 8-bit, rounding to nearest.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
