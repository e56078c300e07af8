//! Image feature grids and the built-in patch-embedding extractor.

use rand::Rng;

use super::nn::{impl_params, AttentionStats, Block, LayerNorm, Linear, Mat};
use super::ReconError;
use crate::container::{Container, ContainerKind, Section};
use crate::metrics::ImageRef;

/// Feature map `[H][W][D]`, row-major, plus the size of the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureGrid {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub source_size: (u32, u32),
}

impl ImageFeatureGrid {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>, source_size: (u32, u32)) -> Result<Self, ReconError> {
        if data.len() != height * width * dim || height * width == 0 || dim == 0 {
            return Err(ReconError::Features(format!("{} values for a {height}x{width}x{dim} grid", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFinite("image features"));
        }
        Ok(Self { height, width, dim, data, source_size })
    }

    /// One token per cell.
    pub fn tokens(&self) -> Mat {
        Mat::from_row_slice(self.height * self.width, self.dim, &self.data)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(ContainerKind::Tensors);
        c.push(Section::f64("features", &[self.height, self.width, self.dim], &self.data));
        c.push(Section::u32("source_size", &[2], &[self.source_size.0, self.source_size.1]));
        c
    }

    /// Reads a `features` section (f32 or f64, `[H, W, D]`) and an optional
    /// `source_size` (`[2]` u32, width then height).
    pub fn from_container(c: &Container) -> Result<Self, ReconError> {
        let s = c.require("features")?;
        s.expect_shape(&[None, None, None])?;
        let data = s.to_f64_lossless()?;
        let source_size = match c.get("source_size") {
            Some(ss) => {
                ss.expect_shape(&[Some(2)])?;
                let v = ss.to_u32()?;
                (v[0], v[1])
            }
            None => (0, 0),
        };
        Self::new(s.shape[0], s.shape[1], s.shape[2], data, source_size)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ReconError> {
        Self::from_container(&Container::read_file(path, ContainerKind::Tensors)?)
    }
}

/// Source of image features for the reconstructor.
pub trait FeatureExtractor {
    fn extract(&self, image: ImageRef<'_>) -> Result<ImageFeatureGrid, ReconError>;
}

/// Non-overlapping square patches, linearly embedded with a learned position
/// term and refined by self-attention blocks. Trailing pixels that do not
/// fill a patch are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedExtractor {
    pub patch: usize,
    pub embed: Linear,
    pub pos: Linear,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}
impl_params!(PatchEmbedExtractor { embed, pos, blocks, norm });

impl PatchEmbedExtractor {
    pub fn zeros(patch: usize, dim: usize, heads: usize, ffn: usize, layers: usize) -> Self {
        Self {
            patch,
            embed: Linear::zeros(patch * patch * 3, dim),
            pos: Linear::zeros(2, dim),
            blocks: (0..layers).map(|_| Block::zeros(dim, heads, ffn, false)).collect(),
            norm: LayerNorm::new(dim),
        }
    }

    pub fn random(patch: usize, dim: usize, heads: usize, ffn: usize, layers: usize, r: &mut impl Rng) -> Self {
        Self {
            patch,
            embed: Linear::random(patch * patch * 3, dim, r),
            pos: Linear::random(2, dim, r),
            blocks: (0..layers).map(|_| Block::random(dim, heads, ffn, false, r)).collect(),
            norm: LayerNorm::new(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.embed.output()
    }

    pub fn extract_with_stats(&self, image: ImageRef<'_>, stats: &mut AttentionStats) -> Result<ImageFeatureGrid, ReconError> {
        if image.channels != 3 {
            return Err(ReconError::Features(format!("expected an RGB image, got {} channels", image.channels)));
        }
        let p = self.patch;
        let (gw, gh) = (image.width / p, image.height / p);
        if gw == 0 || gh == 0 {
            return Err(ReconError::Features(format!(
                "image {}x{} is smaller than one {p}x{p} patch",
                image.width, image.height
            )));
        }
        if image.data.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFinite("image"));
        }
        let n = gw * gh;
        let mut patches = Mat::zeros(n, p * p * 3);
        let mut coords = Mat::zeros(n, 2);
        for gy in 0..gh {
            for gx in 0..gw {
                let t = gy * gw + gx;
                let mut k = 0;
                for y in 0..p {
                    for x in 0..p {
                        let base = ((gy * p + y) * image.width + gx * p + x) * 3;
                        for c in 0..3 {
                            patches[(t, k)] = f64::from(image.data[base + c]);
                            k += 1;
                        }
                    }
                }
                coords[(t, 0)] = (gx as f64 + 0.5) / gw as f64;
                coords[(t, 1)] = (gy as f64 + 0.5) / gh as f64;
            }
        }
        let mut x = self.embed.forward(&patches) + self.pos.forward(&coords);
        for b in &self.blocks {
            x = b.forward(&x, None, stats);
        }
        let x = self.norm.forward(&x);
        let data: Vec<f64> = x.transpose().as_slice().to_vec();
        ImageFeatureGrid::new(gh, gw, self.dim(), data, (image.width as u32, image.height as u32))
    }
}

impl FeatureExtractor for PatchEmbedExtractor {
    fn extract(&self, image: ImageRef<'_>) -> Result<ImageFeatureGrid, ReconError> {
        self.extract_with_stats(image, &mut AttentionStats::default())
    }
}
