//! Point-query transformer that predicts per-point Gaussian attributes.
//!
//! Each canonical point is encoded with sin/cos frequency bands and a small
//! MLP, refined by a stack of pre-norm blocks (self-attention over points,
//! cross-attention to image feature tokens, feed-forward) and decoded by
//! one linear head per attribute with range-enforcing activations.
//! Everything runs in f64 on `nalgebra` matrices with one token per row.

mod features;
pub mod nn;

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{FeatureExtractor, ImageFeatureGrid, PatchEmbedExtractor};
use nn::{impl_params, AttentionStats, Block, LayerNorm, Linear, Mat, Params};

use crate::asset::{prepare, AssetError, CanonicalGaussianAvatar, GaussianAttributes};
use crate::container::{Container, ContainerError, ContainerKind, Section};
use crate::metrics::ImageRef;
use crate::rig::{RigTemplate, ShapeParams};

/// Opacities are kept this far inside `(0, 1)`.
pub const OPACITY_MARGIN: f64 = 1e-6;
/// Below this norm the rotation head output decodes to the identity.
pub const MIN_QUAT_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("feature grid: {0}")]
    Features(String),
    #[error("feature width {found} does not match the model's {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Asset(#[from] AssetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructorConfig {
    /// Point token width.
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_width: usize,
    pub pe_frequencies: usize,
    /// Width of incoming image features; projected to `width` when different.
    pub feature_dim: usize,
    pub patch_size: usize,
    pub extractor_layers: usize,
    /// Per-component offset bound, meters.
    pub offset_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl ReconstructorConfig {
    /// Small test configuration.
    pub fn tiny() -> Self {
        Self {
            width: 16,
            heads: 2,
            layers: 2,
            ffn_width: 32,
            pe_frequencies: 4,
            feature_dim: 16,
            patch_size: 16,
            extractor_layers: 2,
            offset_max: 0.05,
            scale_min: 1e-5,
            scale_max: 0.05,
        }
    }

    /// Full-size layout (16 heads, width 1024, 10 blocks).
    pub fn full() -> Self {
        Self {
            width: 1024,
            heads: 16,
            layers: 10,
            ffn_width: 4096,
            pe_frequencies: 10,
            feature_dim: 1024,
            patch_size: 16,
            extractor_layers: 2,
            ..Self::tiny()
        }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        let bad = |m: String| Err(ReconError::Config(m));
        if self.width == 0 || self.heads == 0 || self.ffn_width == 0 || self.pe_frequencies == 0 || self.patch_size == 0 {
            return bad("widths, heads, frequencies and patch size must be positive".into());
        }
        if !self.width.is_multiple_of(self.heads) || !self.feature_dim.is_multiple_of(self.heads) {
            return bad(format!("width {} / feature_dim {} not divisible by {} heads", self.width, self.feature_dim, self.heads));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(self.offset_max > 0.0 && self.offset_max.is_finite()) {
            return bad(format!("offset_max {}", self.offset_max));
        }
        if !(self.scale_min > 0.0 && self.scale_min < self.scale_max && self.scale_max.is_finite()) {
            return bad(format!("scale range [{}, {}]", self.scale_min, self.scale_max));
        }
        Ok(())
    }
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

/// `[sin(2^i π p), cos(2^i π p)]` per frequency `i`, each a 3-vector, so row
/// layout is `[sin x, sin y, sin z, cos x, cos y, cos z]` per band.
pub fn positional_encode(points: &[[f64; 3]], frequencies: usize) -> Mat {
    let mut out = Mat::zeros(points.len(), 6 * frequencies);
    for (r, p) in points.iter().enumerate() {
        for i in 0..frequencies {
            let f = (1u64 << i) as f64 * PI;
            for a in 0..3 {
                let (s, c) = (f * p[a]).sin_cos();
                out[(r, 6 * i + a)] = s;
                out[(r, 6 * i + 3 + a)] = c;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    pub l1: Linear,
    pub l2: Linear,
}
impl_params!(PointEncoder { l1, l2 });

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeHeads {
    pub color: Linear,
    pub opacity: Linear,
    pub scale: Linear,
    pub rotation: Linear,
    pub offset: Linear,
}
impl_params!(DecodeHeads { color, opacity, scale, rotation, offset });

/// Decoded per-point attributes, in query order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodedAttributes {
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub scales: Vec<[f64; 3]>,
    /// Unit quaternions `[w, x, y, z]`.
    pub rotations: Vec<[f64; 4]>,
    pub offsets: Vec<[f64; 3]>,
}

impl DecodedAttributes {
    pub fn len(&self) -> usize {
        self.opacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacities.is_empty()
    }

    pub fn into_attributes(self) -> GaussianAttributes {
        GaussianAttributes {
            colors: Some(self.colors),
            opacities: Some(self.opacities),
            scales: Some(self.scales),
            rotations: Some(self.rotations),
            offsets: Some(self.offsets),
            vertex_colors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstructor {
    pub config: ReconstructorConfig,
    pub extractor: PatchEmbedExtractor,
    pub feature_proj: Option<Linear>,
    pub point_encoder: PointEncoder,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub heads: DecodeHeads,
}
impl_params!(Reconstructor { extractor, feature_proj, point_encoder, blocks, norm, heads });

impl Reconstructor {
    /// All-zero weights (identity layer norms, identity rotation bias).
    pub fn zeros(config: ReconstructorConfig) -> Result<Self, ReconError> {
        config.validate()?;
        let c = &config;
        let d = c.width;
        let mut heads = DecodeHeads {
            color: Linear::zeros(d, 3),
            opacity: Linear::zeros(d, 1),
            scale: Linear::zeros(d, 3),
            rotation: Linear::zeros(d, 4),
            offset: Linear::zeros(d, 3),
        };
        heads.rotation.b[0] = 1.0;
        Ok(Self {
            extractor: PatchEmbedExtractor::zeros(c.patch_size, c.feature_dim, c.heads, c.ffn_width, c.extractor_layers),
            feature_proj: (c.feature_dim != d).then(|| Linear::zeros(c.feature_dim, d)),
            point_encoder: PointEncoder { l1: Linear::zeros(6 * c.pe_frequencies, d), l2: Linear::zeros(d, d) },
            blocks: (0..c.layers).map(|_| Block::zeros(d, c.heads, c.ffn_width, true)).collect(),
            norm: LayerNorm::new(d),
            heads,
            config,
        })
    }

    /// Glorot-initialized weights from a seeded generator.
    pub fn random(config: ReconstructorConfig, seed: u64) -> Result<Self, ReconError> {
        config.validate()?;
        let mut r = crate::synthetic::rng(seed);
        let r = &mut r;
        let c = &config;
        let d = c.width;
        let mut heads = DecodeHeads {
            color: Linear::random(d, 3, r),
            opacity: Linear::random(d, 1, r),
            scale: Linear::random(d, 3, r),
            rotation: Linear::random(d, 4, r),
            offset: Linear::random(d, 3, r),
        };
        heads.rotation.b[0] = 1.0;
        Ok(Self {
            extractor: PatchEmbedExtractor::random(c.patch_size, c.feature_dim, c.heads, c.ffn_width, c.extractor_layers, r),
            feature_proj: (c.feature_dim != d).then(|| Linear::random(c.feature_dim, d, r)),
            point_encoder: PointEncoder { l1: Linear::random(6 * c.pe_frequencies, d, r), l2: Linear::random(d, d, r) },
            blocks: (0..c.layers).map(|_| Block::random(d, c.heads, c.ffn_width, true, r)).collect(),
            norm: LayerNorm::new(d),
            heads,
            config,
        })
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.len());
        n
    }

    /// Query features `F_P` for the given points.
    pub fn encode_points(&self, points: &[[f64; 3]]) -> Result<Mat, ReconError> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFinite("query points"));
        }
        let pe = positional_encode(points, self.config.pe_frequencies);
        let e = &self.point_encoder;
        Ok(e.l2.forward(&e.l1.forward(&pe).map(nn::gelu)))
    }

    /// Image tokens in the point width.
    pub fn context(&self, features: &ImageFeatureGrid) -> Result<Mat, ReconError> {
        if features.dim != self.config.feature_dim {
            return Err(ReconError::FeatureDim { expected: self.config.feature_dim, found: features.dim });
        }
        let t = features.tokens();
        Ok(match &self.feature_proj {
            Some(p) => p.forward(&t),
            None => t,
        })
    }

    /// Runs the block stack on query features against image tokens.
    pub fn refine(&self, queries: Mat, context: &Mat, stats: &mut AttentionStats) -> Mat {
        self.blocks.iter().fold(queries, |x, b| b.forward(&x, Some(context), stats))
    }

    /// Final norm and attribute heads.
    pub fn decode(&self, refined: &Mat) -> DecodedAttributes {
        let h = self.norm.forward(refined);
        let c = &self.config;
        let color = self.heads.color.forward(&h);
        let opacity = self.heads.opacity.forward(&h);
        let scale = self.heads.scale.forward(&h);
        let rotation = self.heads.rotation.forward(&h);
        let offset = self.heads.offset.forward(&h);
        let (ln_min, ln_max) = (c.scale_min.ln(), c.scale_max.ln());
        let n = h.nrows();
        let mut out = DecodedAttributes::default();
        for i in 0..n {
            out.colors.push(std::array::from_fn(|k| nn::sigmoid(color[(i, k)])));
            out.opacities.push(nn::sigmoid(opacity[(i, 0)]).clamp(OPACITY_MARGIN, 1.0 - OPACITY_MARGIN));
            out.scales.push(std::array::from_fn(|k| (ln_min + (ln_max - ln_min) * nn::sigmoid(scale[(i, k)])).exp()));
            out.rotations.push(normalize_quat(std::array::from_fn(|k| rotation[(i, k)])));
            out.offsets.push(std::array::from_fn(|k| offset[(i, k)].tanh() * c.offset_max));
        }
        out
    }

    /// Full point-query forward pass.
    pub fn predict(&self, points: &[[f64; 3]], features: &ImageFeatureGrid) -> Result<Prediction, ReconError> {
        let q = self.encode_points(points)?;
        let ctx = self.context(features)?;
        let mut stats = AttentionStats::default();
        let refined = self.refine(q, &ctx, &mut stats);
        if refined.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFinite("refined point features"));
        }
        Ok(Prediction { attributes: self.decode(&refined), stats })
    }

    /// Features from an RGB image with the built-in extractor.
    pub fn extract(&self, image: ImageRef<'_>) -> Result<ImageFeatureGrid, ReconError> {
        self.extractor.extract(image)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(ContainerKind::Tensors);
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        c.push(Section::u8("config", &cfg));
        self.visit("", &mut |name, m| {
            // row-major [rows, cols]
            let data: Vec<f64> = m.transpose().as_slice().to_vec();
            c.push(Section::f64(name, &[m.nrows(), m.ncols()], &data));
        });
        c
    }

    /// Loads weights written by [`Reconstructor::to_container`]. Every
    /// expected tensor must be present with its exact shape (f32 or f64)
    /// and no other sections are allowed.
    pub fn from_container(c: &Container) -> Result<Self, ReconError> {
        let cfg = c.require("config")?.to_u8()?;
        let config: ReconstructorConfig =
            serde_json::from_slice(cfg).map_err(|e| ReconError::Weights(format!("config: {e}")))?;
        let mut model = Self::zeros(config)?;
        let mut seen = vec!["config".to_owned()];
        let mut err = None;
        model.visit_mut("", &mut |name, m| {
            if err.is_some() {
                return;
            }
            let mut load = || -> Result<(), ReconError> {
                let s = c.require(name)?;
                s.expect_shape(&[Some(m.nrows()), Some(m.ncols())])?;
                let v = s.to_f64_lossless()?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(ReconError::Weights(format!("tensor {name} has non-finite values")));
                }
                *m = Mat::from_row_slice(m.nrows(), m.ncols(), &v);
                Ok(())
            };
            match load() {
                Ok(()) => seen.push(name.to_owned()),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(extra) = c.sections.iter().find(|s| !seen.contains(&s.name)) {
            return Err(ReconError::Weights(format!("unexpected tensor {}", extra.name)));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReconError> {
        Ok(self.to_container().write_file(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReconError> {
        Self::from_container(&Container::read_file(path, ContainerKind::Tensors)?)
    }
}

fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > MIN_QUAT_NORM) || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|v| v / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub attributes: DecodedAttributes,
    pub stats: AttentionStats,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub avatar: CanonicalGaussianAvatar,
    pub attributes: DecodedAttributes,
    pub stats: AttentionStats,
}

/// Shape and subdivide the rig, predict attributes for every subdivided
/// vertex and bake them (offsets added to positions) into an avatar.
pub fn reconstruct(
    rig: &RigTemplate,
    beta: &ShapeParams,
    iterations: u32,
    features: &ImageFeatureGrid,
    model: &Reconstructor,
) -> Result<Reconstruction, ReconError> {
    let prepared = prepare(rig, beta, iterations, None)?;
    let Prediction { attributes, stats } = model.predict(prepared.positions(), features)?;
    let avatar = prepared.finish(&attributes.clone().into_attributes())?;
    Ok(Reconstruction { avatar, attributes, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use rand::Rng;

    fn grid(seed: u64, dim: usize) -> ImageFeatureGrid {
        let mut r = synthetic::rng(seed);
        let data = (0..4 * 3 * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        ImageFeatureGrid::new(4, 3, dim, data, (48, 64)).unwrap()
    }

    #[test]
    fn origin_encodes_to_zero_sines_and_unit_cosines() {
        let pe = positional_encode(&[[0.0; 3]], 5);
        for i in 0..5 {
            for a in 0..3 {
                assert_eq!(pe[(0, 6 * i + a)], 0.0);
                assert_eq!(pe[(0, 6 * i + 3 + a)], 1.0);
            }
        }
    }

    #[test]
    fn doubling_shifts_bands() {
        let p = [0.123, -0.456, 0.789];
        let a = positional_encode(&[p], 6);
        let b = positional_encode(&[p.map(|v| 2.0 * v)], 6);
        for i in 0..5 {
            for k in 0..6 {
                assert!((b[(0, 6 * i + k)] - a[(0, 6 * (i + 1) + k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_heads_decode_to_neutral_attributes() {
        let mut m = Reconstructor::random(ReconstructorConfig::tiny(), 3).unwrap();
        let z = Reconstructor::zeros(ReconstructorConfig::tiny()).unwrap();
        m.heads = z.heads.clone();
        let d = m.decode(&Mat::zeros(5, 16));
        for i in 0..5 {
            assert_eq!(d.opacities[i], 0.5);
            assert_eq!(d.colors[i], [0.5; 3]);
            assert_eq!(d.rotations[i], [1.0, 0.0, 0.0, 0.0]);
            assert_eq!(d.offsets[i], [0.0; 3]);
        }
    }

    #[test]
    fn weights_round_trip() {
        let mut cfg = ReconstructorConfig::tiny();
        cfg.feature_dim = 8;
        let m = Reconstructor::random(cfg, 9).unwrap();
        assert!(m.feature_proj.is_some());
        let bytes = m.to_container().to_bytes();
        let back = Reconstructor::from_container(&Container::parse(&bytes, ContainerKind::Tensors).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_and_extra_tensors_are_rejected() {
        let m = Reconstructor::random(ReconstructorConfig::tiny(), 1).unwrap();
        let mut c = m.to_container();
        c.sections.retain(|s| s.name != "heads.opacity.w");
        assert!(Reconstructor::from_container(&c).is_err());
        let mut c = m.to_container();
        c.push(Section::f64("stray", &[1], &[0.0]));
        assert!(matches!(Reconstructor::from_container(&c), Err(ReconError::Weights(_))));
    }

    #[test]
    fn feature_width_mismatch() {
        let m = Reconstructor::random(ReconstructorConfig::tiny(), 1).unwrap();
        assert!(matches!(m.predict(&[[0.0; 3]], &grid(1, 8)), Err(ReconError::FeatureDim { .. })));
    }

    #[test]
    fn non_finite_points_are_rejected() {
        let m = Reconstructor::random(ReconstructorConfig::tiny(), 1).unwrap();
        assert!(matches!(m.predict(&[[f64::NAN, 0.0, 0.0]], &grid(1, 16)), Err(ReconError::NonFinite(_))));
    }

    #[test]
    fn extractor_produces_patch_grid() {
        let m = Reconstructor::random(ReconstructorConfig::tiny(), 2).unwrap();
        let img = vec![0.5f32; 40 * 33 * 3];
        let g = m.extract(ImageRef::new(&img, 40, 33, 3).unwrap()).unwrap();
        assert_eq!((g.height, g.width, g.dim), (2, 2, 16));
        assert!(m.extract(ImageRef::new(&img[..8 * 8 * 3], 8, 8, 3).unwrap()).is_err());
    }

    #[test]
    fn reconstruct_tiny_rig_is_valid_and_deterministic() {
        let rig = synthetic::mini_rig(&synthetic::MiniRigSpec::default(), 4);
        let m = Reconstructor::random(ReconstructorConfig::tiny(), 5).unwrap();
        let beta = ShapeParams::zeros(rig.n_shape());
        let a = reconstruct(&rig, &beta, 0, &grid(2, 16), &m).unwrap();
        let b = reconstruct(&rig, &beta, 0, &grid(2, 16), &m).unwrap();
        assert_eq!(a.avatar.len(), 12);
        assert!(a.avatar.validate().is_valid());
        assert_eq!(a.avatar.to_bytes(), b.avatar.to_bytes());
        assert!(a.stats.max_row_sum_error <= 1e-6);
    }
}
