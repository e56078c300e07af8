//! The canonical Gaussian avatar: baking from a rig, validation, and the
//! `GAVA` binary file format (see [`crate::container`] for the layout).
//!
//! Baking is the once-per-identity step. Shape blendshapes and the joint
//! regression run at the rig's native resolution in 64-bit; the mesh and all
//! of its animation channels are then subdivided, the per-point offsets are
//! added, and everything is frozen as 32-bit arrays for the per-frame path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError, ContainerKind, Section};
use crate::rig::{decode_parents, encode_parents, RigError, RigTemplate, ShapeParams};
use crate::subdivision::{subdivide, AttributeChannel, AttributedMesh, ChannelKind, MeshError};

pub const DEFAULT_OPACITY: f64 = 0.9;
pub const DEFAULT_GRAY: f64 = 0.5;
/// Default isotropic scale as a fraction of the mean incident edge length.
pub const DEFAULT_SCALE_FACTOR: f64 = 0.5;
const FALLBACK_SCALE: f64 = 5e-3;

pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("invariant violation in \"{section}\": {detail}")]
    Invariant { section: &'static str, detail: String },
    #[error("bake: channel \"{channel}\" has {found} rows, expected {expected}")]
    RowCount { channel: &'static str, expected: usize, found: usize },
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl AssetError {
    /// The section or channel the error is about, when there is one.
    pub fn section(&self) -> Option<&str> {
        match self {
            AssetError::Invariant { section, .. } => Some(section),
            AssetError::RowCount { channel, .. } => Some(channel),
            AssetError::Container(ContainerError::TruncatedSection { section, .. })
            | AssetError::Container(ContainerError::MalformedSection { section, .. }) => Some(section),
            AssetError::Container(ContainerError::MissingSection(section)) => Some(section),
            _ => None,
        }
    }
}

/// Baked, animation-ready Gaussian avatar in canonical space.
///
/// Per-point arrays all have `M` rows. Bases are stored point-major:
/// `expr_basis[(i * 3 + axis) * n_expr + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalGaussianAvatar {
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[f32; 3]>,
    pub opacities: Vec<f32>,
    pub scales: Vec<[f32; 3]>,
    /// Unit quaternions `[w, x, y, z]`.
    pub rotations: Vec<[f32; 4]>,
    pub n_expr: usize,
    pub expr_basis: Vec<f32>,
    pub n_posecorr: usize,
    pub pose_basis: Vec<f32>,
    /// `[M][J]` row-major.
    pub skinning_weights: Vec<f32>,
    pub joints: Vec<[f32; 3]>,
    pub parents: Vec<Option<usize>>,
}

/// Optional per-point Gaussian attributes supplied at bake time. Missing
/// entries get the defaults documented on [`bake`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianAttributes {
    pub colors: Option<Vec<[f64; 3]>>,
    pub opacities: Option<Vec<f64>>,
    pub scales: Option<Vec<[f64; 3]>>,
    pub rotations: Option<Vec<[f64; 4]>>,
    pub offsets: Option<Vec<[f64; 3]>>,
    /// Per-vertex colors at the rig's native resolution; subdivided along
    /// with the mesh and used when `colors` is absent.
    pub vertex_colors: Option<Vec<[f64; 3]>>,
}

/// Subdivided, shaped canonical mesh with its animation channels, before
/// Gaussian attributes are attached.
#[derive(Debug, Clone)]
pub struct PreparedCanonical {
    pub mesh: AttributedMesh,
    pub joints: Vec<[f64; 3]>,
    pub parents: Vec<Option<usize>>,
    pub n_expr: usize,
    pub n_posecorr: usize,
}

const CH_EXPR: &str = "expr_basis";
const CH_POSE: &str = "pose_basis";
const CH_SKIN: &str = "skinning_weights";
const CH_COLOR: &str = "vertex_colors";

/// Shape the rig, regress joints at native resolution and subdivide the mesh
/// with all animation channels attached.
pub fn prepare(
    rig: &RigTemplate,
    beta: &ShapeParams,
    iterations: u32,
    vertex_colors: Option<&[[f64; 3]]>,
) -> Result<PreparedCanonical, AssetError> {
    let shaped = rig.apply_shape(beta)?;
    let joints = rig.regress_joints(&shaped)?;
    let v = rig.vertex_count();
    let mut mesh = AttributedMesh::new(shaped, rig.faces().to_vec())
        .with_channel(AttributeChannel::new(CH_EXPR, 3 * rig.n_expr(), ChannelKind::Plain, rig.expr_basis().data.clone()))
        .with_channel(AttributeChannel::new(CH_POSE, 3 * rig.n_posecorr(), ChannelKind::Plain, rig.pose_basis().data.clone()))
        .with_channel(AttributeChannel::new(
            CH_SKIN,
            rig.joint_count(),
            ChannelKind::Partition,
            rig.skinning_weights().to_vec(),
        ));
    if let Some(colors) = vertex_colors {
        if colors.len() != v {
            return Err(AssetError::RowCount { channel: "vertex_colors", expected: v, found: colors.len() });
        }
        mesh = mesh.with_channel(AttributeChannel::new(
            CH_COLOR,
            3,
            ChannelKind::Plain,
            colors.iter().flatten().copied().collect(),
        ));
    }
    let mesh = subdivide(&mesh, iterations)?;
    Ok(PreparedCanonical {
        mesh,
        joints,
        parents: rig.parents().to_vec(),
        n_expr: rig.n_expr(),
        n_posecorr: rig.n_posecorr(),
    })
}

impl PreparedCanonical {
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.mesh.vertices
    }

    pub fn point_count(&self) -> usize {
        self.mesh.vertices.len()
    }

    /// Attach Gaussian attributes (filling defaults) and freeze to 32-bit.
    pub fn finish(&self, attrs: &GaussianAttributes) -> Result<CanonicalGaussianAvatar, AssetError> {
        let m = self.point_count();
        let check = |channel: &'static str, found: Option<usize>| match found {
            Some(found) if found != m => Err(AssetError::RowCount { channel, expected: m, found }),
            _ => Ok(()),
        };
        check("colors", attrs.colors.as_ref().map(Vec::len))?;
        check("opacities", attrs.opacities.as_ref().map(Vec::len))?;
        check("scales", attrs.scales.as_ref().map(Vec::len))?;
        check("rotations", attrs.rotations.as_ref().map(Vec::len))?;
        check("offsets", attrs.offsets.as_ref().map(Vec::len))?;

        let positions: Vec<[f32; 3]> = match &attrs.offsets {
            Some(o) => self.mesh.vertices.iter().zip(o).map(|(p, o)| to_f32_3([p[0] + o[0], p[1] + o[1], p[2] + o[2]])).collect(),
            None => self.mesh.vertices.iter().map(|p| to_f32_3(*p)).collect(),
        };
        let colors = match (&attrs.colors, self.mesh.channel(CH_COLOR)) {
            (Some(c), _) => c.iter().map(|c| to_f32_3(*c)).collect(),
            (None, Some(ch)) => ch.data.chunks_exact(3).map(|c| to_f32_3([c[0], c[1], c[2]])).collect(),
            (None, None) => vec![[DEFAULT_GRAY as f32; 3]; m],
        };
        let opacities = match &attrs.opacities {
            Some(o) => o.iter().map(|&x| x as f32).collect(),
            None => vec![DEFAULT_OPACITY as f32; m],
        };
        let scales = match &attrs.scales {
            Some(s) => s.iter().map(|s| to_f32_3(*s)).collect(),
            None => default_scales(&self.mesh).into_iter().map(|s| [s as f32; 3]).collect(),
        };
        let rotations = match &attrs.rotations {
            Some(r) => r
                .iter()
                .map(|q| {
                    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
                    [(q[0] / n) as f32, (q[1] / n) as f32, (q[2] / n) as f32, (q[3] / n) as f32]
                })
                .collect(),
            None => vec![[1.0, 0.0, 0.0, 0.0]; m],
        };
        let f32s = |name: &str| -> Vec<f32> {
            self.mesh.channel(name).map(|c| c.data.iter().map(|&x| x as f32).collect()).unwrap_or_default()
        };
        let avatar = CanonicalGaussianAvatar {
            positions,
            colors,
            opacities,
            scales,
            rotations,
            n_expr: self.n_expr,
            expr_basis: f32s(CH_EXPR),
            n_posecorr: self.n_posecorr,
            pose_basis: f32s(CH_POSE),
            skinning_weights: f32s(CH_SKIN),
            joints: self.joints.iter().map(|j| to_f32_3(*j)).collect(),
            parents: self.parents.clone(),
        };
        avatar.ensure_valid()?;
        Ok(avatar)
    }
}

/// Bake a canonical avatar.
///
/// Defaults for absent attributes: color from `vertex_colors` or mid-gray,
/// opacity 0.9, isotropic scale of half the mean incident edge length,
/// identity rotation, zero offset.
pub fn bake(
    rig: &RigTemplate,
    beta: &ShapeParams,
    iterations: u32,
    attrs: &GaussianAttributes,
) -> Result<CanonicalGaussianAvatar, AssetError> {
    prepare(rig, beta, iterations, attrs.vertex_colors.as_deref())?.finish(attrs)
}

fn to_f32_3(p: [f64; 3]) -> [f32; 3] {
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

/// Half the mean length of the edges incident to each vertex.
pub fn default_scales(mesh: &AttributedMesh) -> Vec<f64> {
    let n = mesh.vertices.len();
    let mut total = vec![0.0; n];
    let mut count = vec![0u32; n];
    let edges = mesh.edges();
    let mut all = 0.0;
    for &(a, b) in &edges {
        let (pa, pb) = (mesh.vertices[a as usize], mesh.vertices[b as usize]);
        let len = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt();
        all += len;
        for v in [a as usize, b as usize] {
            total[v] += len;
            count[v] += 1;
        }
    }
    let global = if edges.is_empty() { FALLBACK_SCALE / DEFAULT_SCALE_FACTOR } else { all / edges.len() as f64 };
    total
        .into_iter()
        .zip(count)
        .map(|(t, c)| {
            let mean = if c == 0 { global } else { t / c as f64 };
            let s = DEFAULT_SCALE_FACTOR * mean;
            if s > 0.0 {
                s
            } else {
                FALLBACK_SCALE
            }
        })
        .collect()
}

/// One broken invariant, aggregated over all offending elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub section: &'static str,
    pub count: usize,
    pub first_index: Option<usize>,
    pub detail: String,
}

/// Findings of [`CanonicalGaussianAvatar::validate`], in a fixed section
/// order. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn check<T>(&mut self, section: &'static str, what: &str, items: impl IntoIterator<Item = T>, bad: impl Fn(&T) -> bool) {
        let mut count = 0;
        let mut first = None;
        for (i, x) in items.into_iter().enumerate() {
            if bad(&x) {
                count += 1;
                first.get_or_insert(i);
            }
        }
        if count > 0 {
            self.violations.push(Violation {
                section,
                count,
                first_index: first,
                detail: format!("{count} element(s) {what}; first at index {}", first.unwrap()),
            });
        }
    }

    fn fail(&mut self, section: &'static str, detail: String) {
        self.violations.push(Violation { section, count: 1, first_index: None, detail });
    }
}

impl CanonicalGaussianAvatar {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Check every invariant; violations are data, never errors.
    pub fn validate(&self) -> ValidationReport {
        let m = self.len();
        let j = self.joint_count();
        let mut r = ValidationReport::default();

        let sizes: [(&'static str, usize, usize); 6] = [
            ("colors", self.colors.len(), m),
            ("opacities", self.opacities.len(), m),
            ("scales", self.scales.len(), m),
            ("rotations", self.rotations.len(), m),
            ("expr_basis", self.expr_basis.len(), m * 3 * self.n_expr),
            ("pose_basis", self.pose_basis.len(), m * 3 * self.n_posecorr),
        ];
        let mut sized = true;
        for (section, found, expected) in sizes {
            if found != expected {
                r.fail(section, format!("has {found} values, expected {expected} for {m} points"));
                sized = false;
            }
        }
        if self.skinning_weights.len() != m * j {
            r.fail("skinning_weights", format!("has {} values, expected {m}×{j}", self.skinning_weights.len()));
            sized = false;
        }
        if self.parents.len() != j {
            r.fail("parents", format!("has {} entries for {j} joints", self.parents.len()));
            sized = false;
        }
        if j > 0 && self.n_posecorr != 9 * (j - 1) {
            r.fail("pose_basis", format!("width {} must be 9 × (joints - 1) = {}", self.n_posecorr, 9 * (j - 1)));
        }
        if j == 0 {
            r.fail("joints", "avatar has no joints".into());
        }
        if !sized {
            return r;
        }

        r.check("positions", "are not finite", &self.positions, |p| p.iter().any(|x| !x.is_finite()));
        r.check("colors", "are outside [0, 1]", &self.colors, |c| c.iter().any(|x| !(0.0..=1.0).contains(x)));
        r.check("opacities", "are outside (0, 1)", &self.opacities, |o| !(**o > 0.0 && **o < 1.0));
        r.check("scales", "are not strictly positive", &self.scales, |s| s.iter().any(|x| !(*x > 0.0 && x.is_finite())));
        r.check("rotations", "are not unit quaternions", &self.rotations, |q| {
            let n = q.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            !((n - 1.0).abs() <= QUAT_NORM_TOLERANCE)
        });
        r.check("expr_basis", "are not finite", &self.expr_basis, |x| !x.is_finite());
        r.check("pose_basis", "are not finite", &self.pose_basis, |x| !x.is_finite());
        if j > 0 {
            r.check("skinning_weights", "rows are negative or do not sum to 1", self.skinning_weights.chunks_exact(j), |row| {
                let sum: f64 = row.iter().map(|&w| f64::from(w)).sum();
                row.iter().any(|w| !(*w >= 0.0)) || !((sum - 1.0).abs() <= WEIGHT_SUM_TOLERANCE)
            });
        }
        r.check("joints", "are not finite", &self.joints, |p| p.iter().any(|x| !x.is_finite()));
        r.check("parents", "do not form a tree rooted at joint 0", self.parents.iter().enumerate(), |(i, p)| match p {
            None => *i != 0,
            Some(p) => *i == 0 || *p >= *i,
        });
        r
    }

    fn ensure_valid(&self) -> Result<(), AssetError> {
        match self.validate().violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(AssetError::Invariant { section: v.section, detail: v.detail }),
        }
    }

    pub fn to_container(&self) -> Container {
        let m = self.len();
        let j = self.joint_count();
        let flat3 = |v: &[[f32; 3]]| v.iter().flatten().copied().collect::<Vec<f32>>();
        let mut c = Container::new(ContainerKind::Avatar);
        c.push(Section::f32("positions", &[m, 3], &flat3(&self.positions)));
        c.push(Section::f32("colors", &[m, 3], &flat3(&self.colors)));
        c.push(Section::f32("opacities", &[m], &self.opacities));
        c.push(Section::f32("scales", &[m, 3], &flat3(&self.scales)));
        let rot: Vec<f32> = self.rotations.iter().flatten().copied().collect();
        c.push(Section::f32("rotations", &[m, 4], &rot));
        c.push(Section::f32("expr_basis", &[m, 3, self.n_expr], &self.expr_basis));
        c.push(Section::f32("pose_basis", &[m, 3, self.n_posecorr], &self.pose_basis));
        c.push(Section::f32("skinning_weights", &[m, j], &self.skinning_weights));
        c.push(Section::f32("joints", &[j, 3], &flat3(&self.joints)));
        c.push(Section::i32("parents", &[j], &encode_parents(&self.parents)));
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    /// Decode and validate. Any broken invariant is reported as an error
    /// naming the section.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AssetError> {
        let avatar = Self::decode(bytes)?;
        avatar.ensure_valid()?;
        Ok(avatar)
    }

    /// Decode with structural checks only (sections present, dtypes and
    /// shapes consistent); run [`CanonicalGaussianAvatar::validate`] after.
    pub fn decode(bytes: &[u8]) -> Result<Self, AssetError> {
        let c = Container::parse(bytes, ContainerKind::Avatar)?;
        let positions = c.require("positions")?;
        positions.expect_shape(&[None, Some(3)])?;
        let m = positions.shape[0];
        let joints = c.require("joints")?;
        joints.expect_shape(&[None, Some(3)])?;
        let j = joints.shape[0];
        let get = |name: &str, shape: &[Option<usize>]| -> Result<Vec<f32>, AssetError> {
            let s = c.require(name)?;
            s.expect_shape(shape)?;
            Ok(s.to_f32()?)
        };
        let expr = c.require("expr_basis")?;
        expr.expect_shape(&[Some(m), Some(3), None])?;
        let pose = c.require("pose_basis")?;
        pose.expect_shape(&[Some(m), Some(3), None])?;
        let parents = c.require("parents")?;
        parents.expect_shape(&[Some(j)])?;
        let parents = decode_parents(&parents.to_i32()?)
            .map_err(|detail| AssetError::Invariant { section: "parents", detail })?;
        Ok(Self {
            positions: chunk3(&positions.to_f32()?),
            colors: chunk3(&get("colors", &[Some(m), Some(3)])?),
            opacities: get("opacities", &[Some(m)])?,
            scales: chunk3(&get("scales", &[Some(m), Some(3)])?),
            rotations: get("rotations", &[Some(m), Some(4)])?
                .chunks_exact(4)
                .map(|q| [q[0], q[1], q[2], q[3]])
                .collect(),
            n_expr: expr.shape[2],
            expr_basis: expr.to_f32()?,
            n_posecorr: pose.shape[2],
            pose_basis: pose.to_f32()?,
            skinning_weights: get("skinning_weights", &[Some(m), Some(j)])?,
            joints: chunk3(&joints.to_f32()?),
            parents,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AssetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AssetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn chunk3(v: &[f32]) -> Vec<[f32; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}
