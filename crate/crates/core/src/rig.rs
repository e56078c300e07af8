//! Parametric head rig: template mesh, shape/expression/pose-corrective
//! blendshape bases, joint regressor and skinning weights, plus the
//! reference (64-bit) blendshape and skinning math.
//!
//! Poses are axis-angle vectors, three per joint. Pose correctives are driven
//! by the row-major flattening of `R_j - I` for every non-root joint `j`, so a
//! rig with `J` joints has a pose basis of width `9 * (J - 1)`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::container::{Container, ContainerError, ContainerKind, Section};
use crate::math::axis_angle_to_matrix;

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("invalid rig: {0}")]
    Invalid(String),
    #[error("invalid params: {what} has length {found}, expected {expected}")]
    InvalidParams { what: &'static str, expected: usize, found: usize },
    #[error("rig json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Shape coefficients β.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShapeParams(pub Vec<f64>);

/// Axis-angle pose θ, three components per joint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseParams(pub Vec<f64>);

/// Expression coefficients φ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExprParams(pub Vec<f64>);

impl PoseParams {
    pub fn zeros(joints: usize) -> Self {
        Self(vec![0.0; 3 * joints])
    }

    pub fn joint(&self, j: usize) -> [f64; 3] {
        [self.0[3 * j], self.0[3 * j + 1], self.0[3 * j + 2]]
    }
}

impl ShapeParams {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

impl ExprParams {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

/// Per-vertex linear basis stored `[V][3][width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub vertices: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Basis {
    pub fn zeros(vertices: usize, width: usize) -> Self {
        Self { vertices, width, data: vec![0.0; vertices * 3 * width] }
    }

    pub fn from_data(vertices: usize, width: usize, data: Vec<f64>) -> Result<Self, RigError> {
        if data.len() != vertices * 3 * width {
            return Err(RigError::Invalid(format!(
                "basis data has {} values, expected {vertices}×3×{width}",
                data.len()
            )));
        }
        Ok(Self { vertices, width, data })
    }

    /// Offsets `basis · coeffs` per vertex.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<[f64; 3]> {
        debug_assert_eq!(coeffs.len(), self.width);
        if self.width == 0 {
            return vec![[0.0; 3]; self.vertices];
        }
        self.data
            .chunks_exact(3 * self.width)
            .map(|rows| {
                let mut out = [0.0; 3];
                for (c, row) in rows.chunks_exact(self.width).enumerate() {
                    out[c] = row.iter().zip(coeffs).map(|(b, x)| b * x).sum();
                }
                out
            })
            .collect()
    }

    /// The `3 * width` values attached to vertex `v`.
    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * 3 * self.width..(v + 1) * 3 * self.width]
    }
}

/// Unvalidated rig arrays, as read from disk or generated.
#[derive(Debug, Clone)]
pub struct RigData {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub shape_basis: Basis,
    pub expr_basis: Basis,
    pub pose_basis: Basis,
    /// Dense `[J][V]`.
    pub joint_regressor: Vec<Vec<f64>>,
    /// `[V][J]` row-major.
    pub skinning_weights: Vec<f64>,
    pub parents: Vec<Option<usize>>,
}

/// A validated rig. Immutable after construction.
#[derive(Debug, Clone)]
pub struct RigTemplate {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    shape_basis: Basis,
    expr_basis: Basis,
    pose_basis: Basis,
    /// Sparse rows of `(vertex, weight)`.
    regressor: Vec<Vec<(u32, f64)>>,
    skinning_weights: Vec<f64>,
    parents: Vec<Option<usize>>,
}

impl TryFrom<RigData> for RigTemplate {
    type Error = RigError;

    fn try_from(d: RigData) -> Result<Self, RigError> {
        let v = d.vertices.len();
        let j = d.parents.len();
        let bad = |m: String| Err(RigError::Invalid(m));
        if v == 0 {
            return bad("rig has no vertices".into());
        }
        if j == 0 {
            return bad("rig has no joints".into());
        }
        if d.vertices.iter().flatten().any(|x| !x.is_finite()) {
            return bad("template vertices must be finite".into());
        }
        if let Some(f) = d.faces.iter().find(|f| f.iter().any(|&i| i as usize >= v)) {
            return bad(format!("face {f:?} references a vertex >= {v}"));
        }
        for (name, b) in [("shape", &d.shape_basis), ("expression", &d.expr_basis), ("pose", &d.pose_basis)] {
            if b.vertices != v || b.data.len() != v * 3 * b.width {
                return bad(format!("{name} basis is not sized for {v} vertices"));
            }
        }
        if d.pose_basis.width != 9 * (j - 1) {
            return bad(format!(
                "pose basis width {} must be 9 × (joints - 1) = {}",
                d.pose_basis.width,
                9 * (j - 1)
            ));
        }
        if d.parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (i, p) in d.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                Some(p) => return bad(format!("joint {i} has parent {p}; parents must precede children")),
                None => return bad(format!("joint {i} has no parent; only joint 0 may be a root")),
            }
        }
        if d.joint_regressor.len() != j {
            return bad(format!("joint regressor has {} rows for {j} joints", d.joint_regressor.len()));
        }
        let mut regressor = Vec::with_capacity(j);
        for (i, row) in d.joint_regressor.iter().enumerate() {
            if row.len() != v {
                return bad(format!("joint regressor row {i} has {} columns, expected {v}", row.len()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return bad(format!("joint regressor row {i} sums to {sum}"));
            }
            regressor.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(k, w)| (k as u32, *w))
                    .collect(),
            );
        }
        if d.skinning_weights.len() != v * j {
            return bad(format!("skinning weights have {} values, expected {v}×{j}", d.skinning_weights.len()));
        }
        for (i, row) in d.skinning_weights.chunks_exact(j).enumerate() {
            if row.iter().any(|w| !(*w >= 0.0)) {
                return bad(format!("skinning weights of vertex {i} contain a negative or NaN entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return bad(format!("skinning weights of vertex {i} sum to {sum}"));
            }
        }
        Ok(Self {
            vertices: d.vertices,
            faces: d.faces,
            shape_basis: d.shape_basis,
            expr_basis: d.expr_basis,
            pose_basis: d.pose_basis,
            regressor,
            skinning_weights: d.skinning_weights,
            parents: d.parents,
        })
    }
}

impl RigTemplate {
    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }
    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }
    pub fn shape_basis(&self) -> &Basis {
        &self.shape_basis
    }
    pub fn expr_basis(&self) -> &Basis {
        &self.expr_basis
    }
    pub fn pose_basis(&self) -> &Basis {
        &self.pose_basis
    }
    pub fn skinning_weights(&self) -> &[f64] {
        &self.skinning_weights
    }
    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }
    pub fn n_shape(&self) -> usize {
        self.shape_basis.width
    }
    pub fn n_expr(&self) -> usize {
        self.expr_basis.width
    }
    pub fn n_posecorr(&self) -> usize {
        self.pose_basis.width
    }

    /// Dense `[J][V]` copy of the joint regressor.
    pub fn dense_regressor(&self) -> Vec<Vec<f64>> {
        self.regressor
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; self.vertices.len()];
                for &(v, w) in row {
                    dense[v as usize] = w;
                }
                dense
            })
            .collect()
    }

    /// `T̄ + shape_basis · β`.
    pub fn apply_shape(&self, beta: &ShapeParams) -> Result<Vec<[f64; 3]>, RigError> {
        check_len("shape params", self.n_shape(), beta.0.len())?;
        Ok(add_offsets(&self.vertices, &self.shape_basis.apply(&beta.0)))
    }

    /// `expr_basis · φ` offsets.
    pub fn expression_offsets(&self, phi: &ExprParams) -> Result<Vec<[f64; 3]>, RigError> {
        check_len("expression params", self.n_expr(), phi.0.len())?;
        Ok(self.expr_basis.apply(&phi.0))
    }

    /// Joint locations regressed from (shaped) vertices.
    pub fn regress_joints(&self, shaped: &[[f64; 3]]) -> Result<Vec<[f64; 3]>, RigError> {
        check_len("shaped vertices", self.vertices.len(), shaped.len())?;
        Ok(self
            .regressor
            .iter()
            .map(|row| {
                let mut j = [0.0; 3];
                for &(v, w) in row {
                    let p = shaped[v as usize];
                    for c in 0..3 {
                        j[c] += w * p[c];
                    }
                }
                j
            })
            .collect())
    }

    /// Pose-corrective offsets `pose_basis · vec(R(θ) - I)`.
    pub fn pose_correctives(&self, theta: &PoseParams) -> Result<Vec<[f64; 3]>, RigError> {
        check_len("pose params", 3 * self.joint_count(), theta.0.len())?;
        Ok(self.pose_basis.apply(&pose_feature(theta, self.joint_count())))
    }

    /// Full rig evaluation: shape, pose and expression blendshapes followed by
    /// linear blend skinning around the shaped joints.
    pub fn pose(&self, beta: &ShapeParams, theta: &PoseParams, phi: &ExprParams) -> Result<Vec<[f64; 3]>, RigError> {
        let shaped = self.apply_shape(beta)?;
        let joints = self.regress_joints(&shaped)?;
        let corrected = add_offsets(
            &add_offsets(&shaped, &self.pose_correctives(theta)?),
            &self.expression_offsets(phi)?,
        );
        linear_blend_skin(&corrected, &joints, &self.parents, theta, &self.skinning_weights)
    }

    pub fn to_container(&self) -> Container {
        let v = self.vertices.len();
        let j = self.joint_count();
        let mut c = Container::new(ContainerKind::Rig);
        c.push(Section::f64("v_template", &[v, 3], &flatten3(&self.vertices)));
        let faces: Vec<u32> = self.faces.iter().flatten().copied().collect();
        c.push(Section::u32("faces", &[self.faces.len(), 3], &faces));
        c.push(Section::f64("shapedirs", &[v, 3, self.n_shape()], &self.shape_basis.data));
        c.push(Section::f64("exprdirs", &[v, 3, self.n_expr()], &self.expr_basis.data));
        c.push(Section::f64("posedirs", &[v, 3, self.n_posecorr()], &self.pose_basis.data));
        let dense: Vec<f64> = self.dense_regressor().into_iter().flatten().collect();
        c.push(Section::f64("j_regressor", &[j, v], &dense));
        c.push(Section::f64("weights", &[v, j], &self.skinning_weights));
        c.push(Section::i32("parents", &[j], &encode_parents(&self.parents)));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, RigError> {
        let verts = c.require("v_template")?;
        verts.expect_shape(&[None, Some(3)])?;
        let v = verts.shape[0];
        let faces = c.require("faces")?;
        faces.expect_shape(&[None, Some(3)])?;
        let parents = c.require("parents")?;
        parents.expect_shape(&[None])?;
        let j = parents.shape[0];
        let basis = |name: &str| -> Result<Basis, RigError> {
            let s = c.require(name)?;
            s.expect_shape(&[Some(v), Some(3), None])?;
            Basis::from_data(v, s.shape[2], s.to_f64_lossless()?)
        };
        let reg = c.require("j_regressor")?;
        reg.expect_shape(&[Some(j), Some(v)])?;
        let weights = c.require("weights")?;
        weights.expect_shape(&[Some(v), Some(j)])?;
        let data = RigData {
            vertices: unflatten3(&verts.to_f64_lossless()?),
            faces: faces.to_u32()?.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect(),
            shape_basis: basis("shapedirs")?,
            expr_basis: basis("exprdirs")?,
            pose_basis: basis("posedirs")?,
            joint_regressor: reg.to_f64_lossless()?.chunks_exact(v.max(1)).map(<[f64]>::to_vec).collect(),
            skinning_weights: weights.to_f64_lossless()?,
            parents: decode_parents(&parents.to_i32()?)
                .map_err(RigError::Invalid)?,
        };
        RigTemplate::try_from(data)
    }

    /// Imports the JSON interchange dump of rig arrays (see `docs/format.md`).
    pub fn from_json_str(s: &str) -> Result<Self, RigError> {
        let dump: RigJson = serde_json::from_str(s)?;
        dump.into_rig()
    }

    /// Loads a rig from either a binary container or a `.json` dump,
    /// dispatching on the extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RigError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&std::fs::read_to_string(path)?)
        } else {
            Self::from_container(&Container::read_file(path, ContainerKind::Rig)?)
        }
    }
}

#[derive(Deserialize)]
struct RigJson {
    v_template: Vec<[f64; 3]>,
    f: Vec<[u32; 3]>,
    #[serde(default)]
    shapedirs: Vec<[Vec<f64>; 3]>,
    #[serde(default)]
    exprdirs: Vec<[Vec<f64>; 3]>,
    #[serde(default)]
    posedirs: Vec<[Vec<f64>; 3]>,
    #[serde(rename = "J_regressor")]
    j_regressor: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    parents: Vec<i64>,
}

impl RigJson {
    fn into_rig(self) -> Result<RigTemplate, RigError> {
        let v = self.v_template.len();
        let basis = |name: &str, rows: Vec<[Vec<f64>; 3]>| -> Result<Basis, RigError> {
            if rows.is_empty() {
                return Ok(Basis::zeros(v, 0));
            }
            if rows.len() != v {
                return Err(RigError::Invalid(format!("{name} has {} rows, expected {v}", rows.len())));
            }
            let width = rows[0][0].len();
            let mut data = Vec::with_capacity(v * 3 * width);
            for (i, r) in rows.into_iter().enumerate() {
                for c in r {
                    if c.len() != width {
                        return Err(RigError::Invalid(format!("{name} row {i} is ragged")));
                    }
                    data.extend(c);
                }
            }
            Basis::from_data(v, width, data)
        };
        let joints = self.parents.len();
        let parents = self
            .parents
            .iter()
            .map(|&p| i32::try_from(p).unwrap_or(i32::MAX))
            .collect::<Vec<_>>();
        let pose_basis = if self.posedirs.is_empty() {
            Basis::zeros(v, 9 * joints.saturating_sub(1))
        } else {
            basis("posedirs", self.posedirs)?
        };
        let mut skinning = Vec::with_capacity(v * joints);
        for (i, row) in self.weights.iter().enumerate() {
            if row.len() != joints {
                return Err(RigError::Invalid(format!("weights row {i} has {} entries, expected {joints}", row.len())));
            }
            skinning.extend_from_slice(row);
        }
        RigTemplate::try_from(RigData {
            shape_basis: basis("shapedirs", self.shapedirs)?,
            expr_basis: basis("exprdirs", self.exprdirs)?,
            pose_basis,
            vertices: self.v_template,
            faces: self.f,
            joint_regressor: self.j_regressor,
            skinning_weights: skinning,
            parents: decode_parents(&parents).map_err(RigError::Invalid)?,
        })
    }
}

pub(crate) fn encode_parents(parents: &[Option<usize>]) -> Vec<i32> {
    parents.iter().map(|p| p.map_or(-1, |p| p as i32)).collect()
}

pub(crate) fn decode_parents(raw: &[i32]) -> Result<Vec<Option<usize>>, String> {
    raw.iter()
        .map(|&p| match p {
            -1 => Ok(None),
            p if p >= 0 => Ok(Some(p as usize)),
            p => Err(format!("invalid parent index {p}")),
        })
        .collect()
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), RigError> {
    if expected != found {
        return Err(RigError::InvalidParams { what, expected, found });
    }
    Ok(())
}

pub(crate) fn add_offsets(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<[f64; 3]> {
    a.iter().zip(b).map(|(p, o)| [p[0] + o[0], p[1] + o[1], p[2] + o[2]]).collect()
}

pub(crate) fn flatten3(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

pub(crate) fn unflatten3(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Row-major `R_j - I` of every non-root joint, concatenated.
pub fn pose_feature(theta: &PoseParams, joints: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(9 * joints.saturating_sub(1));
    for j in 1..joints {
        let r = axis_angle_to_matrix(theta.joint(j)) - Matrix3::identity();
        for row in 0..3 {
            for col in 0..3 {
                out.push(r[(row, col)]);
            }
        }
    }
    out
}

/// A rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q.x, q.y, q.z]
    }
}

/// Skinning transforms: for each joint, the world transform of the posed
/// chain composed with the inverse of its rest placement, so a joint's own
/// rest location maps to its posed location.
pub fn skinning_transforms(
    joints: &[[f64; 3]],
    parents: &[Option<usize>],
    theta: &PoseParams,
) -> Vec<RigidTransform> {
    let n = joints.len();
    let mut world: Vec<RigidTransform> = Vec::with_capacity(n);
    for j in 0..n {
        let r = axis_angle_to_matrix(theta.joint(j));
        let jp = Vector3::from(joints[j]);
        let t = match parents[j] {
            None => RigidTransform { rotation: r, translation: jp },
            Some(p) => {
                let parent = world[p];
                let rel = jp - Vector3::from(joints[p]);
                RigidTransform {
                    rotation: parent.rotation * r,
                    translation: parent.rotation * rel + parent.translation,
                }
            }
        };
        world.push(t);
    }
    world
        .into_iter()
        .zip(joints)
        .map(|(w, j)| RigidTransform {
            rotation: w.rotation,
            translation: w.translation - w.rotation * Vector3::from(*j),
        })
        .collect()
}

/// Linear blend skinning `v' = Σ_j w[v,j] (R_j v + t_j)`.
pub fn linear_blend_skin(
    vertices: &[[f64; 3]],
    joints: &[[f64; 3]],
    parents: &[Option<usize>],
    theta: &PoseParams,
    weights: &[f64],
) -> Result<Vec<[f64; 3]>, RigError> {
    let j = joints.len();
    check_len("parents", j, parents.len())?;
    check_len("pose params", 3 * j, theta.0.len())?;
    check_len("skinning weights", vertices.len() * j, weights.len())?;
    let transforms = skinning_transforms(joints, parents, theta);
    Ok(vertices
        .iter()
        .zip(weights.chunks_exact(j))
        .map(|(v, w)| {
            let mut rot = Matrix3::zeros();
            let mut trans = Vector3::zeros();
            for (t, &wj) in transforms.iter().zip(w) {
                if wj != 0.0 {
                    rot += t.rotation * wj;
                    trans += t.translation * wj;
                }
            }
            let p = rot * Vector3::from(*v) + trans;
            [p.x, p.y, p.z]
        })
        .collect())
}
