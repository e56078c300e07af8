//! Per-frame animation of a baked avatar.
//!
//! For every point: add pose correctives and expression offsets to the
//! canonical position, then blend the joint transforms by the point's
//! skinning weights and apply the result. The 3×3 block of the blended
//! transform is re-orthonormalized (Gram–Schmidt) and composed with the
//! point's canonical rotation; scales are left unchanged.
//!
//! Joint transforms are built once per frame in 64-bit; the per-point loop
//! is 32-bit and writes into caller-owned buffers without allocating.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::asset::CanonicalGaussianAvatar;
use crate::driving::{DrivingFrame, StreamError};
use crate::math::{axis_angle_to_matrix, matrix_to_quat, orthonormalize, quat_mul};
use crate::render::SplatView;
use crate::rig::{ExprParams, PoseParams};

/// Points per parallel work item.
const CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum AnimateError {
    #[error("invalid params: {what} has length {found}, expected {expected}")]
    InvalidParams { what: &'static str, expected: usize, found: usize },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("frame {frame}: {message}")]
    Sink { frame: usize, message: String },
}

/// World-space Gaussians for one frame. Positions and rotations are owned;
/// scales, colors and opacities are read from the source avatar through
/// [`PosedGaussianSet::view`].
#[derive(Debug, Clone)]
pub struct PosedGaussianSet {
    pub positions: Vec<[f32; 3]>,
    pub rotations: Vec<[f32; 4]>,
    scratch: FrameScratch,
}

#[derive(Debug, Clone)]
struct FrameScratch {
    /// Row-major 3×4 skinning transform per joint.
    transforms: Vec<[f32; 12]>,
    world_rot: Vec<Matrix3<f64>>,
    world_trans: Vec<Vector3<f64>>,
    pose_feature: Vec<f32>,
    phi: Vec<f32>,
}

impl PosedGaussianSet {
    /// Buffers sized for `avatar`, initialized to its canonical state.
    pub fn for_avatar(avatar: &CanonicalGaussianAvatar) -> Self {
        let j = avatar.joint_count();
        Self {
            positions: avatar.positions.clone(),
            rotations: avatar.rotations.clone(),
            scratch: FrameScratch {
                transforms: vec![[0.0; 12]; j],
                world_rot: vec![Matrix3::identity(); j],
                world_trans: vec![Vector3::zeros(); j],
                pose_feature: vec![0.0; avatar.n_posecorr],
                phi: vec![0.0; avatar.n_expr],
            },
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn view<'a>(&'a self, avatar: &'a CanonicalGaussianAvatar) -> SplatView<'a> {
        SplatView {
            positions: &self.positions,
            rotations: &self.rotations,
            scales: &avatar.scales,
            colors: &avatar.colors,
            opacities: &avatar.opacities,
        }
    }
}

fn check(what: &'static str, expected: usize, found: usize) -> Result<(), AnimateError> {
    if expected != found {
        return Err(AnimateError::InvalidParams { what, expected, found });
    }
    Ok(())
}

fn prepare_frame(
    avatar: &CanonicalGaussianAvatar,
    theta: &PoseParams,
    phi: &ExprParams,
    out: &mut PosedGaussianSet,
) -> Result<(), AnimateError> {
    let j = avatar.joint_count();
    check("pose params", 3 * j, theta.0.len())?;
    check("expression params", avatar.n_expr, phi.0.len())?;
    check("output positions", avatar.len(), out.positions.len())?;
    check("output rotations", avatar.len(), out.rotations.len())?;
    check("output joint buffers", j, out.scratch.transforms.len())?;
    check("output pose-corrective buffer", avatar.n_posecorr, out.scratch.pose_feature.len())?;
    check("output expression buffer", avatar.n_expr, out.scratch.phi.len())?;

    let s = &mut out.scratch;
    for (dst, &src) in s.phi.iter_mut().zip(&phi.0) {
        *dst = src as f32;
    }
    for k in 0..j {
        let r = axis_angle_to_matrix(theta.joint(k));
        let jp = Vector3::from(avatar.joints[k].map(f64::from));
        let (rot, trans) = match avatar.parents[k] {
            None => (r, jp),
            Some(p) => {
                let rel = jp - Vector3::from(avatar.joints[p].map(f64::from));
                (s.world_rot[p] * r, s.world_rot[p] * rel + s.world_trans[p])
            }
        };
        s.world_rot[k] = rot;
        s.world_trans[k] = trans;
        if k > 0 {
            let base = 9 * (k - 1);
            for row in 0..3 {
                for col in 0..3 {
                    let id = if row == col { 1.0 } else { 0.0 };
                    s.pose_feature[base + 3 * row + col] = (r[(row, col)] - id) as f32;
                }
            }
        }
    }
    for k in 0..j {
        let rot = s.world_rot[k];
        let t = s.world_trans[k] - rot * Vector3::from(avatar.joints[k].map(f64::from));
        let m = &mut s.transforms[k];
        for row in 0..3 {
            m[4 * row] = rot[(row, 0)] as f32;
            m[4 * row + 1] = rot[(row, 1)] as f32;
            m[4 * row + 2] = rot[(row, 2)] as f32;
            m[4 * row + 3] = t[row] as f32;
        }
    }
    Ok(())
}

#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        let x: &[f32; 8] = x.try_into().unwrap();
        let y: &[f32; 8] = y.try_into().unwrap();
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

struct FrameInputs<'a> {
    avatar: &'a CanonicalGaussianAvatar,
    transforms: &'a [[f32; 12]],
    pose_feature: &'a [f32],
    phi: &'a [f32],
}

impl FrameInputs<'_> {
    #[inline(always)]
    fn point(&self, i: usize) -> ([f32; 3], [f32; 4]) {
        let a = self.avatar;
        let (ne, np, nj) = (a.n_expr, a.n_posecorr, self.transforms.len());
        let mut p = a.positions[i];
        for c in 0..3 {
            let row = i * 3 + c;
            let mut d = 0.0;
            if np > 0 {
                d += dot(&a.pose_basis[row * np..(row + 1) * np], self.pose_feature);
            }
            if ne > 0 {
                d += dot(&a.expr_basis[row * ne..(row + 1) * ne], self.phi);
            }
            p[c] += d;
        }
        let w = &a.skinning_weights[i * nj..(i + 1) * nj];
        let mut m = [0.0f32; 12];
        // branch-free: zero weights add exact zeros
        for (t, &wj) in self.transforms.iter().zip(w) {
            for k in 0..12 {
                m[k] += wj * t[k];
            }
        }
        let pos = [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ];
        let r = orthonormalize(&[[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]);
        let rot = quat_mul(matrix_to_quat(&r), a.rotations[i]);
        (pos, rot)
    }

    #[inline(always)]
    fn run_generic(&self, start: usize, positions: &mut [[f32; 3]], rotations: &mut [[f32; 4]]) {
        for (k, (p, q)) in positions.iter_mut().zip(rotations.iter_mut()).enumerate() {
            let (pos, rot) = self.point(start + k);
            *p = pos;
            *q = rot;
        }
    }

    /// Same loop compiled for wider vectors. No fused multiply-adds are
    /// introduced, so results are bit-identical to the portable path.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2(&self, start: usize, positions: &mut [[f32; 3]], rotations: &mut [[f32; 4]]) {
        self.run_generic(start, positions, rotations)
    }

    fn run(&self, start: usize, positions: &mut [[f32; 3]], rotations: &mut [[f32; 4]]) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { self.run_avx2(start, positions, rotations) };
        }
        self.run_generic(start, positions, rotations)
    }
}

/// Animate `avatar` to pose `theta` and expression `phi`, writing into `out`.
///
/// Runs in parallel over points when the current rayon pool has more than
/// one thread; results are identical either way.
pub fn animate(
    avatar: &CanonicalGaussianAvatar,
    theta: &PoseParams,
    phi: &ExprParams,
    out: &mut PosedGaussianSet,
) -> Result<(), AnimateError> {
    if rayon::current_num_threads() <= 1 {
        return animate_serial(avatar, theta, phi, out);
    }
    prepare_frame(avatar, theta, phi, out)?;
    let PosedGaussianSet { positions, rotations, scratch } = out;
    let inputs = FrameInputs {
        avatar,
        transforms: &scratch.transforms,
        pose_feature: &scratch.pose_feature,
        phi: &scratch.phi,
    };
    positions
        .par_chunks_mut(CHUNK)
        .zip(rotations.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(c, (p, q))| inputs.run(c * CHUNK, p, q));
    Ok(())
}

/// Single-threaded [`animate`]; never allocates.
pub fn animate_serial(
    avatar: &CanonicalGaussianAvatar,
    theta: &PoseParams,
    phi: &ExprParams,
    out: &mut PosedGaussianSet,
) -> Result<(), AnimateError> {
    prepare_frame(avatar, theta, phi, out)?;
    let PosedGaussianSet { positions, rotations, scratch } = out;
    let inputs = FrameInputs {
        avatar,
        transforms: &scratch.transforms,
        pose_feature: &scratch.pose_feature,
        phi: &scratch.phi,
    };
    inputs.run(0, positions, rotations);
    Ok(())
}

/// Per-frame timing of [`animate_sequence`]. All zeros for an empty stream.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct SequenceStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub steps_per_sec: f64,
}

impl SequenceStats {
    pub fn from_durations(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        let total: f64 = ms.iter().sum();
        ms.sort_by(f64::total_cmp);
        let rank = ((0.95 * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
        Self {
            frames: ms.len(),
            mean_ms: total / ms.len() as f64,
            p95_ms: ms[rank - 1],
            steps_per_sec: if total > 0.0 { ms.len() as f64 * 1000.0 / total } else { f64::INFINITY },
        }
    }
}

/// Animate every frame of a driving stream, handing each result to `sink`.
/// Only the `animate` call is timed.
pub fn animate_sequence<I, F>(
    avatar: &CanonicalGaussianAvatar,
    frames: I,
    mut sink: F,
) -> Result<SequenceStats, AnimateError>
where
    I: IntoIterator<Item = Result<DrivingFrame, StreamError>>,
    F: FnMut(usize, &DrivingFrame, &PosedGaussianSet) -> Result<(), String>,
{
    let mut out = PosedGaussianSet::for_avatar(avatar);
    let mut durations = Vec::new();
    let mut theta = PoseParams(Vec::with_capacity(3 * avatar.joint_count()));
    let mut phi = ExprParams(Vec::with_capacity(avatar.n_expr));
    for (i, frame) in frames.into_iter().enumerate() {
        let frame = frame?;
        theta.0.clear();
        theta.0.extend_from_slice(&frame.theta);
        phi.0.clear();
        phi.0.extend_from_slice(&frame.phi);
        let start = Instant::now();
        animate(avatar, &theta, &phi, &mut out)?;
        durations.push(start.elapsed().as_secs_f64() * 1000.0);
        sink(i, &frame, &out).map_err(|message| AnimateError::Sink { frame: i, message })?;
    }
    Ok(SequenceStats::from_durations(durations))
}
