//! Seeded generators for synthetic rigs, meshes, avatars, scenes and driving
//! frames. Used by the test suites, the benchmarks and the CLI's `synth`
//! command when no real rig data is at hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asset::CanonicalGaussianAvatar;
use crate::driving::{CameraSpec, DrivingFrame};
use crate::render::{Camera, GaussianCloud};
use crate::rig::{Basis, ExprParams, PoseParams, RigData, RigTemplate};
use crate::subdivision::AttributedMesh;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit icosahedron, optionally refined by midpoint subdivision with the new
/// vertices pushed back onto the sphere.
pub fn icosphere(level: u32) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut mesh = AttributedMesh::new(raw.iter().map(|p| normalize(*p)).collect(), faces);
    for _ in 0..level {
        mesh = crate::subdivision::subdivide_once(&mesh).expect("icosphere is a valid mesh");
        mesh.vertices.iter_mut().for_each(|p| *p = normalize(*p));
    }
    (mesh.vertices, mesh.faces)
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Closed torus made of an `n × m` quad grid split into triangles.
pub fn torus(n: u32, m: u32, major: f64, minor: f64) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let mut verts = Vec::new();
    for i in 0..n {
        let u = i as f64 / n as f64 * std::f64::consts::TAU;
        for j in 0..m {
            let v = j as f64 / m as f64 * std::f64::consts::TAU;
            let r = major + minor * v.cos();
            verts.push([r * u.cos(), minor * v.sin(), r * u.sin()]);
        }
    }
    let id = |i: u32, j: u32| (i % n) * m + (j % m);
    let mut faces = Vec::new();
    for i in 0..n {
        for j in 0..m {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    (verts, faces)
}

/// A random closed mesh: a relabeled, randomly scaled tetrahedron,
/// octahedron, icosphere or torus.
pub fn random_closed_mesh(seed: u64) -> AttributedMesh {
    let mut r = rng(seed);
    let (verts, faces) = match r.gen_range(0..5) {
        0 => (
            vec![[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]],
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
        ),
        1 => (
            vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
            vec![[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]],
        ),
        2 => icosphere(r.gen_range(0..3)),
        _ => torus(r.gen_range(3..12), r.gen_range(3..12), 1.0, r.gen_range(0.2..0.6)),
    };
    let n = verts.len();
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        perm.swap(i, r.gen_range(0..=i));
    }
    let scale = r.gen_range(0.1..3.0);
    let mut new_verts = vec![[0.0; 3]; n];
    for (old, p) in verts.iter().enumerate() {
        new_verts[perm[old] as usize] = p.map(|x| x * scale);
    }
    let faces = faces
        .into_iter()
        .map(|f: [u32; 3]| {
            let f = f.map(|i| perm[i as usize]);
            match r.gen_range(0..3) {
                0 => f,
                1 => [f[1], f[2], f[0]],
                _ => [f[2], f[0], f[1]],
            }
        })
        .collect();
    AttributedMesh::new(new_verts, faces)
}

#[derive(Debug, Clone)]
pub struct MiniRigSpec {
    pub joints: usize,
    pub n_shape: usize,
    pub n_expr: usize,
    /// Icosphere refinement level of the template mesh.
    pub level: u32,
    /// Template radius in meters.
    pub radius: f64,
}

impl Default for MiniRigSpec {
    fn default() -> Self {
        Self { joints: 3, n_shape: 4, n_expr: 3, level: 0, radius: 0.1 }
    }
}

/// A small random rig on an icosphere with valid regressor and weights.
pub fn mini_rig(spec: &MiniRigSpec, seed: u64) -> RigTemplate {
    let mut r = rng(seed);
    let (unit, faces) = icosphere(spec.level);
    let v = unit.len();
    let j = spec.joints.max(1);
    let vertices: Vec<[f64; 3]> = unit
        .iter()
        .map(|p| p.map(|x| x * spec.radius * r.gen_range(0.9..1.1)))
        .collect();
    let mut basis = |width: usize, amp: f64| {
        Basis::from_data(v, width, (0..v * 3 * width).map(|_| r.gen_range(-amp..amp)).collect()).unwrap()
    };
    let shape_basis = basis(spec.n_shape, 0.02 * spec.radius);
    let expr_basis = basis(spec.n_expr, 0.05 * spec.radius);
    let pose_basis = basis(9 * (j - 1), 0.05 * spec.radius);
    let mut joint_regressor = Vec::with_capacity(j);
    for _ in 0..j {
        let mut row = vec![0.0; v];
        for _ in 0..3 {
            row[r.gen_range(0..v)] += r.gen_range(0.1..1.0);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        joint_regressor.push(row);
    }
    let mut skinning_weights = Vec::with_capacity(v * j);
    for _ in 0..v {
        let mut row: Vec<f64> = (0..j).map(|_| if r.gen_bool(0.6) { r.gen_range(0.0..1.0) } else { 0.0 }).collect();
        row[r.gen_range(0..j)] += 0.5;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        skinning_weights.extend(row);
    }
    let parents = (0..j).map(|i| if i == 0 { None } else { Some(r.gen_range(0..i)) }).collect();
    RigTemplate::try_from(RigData {
        vertices,
        faces,
        shape_basis,
        expr_basis,
        pose_basis,
        joint_regressor,
        skinning_weights,
        parents,
    })
    .expect("generated rig is valid")
}

/// A random but valid avatar with `m` points, `n_expr` expression
/// coefficients and `joints` joints (chain-free random tree).
pub fn random_avatar(m: usize, n_expr: usize, joints: usize, seed: u64) -> CanonicalGaussianAvatar {
    let mut r = rng(seed);
    let j = joints.max(1);
    let n_posecorr = 9 * (j - 1);
    let positions = (0..m).map(|_| [r.gen_range(-0.1..0.1), r.gen_range(-0.12..0.12), r.gen_range(-0.1..0.1)]).collect();
    let colors = (0..m).map(|_| [r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)]).collect();
    let opacities = (0..m).map(|_| r.gen_range(0.05..0.99)).collect();
    let scales = (0..m).map(|_| [r.gen_range(5e-4..4e-3), r.gen_range(5e-4..4e-3), r.gen_range(5e-4..4e-3)]).collect();
    let rotations = (0..m).map(|_| random_unit_quat(&mut r)).collect();
    let expr_basis = (0..m * 3 * n_expr).map(|_| r.gen_range(-2e-3..2e-3)).collect();
    let pose_basis = (0..m * 3 * n_posecorr).map(|_| r.gen_range(-2e-3..2e-3)).collect();
    let mut skinning_weights = Vec::with_capacity(m * j);
    for _ in 0..m {
        let mut row: Vec<f64> = (0..j).map(|_| if r.gen_bool(0.5) { r.gen_range(0.0..1.0) } else { 0.0 }).collect();
        row[r.gen_range(0..j)] += 0.5;
        let s: f64 = row.iter().sum();
        skinning_weights.extend(row.iter().map(|x| (x / s) as f32));
    }
    let joint_pos = (0..j).map(|_| [r.gen_range(-0.05..0.05), r.gen_range(-0.1..0.0), r.gen_range(-0.05..0.05)]).collect();
    let parents = (0..j).map(|i| if i == 0 { None } else { Some(r.gen_range(0..i)) }).collect();
    CanonicalGaussianAvatar {
        positions,
        colors,
        opacities,
        scales,
        rotations,
        n_expr,
        expr_basis,
        n_posecorr,
        pose_basis,
        skinning_weights,
        joints: joint_pos,
        parents,
    }
}

pub fn random_unit_quat(r: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|x| (x / n) as f32);
        }
    }
}

/// Random pose and expression of moderate amplitude.
pub fn random_params(r: &mut impl Rng, joints: usize, n_expr: usize, rot_amp: f64) -> (PoseParams, ExprParams) {
    let theta = PoseParams((0..3 * joints).map(|_| r.gen_range(-rot_amp..rot_amp)).collect());
    let phi = ExprParams((0..n_expr).map(|_| r.gen_range(-2.0..2.0)).collect());
    (theta, phi)
}

/// Camera at `distance` on the +z axis looking toward the origin (world +y up).
pub fn front_camera(width: u32, height: u32, focal: f32, distance: f32) -> Camera {
    Camera::new(
        focal,
        focal,
        width as f32 / 2.0,
        height as f32 / 2.0,
        [[1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, distance]],
        width,
        height,
    )
    .expect("valid camera")
}

impl From<&Camera> for CameraSpec {
    fn from(c: &Camera) -> Self {
        let mut w2c = [0.0; 16];
        for (r, row) in c.w2c.iter().enumerate() {
            for k in 0..4 {
                w2c[r * 4 + k] = f64::from(row[k]);
            }
        }
        w2c[15] = 1.0;
        CameraSpec {
            fx: f64::from(c.fx),
            fy: f64::from(c.fy),
            cx: f64::from(c.cx),
            cy: f64::from(c.cy),
            w2c,
        }
    }
}

/// A stream of random driving frames seen from `camera`.
pub fn random_frames(count: usize, joints: usize, n_expr: usize, camera: &Camera, seed: u64) -> Vec<DrivingFrame> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let (theta, phi) = random_params(&mut r, joints, n_expr, 0.3);
            DrivingFrame { theta: theta.0, phi: phi.0, camera: camera.into() }
        })
        .collect()
}

/// Random Gaussians in front of the camera returned by [`scene_camera`].
pub fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut r = rng(seed);
    let mut cloud = GaussianCloud::default();
    for _ in 0..n {
        cloud.positions.push([r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6), r.gen_range(-0.8..0.8)]);
        cloud.rotations.push(random_unit_quat(&mut r));
        cloud.scales.push([r.gen_range(0.01..0.12), r.gen_range(0.01..0.12), r.gen_range(0.01..0.12)]);
        cloud.colors.push([r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)]);
        cloud.opacities.push(r.gen_range(0.05..1.0));
    }
    cloud
}

/// 64×64-style camera three units in front of the origin.
pub fn scene_camera(width: u32, height: u32) -> Camera {
    front_camera(width, height, 1.2 * width as f32, 3.0)
}

/// Camera on the +z side of the avatar's bounding sphere, at three radii,
/// sized so the sphere fills about 90% of the shorter image side.
pub fn framing_camera(avatar: &CanonicalGaussianAvatar, w: u32, h: u32) -> Camera {
    let n = avatar.len().max(1) as f64;
    let mut c = [0.0f64; 3];
    for p in &avatar.positions {
        for k in 0..3 {
            c[k] += f64::from(p[k]) / n;
        }
    }
    let r = avatar
        .positions
        .iter()
        .map(|p| (0..3).map(|k| (f64::from(p[k]) - c[k]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        .max(1e-3);
    let d = 3.0 * r;
    let focal = 0.45 * f64::from(w.min(h)) * (d - r) / r;
    let w2c = [
        [1.0, 0.0, 0.0, -c[0] as f32],
        [0.0, -1.0, 0.0, c[1] as f32],
        [0.0, 0.0, -1.0, (c[2] + d) as f32],
    ];
    Camera::new(focal as f32, focal as f32, w as f32 / 2.0, h as f32 / 2.0, w2c, w, h).expect("finite framing camera")
}
