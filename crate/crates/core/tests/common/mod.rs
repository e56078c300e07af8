//! Brute-force reference implementations shared by the integration tests.
//! Written with plain arrays and loops, independent of the library's math.
#![allow(dead_code)]

use splatar_core::rig::RigTemplate;

pub type M3 = [[f64; 3]; 3];
pub type M4 = [[f64; 4]; 4];

/// Rodrigues' formula `I + sin t K + (1 - cos t) K²` with `K` the unit-axis
/// cross-product matrix.
pub fn rodrigues(w: [f64; 3]) -> M3 {
    let t = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if t < 1e-300 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let k = [w[0] / t, w[1] / t, w[2] / t];
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let kk = mul3(&kx, &kx);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = if i == j { 1.0 } else { 0.0 } + t.sin() * kx[i][j] + (1.0 - t.cos()) * kk[i][j];
        }
    }
    r
}

pub fn mul3(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn mul4(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn homogeneous(r: &M3, t: [f64; 3]) -> M4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j];
        }
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

/// Dense `[V][3][K] · c`.
pub fn basis_apply(data: &[f64], vertices: usize, width: usize, c: &[f64]) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; vertices];
    for v in 0..vertices {
        for a in 0..3 {
            for k in 0..width {
                out[v][a] += data[(v * 3 + a) * width + k] * c[k];
            }
        }
    }
    out
}

/// Per-joint 4×4 skinning matrices: chain products of `[R_j | J_j - J_p]`
/// times `[I | -J_j]`.
pub fn skinning_matrices(joints: &[[f64; 3]], parents: &[Option<usize>], theta: &[f64]) -> Vec<M4> {
    let n = joints.len();
    let mut world: Vec<M4> = Vec::with_capacity(n);
    for j in 0..n {
        let r = rodrigues([theta[3 * j], theta[3 * j + 1], theta[3 * j + 2]]);
        let local = match parents[j] {
            None => homogeneous(&r, joints[j]),
            Some(p) => homogeneous(&r, [0, 1, 2].map(|a| joints[j][a] - joints[p][a])),
        };
        let g = match parents[j] {
            None => local,
            Some(p) => mul4(&world[p], &local),
        };
        world.push(g);
    }
    let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    world
        .iter()
        .zip(joints)
        .map(|(g, j)| mul4(g, &homogeneous(&id, [-j[0], -j[1], -j[2]])))
        .collect()
}

/// Weighted sum of skinning matrices for every vertex.
pub fn blended(weights: &[f64], mats: &[M4]) -> Vec<M4> {
    let j = mats.len();
    weights
        .chunks_exact(j)
        .map(|w| {
            let mut m = [[0.0; 4]; 4];
            for (k, mk) in mats.iter().enumerate() {
                for a in 0..4 {
                    for b in 0..4 {
                        m[a][b] += w[k] * mk[a][b];
                    }
                }
            }
            m
        })
        .collect()
}

pub fn transform(m: &M4, p: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3])
}

/// Full rig evaluation from dense arrays.
pub fn oracle_pose(rig: &RigTemplate, beta: &[f64], theta: &[f64], phi: &[f64]) -> Vec<[f64; 3]> {
    let v = rig.vertex_count();
    let j = rig.joint_count();
    let shape = basis_apply(&rig.shape_basis().data, v, rig.n_shape(), beta);
    let shaped: Vec<[f64; 3]> = rig.vertices().iter().zip(&shape).map(|(a, b)| [0, 1, 2].map(|k| a[k] + b[k])).collect();
    let reg = rig.dense_regressor();
    let joints: Vec<[f64; 3]> = reg
        .iter()
        .map(|row| {
            let mut p = [0.0; 3];
            for (w, s) in row.iter().zip(&shaped) {
                for k in 0..3 {
                    p[k] += w * s[k];
                }
            }
            p
        })
        .collect();
    let mut feature = Vec::new();
    for k in 1..j {
        let r = rodrigues([theta[3 * k], theta[3 * k + 1], theta[3 * k + 2]]);
        for a in 0..3 {
            for b in 0..3 {
                feature.push(r[a][b] - if a == b { 1.0 } else { 0.0 });
            }
        }
    }
    let pose = basis_apply(&rig.pose_basis().data, v, rig.n_posecorr(), &feature);
    let expr = basis_apply(&rig.expr_basis().data, v, rig.n_expr(), phi);
    let mats = skinning_matrices(&joints, rig.parents(), theta);
    let blend = blended(rig.skinning_weights(), &mats);
    (0..v)
        .map(|i| transform(&blend[i], [0, 1, 2].map(|k| shaped[i][k] + pose[i][k] + expr[i][k])))
        .collect()
}

/// Gram–Schmidt on the columns of the upper-left 3×3 block.
pub fn orthonormal_columns(m: &M4) -> M3 {
    let col = |c: usize| [m[0][c], m[1][c], m[2][c]];
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let a = col(0);
    let na = norm(a);
    let e0 = a.map(|x| x / na);
    let b = col(1);
    let d = dot(b, e0);
    let b = [0, 1, 2].map(|k| b[k] - d * e0[k]);
    let nb = norm(b);
    let e1 = b.map(|x| x / nb);
    let e2 = [e0[1] * e1[2] - e0[2] * e1[1], e0[2] * e1[0] - e0[0] * e1[2], e0[0] * e1[1] - e0[1] * e1[0]];
    [[e0[0], e1[0], e2[0]], [e0[1], e1[1], e2[1]], [e0[2], e1[2], e2[2]]]
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_matrix(q: [f64; 4]) -> M3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn max_matrix_diff(a: &M3, b: &M3) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            d = d.max((a[i][j] - b[i][j]).abs());
        }
    }
    d
}

pub fn max_point_diff(a: &[[f64; 3]], b: &[[f32; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - f64::from(q[k])).abs()))
        .fold(0.0, f64::max)
}

/// Worst deviation of the animator from the dense rig oracle on one random
/// mini-rig baked without subdivision: `(position error, rotation error)`.
/// The rotation error compares each output quaternion against the
/// orthonormalized blended transform applied to the canonical rotation.
pub fn animator_vs_oracle(seed: u64) -> (f64, f64) {
    use rand::Rng;
    use splatar_core::synthetic::{self, MiniRigSpec};
    use splatar_core::{animate_serial, bake, GaussianAttributes, PosedGaussianSet, ShapeParams};

    let mut r = synthetic::rng(seed);
    let spec = MiniRigSpec {
        joints: r.gen_range(1..=5),
        n_shape: r.gen_range(0..=4),
        n_expr: r.gen_range(0..=4),
        level: r.gen_range(0..=1),
        radius: 0.1,
    };
    let rig = synthetic::mini_rig(&spec, seed.wrapping_mul(31).wrapping_add(7));
    let beta: Vec<f64> = (0..spec.n_shape).map(|_| r.gen_range(-2.0..2.0)).collect();
    let m = rig.vertex_count();
    let rotations: Vec<[f64; 4]> =
        (0..m).map(|_| synthetic::random_unit_quat(&mut r).map(f64::from)).collect();
    let attrs = GaussianAttributes { rotations: Some(rotations), ..Default::default() };
    let avatar = bake(&rig, &ShapeParams(beta.clone()), 0, &attrs).unwrap();
    let (theta, phi) = synthetic::random_params(&mut r, rig.joint_count(), rig.n_expr(), 0.6);

    let mut out = PosedGaussianSet::for_avatar(&avatar);
    animate_serial(&avatar, &theta, &phi, &mut out).unwrap();

    let expected = oracle_pose(&rig, &beta, &theta.0, &phi.0);
    let pos_err = max_point_diff(&expected, &out.positions);

    // rotations: joints as the avatar stores them, so both sides share one skeleton
    let joints: Vec<[f64; 3]> = avatar.joints.iter().map(|j| j.map(f64::from)).collect();
    let mats = skinning_matrices(&joints, &avatar.parents, &theta.0);
    let weights: Vec<f64> = avatar.skinning_weights.iter().map(|&w| f64::from(w)).collect();
    let blend = blended(&weights, &mats);
    let mut rot_err: f64 = 0.0;
    for i in 0..m {
        let want = mul3(&orthonormal_columns(&blend[i]), &quat_matrix(avatar.rotations[i].map(f64::from)));
        let got = quat_matrix(out.rotations[i].map(f64::from));
        rot_err = rot_err.max(max_matrix_diff(&want, &got));
    }
    (pos_err, rot_err)
}

/// Central finite-difference check of `Rasterizer::color_backward` on one
/// random toy scene. Returns the norm-wise relative error
/// `|g_fd - g| / max(|g|, 1e-12)`.
pub fn color_gradient_error(seed: u64, gaussians: usize, step: f32) -> f64 {
    use rand::Rng;
    use splatar_core::synthetic;
    use splatar_core::{Rasterizer, RenderTarget};

    let mut r = synthetic::rng(seed ^ 0x5eed);
    let mut cloud = synthetic::random_cloud(gaussians, seed);
    // keep colors away from the clamp so the image is linear in them
    cloud.colors.iter_mut().for_each(|c| *c = c.map(|x| 0.1 + 0.6 * x));
    let cam = synthetic::scene_camera(32, 32);
    let upstream: Vec<f32> = (0..32 * 32 * 3).map(|_| r.gen_range(-1.0..1.0)).collect();
    let loss = |cloud: &splatar_core::render::GaussianCloud| {
        let mut t = RenderTarget::for_camera(&cam, [0.0; 3]);
        splatar_core::render(&cloud.view(), &cam, &mut t).unwrap();
        t.rgb.iter().zip(&upstream).map(|(&a, &g)| f64::from(a) * f64::from(g)).sum::<f64>()
    };

    let mut rast = Rasterizer::new();
    let mut t = RenderTarget::for_camera(&cam, [0.0; 3]);
    rast.render_recorded(&cloud.view(), &cam, &mut t).unwrap();
    let analytic = rast.color_backward(&upstream).unwrap();

    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..gaussians {
        for c in 0..3 {
            let base = cloud.colors[k][c];
            cloud.colors[k][c] = base + step;
            let up = loss(&cloud);
            cloud.colors[k][c] = base - step;
            let down = loss(&cloud);
            cloud.colors[k][c] = base;
            let fd = (up - down) / (2.0 * f64::from(step));
            num += (fd - analytic[k][c]).powi(2);
            den += analytic[k][c].powi(2);
        }
    }
    num.sqrt() / den.sqrt().max(1e-12)
}

/// Central finite-difference check of the offset regularizer's gradient on
/// a random offset field. Returns the norm-wise relative error.
pub fn offset_gradient_error(seed: u64, points: usize) -> f64 {
    use rand::Rng;
    use splatar_core::losses::{offset_reg, offset_reg_grad};

    let mut r = splatar_core::synthetic::rng(seed);
    let eps = 1e-4;
    let mut o: Vec<[f32; 3]> = (0..points).map(|_| [0, 1, 2].map(|_| r.gen_range(-0.05..0.05))).collect();
    let g = offset_reg_grad(&o, eps);
    let h = 1e-4f32;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..points {
        for c in 0..3 {
            let base = o[i][c];
            o[i][c] = base + h;
            let (up, hi) = (offset_reg(&o, eps), f64::from(o[i][c]));
            o[i][c] = base - h;
            let (down, lo) = (offset_reg(&o, eps), f64::from(o[i][c]));
            o[i][c] = base;
            let fd = (up - down) / (hi - lo);
            num += (fd - g[i][c]).powi(2);
            den += g[i][c].powi(2);
        }
    }
    num.sqrt() / den.sqrt().max(1e-300)
}

/// Invariants observed on one random tiny reconstructor forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PassReport {
    pub softmax_rows: usize,
    pub softmax_error: f64,
    pub ranges_ok: bool,
    pub max_quat_norm_error: f64,
    /// Largest attribute difference after undoing a random query shuffle.
    pub permutation_error: f64,
    pub avatar_valid: bool,
}

pub fn reconstructor_pass(seed: u64) -> PassReport {
    use rand::seq::SliceRandom;
    use rand::Rng;
    use splatar_core::reconstructor::{reconstruct, ImageFeatureGrid, Reconstructor, ReconstructorConfig};
    use splatar_core::synthetic::{self, MiniRigSpec};
    use splatar_core::ShapeParams;

    let mut r = synthetic::rng(seed);
    let config = ReconstructorConfig::tiny();
    let model = Reconstructor::random(config.clone(), seed).unwrap();
    let (h, w) = (r.gen_range(1..5), r.gen_range(1..5));
    let data = (0..h * w * config.feature_dim).map(|_| r.gen_range(-2.0..2.0)).collect();
    let grid = ImageFeatureGrid::new(h, w, config.feature_dim, data, (64, 64)).unwrap();

    let n = r.gen_range(1..40);
    let points: Vec<[f64; 3]> = (0..n).map(|_| [0, 1, 2].map(|_| r.gen_range(-0.2..0.2))).collect();
    let pred = model.predict(&points, &grid).unwrap();
    let a = &pred.attributes;

    let mut ranges_ok = a.len() == n;
    let mut quat_err: f64 = 0.0;
    for i in 0..a.len() {
        ranges_ok &= a.opacities[i] > 0.0 && a.opacities[i] < 1.0;
        ranges_ok &= a.scales[i].iter().all(|&s| s > 0.0);
        ranges_ok &= a.colors[i].iter().all(|&c| (0.0..=1.0).contains(&c));
        ranges_ok &= a.offsets[i].iter().all(|&o| o.abs() <= config.offset_max);
        let qn = a.rotations[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        quat_err = quat_err.max((qn - 1.0).abs());
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let shuffled: Vec<[f64; 3]> = order.iter().map(|&i| points[i]).collect();
    let b = model.predict(&shuffled, &grid).unwrap().attributes;
    let mut perm: f64 = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let pairs = a.colors[i]
            .iter()
            .zip(&b.colors[k])
            .chain(a.scales[i].iter().zip(&b.scales[k]))
            .chain(a.offsets[i].iter().zip(&b.offsets[k]))
            .chain(a.rotations[i].iter().zip(&b.rotations[k]))
            .chain(std::iter::once((&a.opacities[i], &b.opacities[k])));
        for (x, y) in pairs {
            perm = perm.max((x - y).abs());
        }
    }

    let spec = MiniRigSpec { joints: r.gen_range(1..4), n_shape: 2, n_expr: 2, level: 0, radius: 0.1 };
    let rig = synthetic::mini_rig(&spec, seed);
    let rec = reconstruct(&rig, &ShapeParams(vec![0.5, -0.5]), r.gen_range(0..2), &grid, &model).unwrap();

    PassReport {
        softmax_rows: pred.stats.rows,
        softmax_error: pred.stats.max_row_sum_error,
        ranges_ok,
        max_quat_norm_error: quat_err,
        permutation_error: perm,
        avatar_valid: rec.avatar.validate().is_valid(),
    }
}
