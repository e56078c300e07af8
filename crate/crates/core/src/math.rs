//! Small rotation helpers shared by the rig, animator and renderer.

use nalgebra::{Matrix3, RealField, Vector3};

/// Rodrigues' formula: axis-angle vector to rotation matrix.
pub fn axis_angle_to_matrix<T: RealField + Copy>(aa: [T; 3]) -> Matrix3<T> {
    let v = Vector3::new(aa[0], aa[1], aa[2]);
    let angle = v.norm();
    if angle <= T::default_epsilon() {
        // second-order expansion keeps tiny rotations orthonormal enough
        let k = skew(&v);
        return Matrix3::identity() + k + k * k * nalgebra::convert::<f64, T>(0.5);
    }
    let axis = v / angle;
    let k = skew(&axis);
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + k * s + k * k * (T::one() - c)
}

fn skew<T: RealField + Copy>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Hamilton product of two `[w, x, y, z]` quaternions.
#[inline]
pub fn quat_mul(a: [f32; 4], b: [f32; 4]) -> [f32; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix (row-major) of a `[w, x, y, z]` quaternion. The input is
/// normalized first.
#[inline]
pub fn quat_to_matrix(q: [f32; 4]) -> [[f32; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Quaternion `[w, x, y, z]` of a proper rotation matrix given row-major
/// (Shepperd's method). The sign is chosen so that `w >= 0`.
#[inline]
pub fn matrix_to_quat(m: &[[f32; 3]; 3]) -> [f32; 4] {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        let inv = 1.0 / s;
        [
            0.25 * s,
            (m[2][1] - m[1][2]) * inv,
            (m[0][2] - m[2][0]) * inv,
            (m[1][0] - m[0][1]) * inv,
        ]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        let inv = 1.0 / s;
        [
            (m[2][1] - m[1][2]) * inv,
            0.25 * s,
            (m[0][1] + m[1][0]) * inv,
            (m[0][2] + m[2][0]) * inv,
        ]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        let inv = 1.0 / s;
        [
            (m[0][2] - m[2][0]) * inv,
            (m[0][1] + m[1][0]) * inv,
            0.25 * s,
            (m[1][2] + m[2][1]) * inv,
        ]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        let inv = 1.0 / s;
        [
            (m[1][0] - m[0][1]) * inv,
            (m[0][2] + m[2][0]) * inv,
            (m[1][2] + m[2][1]) * inv,
            0.25 * s,
        ]
    };
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let k = if q[0] < 0.0 { -1.0 / n } else { 1.0 / n };
    [k * q[0], k * q[1], k * q[2], k * q[3]]
}

/// Gram–Schmidt on the columns of a row-major 3×3 block, returning the
/// nearest-ish proper rotation. Degenerate blocks fall back to identity.
#[inline]
pub fn orthonormalize(m: &[[f32; 3]; 3]) -> [[f32; 3]; 3] {
    let c0 = [m[0][0], m[1][0], m[2][0]];
    let c1 = [m[0][1], m[1][1], m[2][1]];
    let n0 = dot3(c0, c0).sqrt();
    if !(n0 > 1e-12) {
        return IDENTITY3;
    }
    let r0 = 1.0 / n0;
    let e0 = [c0[0] * r0, c0[1] * r0, c0[2] * r0];
    let d = dot3(e0, c1);
    let u1 = [c1[0] - d * e0[0], c1[1] - d * e0[1], c1[2] - d * e0[2]];
    let n1 = dot3(u1, u1).sqrt();
    if !(n1 > 1e-12) {
        return IDENTITY3;
    }
    let r1 = 1.0 / n1;
    let e1 = [u1[0] * r1, u1[1] * r1, u1[2] * r1];
    let e2 = cross3(e0, e1);
    [
        [e0[0], e1[0], e2[0]],
        [e0[1], e1[1], e2[1]],
        [e0[2], e1[2], e2[2]],
    ]
}

pub const IDENTITY3: [[f32; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn dot3(a: [f32; 3], b: [f32; 3]) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: [f32; 3], b: [f32; 3]) -> [f32; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
