use thiserror::Error;

use super::{COV_LOW_PASS, NEAR_PLANE};
use crate::math::quat_to_matrix;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive and finite, got fx={fx} fy={fy}")]
    Focal { fx: f32, fy: f32 },
    #[error("image size must be positive, got {width}×{height}")]
    Size { width: u32, height: u32 },
    #[error("camera parameters must be finite")]
    NonFinite,
}

/// Pinhole camera. `w2c` holds the top three rows of the world-to-camera
/// rigid transform; camera space looks down +z with +y pointing down the
/// image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub w2c: [[f32; 4]; 3],
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(fx: f32, fy: f32, cx: f32, cy: f32, w2c: [[f32; 4]; 3], width: u32, height: u32) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(CameraError::Focal { fx, fy });
        }
        if width == 0 || height == 0 {
            return Err(CameraError::Size { width, height });
        }
        if !(cx.is_finite() && cy.is_finite() && w2c.iter().flatten().all(|x| x.is_finite())) {
            return Err(CameraError::NonFinite);
        }
        Ok(Self { fx, fy, cx, cy, w2c, width, height })
    }

    #[inline]
    pub fn to_camera_space(&self, p: [f32; 3]) -> [f32; 3] {
        let m = &self.w2c;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenGaussian {
    /// Pixel coordinates of the projected center.
    pub mean: [f32; 2],
    /// Symmetric 2D covariance `[xx, xy, yy]` in pixel², low-pass included.
    pub cov: [f32; 3],
    /// Camera-space z.
    pub depth: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible(ScreenGaussian),
    /// At or behind the near plane.
    Culled,
}

/// EWA projection: `Σ2D = J W Σ3D Wᵀ Jᵀ + 0.3·I` with `Σ3D = R diag(s²) Rᵀ`,
/// `W` the camera rotation and `J` the perspective Jacobian at the center.
pub fn project(position: [f32; 3], rotation: [f32; 4], scale: [f32; 3], camera: &Camera) -> Projection {
    let t = camera.to_camera_space(position);
    let z = t[2];
    if !(z > NEAR_PLANE) {
        return Projection::Culled;
    }
    let r = quat_to_matrix(rotation);
    // M = R · diag(s); Σ3D = M Mᵀ
    let mut m = [[0.0f32; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            m[i][k] = r[i][k] * scale[k];
        }
    }
    let mut sigma = [[0.0f32; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            sigma[i][k] = m[i][0] * m[k][0] + m[i][1] * m[k][1] + m[i][2] * m[k][2];
        }
    }
    let (fx, fy) = (camera.fx, camera.fy);
    let j = [[fx / z, 0.0, -fx * t[0] / (z * z)], [0.0, fy / z, -fy * t[1] / (z * z)]];
    let w = &camera.w2c;
    // T = J W (2×3)
    let mut tm = [[0.0f32; 3]; 2];
    for i in 0..2 {
        for k in 0..3 {
            tm[i][k] = j[i][0] * w[0][k] + j[i][1] * w[1][k] + j[i][2] * w[2][k];
        }
    }
    // Σ2D = T Σ Tᵀ
    let mut ts = [[0.0f32; 3]; 2];
    for i in 0..2 {
        for k in 0..3 {
            ts[i][k] = tm[i][0] * sigma[0][k] + tm[i][1] * sigma[1][k] + tm[i][2] * sigma[2][k];
        }
    }
    let dot = |a: &[f32; 3], b: &[f32; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cov = [dot(&ts[0], &tm[0]) + COV_LOW_PASS, dot(&ts[0], &tm[1]), dot(&ts[1], &tm[1]) + COV_LOW_PASS];
    Projection::Visible(ScreenGaussian {
        mean: [fx * t[0] / z + camera.cx, fy * t[1] / z + camera.cy],
        cov,
        depth: z,
    })
}
