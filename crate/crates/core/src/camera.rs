use serde::{Deserialize, Serialize};

use crate::error::{GtmError, Result};
use crate::geometry::{mat3_det, mat3_mul, mat3_transpose, mat3_vec, normalize_quat, quat_to_rotmat, Mat3};

/// Pinhole camera with a world-to-camera rigid transform
/// (`x_cam = R x_world + t`, x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Mat3<f64>,
    pub translation: [f64; 3],
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Mat3<f64>,
        translation: [f64; 3],
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Builds the extrinsics from a COLMAP-style `(qw, qx, qy, qz)` quaternion.
    #[allow(clippy::too_many_arguments)]
    pub fn from_quaternion(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        qvec: [f64; 4],
        tvec: [f64; 3],
    ) -> Result<Self> {
        let q = normalize_quat(qvec)?;
        Camera::new(fx, fy, cx, cy, width, height, quat_to_rotmat(q), tvec)
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], focal: f64, width: u32, height: u32) -> Result<Self> {
        let forward =
            normalize(sub(target, eye)).ok_or_else(|| GtmError::Config("camera eye coincides with target".into()))?;
        // Image y points down, so the camera's down axis is -up projected.
        let right = normalize(cross(forward, up))
            .ok_or_else(|| GtmError::Config("camera up is parallel to view direction".into()))?;
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let t = mat3_vec(&rotation, eye);
        Camera::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            [-t[0], -t[1], -t[2]],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GtmError::Config(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GtmError::Config("camera canvas is empty".into()));
        }
        let r = &self.rotation;
        let rtr = mat3_mul(&mat3_transpose(r), r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (v - expected).abs() > 1e-6 {
                    return Err(GtmError::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        if (mat3_det(r) - 1.0).abs() > 1e-6 {
            return Err(GtmError::Config("camera rotation is a reflection".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(GtmError::Config("camera translation is not finite".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> [f64; 3] {
        let c = mat3_vec(&mat3_transpose(&self.rotation), self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = mat3_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Pixel coordinates of a world point; `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.world_to_camera(p);
        if c[2] <= 0.0 {
            return None;
        }
        Some([self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy])
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-12).then(|| [v[0] / n, v[1] / n, v[2] / n])
}
