use alloc::format;

#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{
    cross3, is_orthonormal, mat_vec3, normalize3, scale3, sub3, transpose3, Mat3, Vec3,
};
use crate::{Error, Result};

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera space is x right, y down, z forward. Pixel `(x, y)` is sampled at
/// its center, image-plane coordinate `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub near: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Camera(format!(
                "focal lengths must be positive ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::Camera(format!(
                "resolution {}x{} below 8x8",
                self.width, self.height
            )));
        }
        if !is_orthonormal(&self.rotation, 1e-6) {
            return Err(Error::Camera("rotation is not orthonormal".into()));
        }
        if self.near.is_nan() || self.near < 0.0 {
            return Err(Error::Camera(format!(
                "near plane {} is negative",
                self.near
            )));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`, with `up` the world up vector
    /// and the given horizontal field of view (radians).
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = normalize3(sub3(target, eye));
        let right = normalize3(cross3(forward, up));
        let down = cross3(forward, right);
        let rotation = [right, down, forward];
        let translation = scale3(mat_vec3(&rotation, eye), -1.0);
        let fx = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
            near: 0.01,
        }
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3 {
        scale3(
            mat_vec3(&transpose3(&self.rotation), self.translation),
            -1.0,
        )
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = mat_vec3(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
