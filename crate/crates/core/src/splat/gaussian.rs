use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{mat_mul3, quat_normalize, quat_to_rot, sigmoid, transpose3, Mat3, Quat, Vec3};

/// Learnable parameters of one splat, all in unconstrained space.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Gaussian {
    pub position: Vec3,
    /// Per-axis `ln(extent)`.
    pub log_scale: Vec3,
    /// `(w, x, y, z)`; renormalized after every optimizer step.
    pub rotation: Quat,
    pub opacity_logit: f64,
    /// Color logits; the rendered color is `sigmoid(rgb)`.
    pub rgb: Vec3,
}

/// Number of scalar parameters per Gaussian when flattened.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn color(&self) -> Vec3 {
        [
            sigmoid(self.rgb[0]),
            sigmoid(self.rgb[1]),
            sigmoid(self.rgb[2]),
        ]
    }

    pub fn scale(&self) -> Vec3 {
        [
            self.log_scale[0].exp(),
            self.log_scale[1].exp(),
            self.log_scale[2].exp(),
        ]
    }

    pub fn covariance(&self) -> Mat3 {
        compute_cov3d(self.log_scale, self.rotation)
    }

    /// Layout: position, log_scale, rotation, opacity_logit, rgb.
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(&self.position);
        p[3..6].copy_from_slice(&self.log_scale);
        p[6..10].copy_from_slice(&self.rotation);
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(&self.rgb);
        p
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            position: [p[0], p[1], p[2]],
            log_scale: [p[3], p[4], p[5]],
            rotation: [p[6], p[7], p[8], p[9]],
            opacity_logit: p[10],
            rgb: [p[11], p[12], p[13]],
        }
    }
}

/// `Σ = R · diag(exp(2·log_scale)) · Rᵀ` with `R` from the normalized quaternion.
pub fn compute_cov3d(log_scale: Vec3, rotation: Quat) -> Mat3 {
    let r = quat_to_rot(quat_normalize(rotation));
    let s = [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()];
    let mut m = r;
    for row in &mut m {
        for (v, sk) in row.iter_mut().zip(s) {
            *v *= sk;
        }
    }
    mat_mul3(&m, &transpose3(&m))
}

/// Ordered Gaussians plus the background color they are composited over.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
    pub background: Vec3,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian>, background: Vec3) -> Self {
        Self {
            gaussians,
            background,
        }
    }

    pub fn empty(background: Vec3) -> Self {
        Self {
            gaussians: Vec::new(),
            background,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * PARAMS_PER_GAUSSIAN);
        for g in &self.gaussians {
            out.extend_from_slice(&g.to_params());
        }
        out
    }

    /// Overwrites every Gaussian from a flat parameter buffer and
    /// renormalizes every rotation that changed, so an unchanged buffer
    /// leaves the scene bit-identical.
    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.len() * PARAMS_PER_GAUSSIAN);
        for (g, p) in self
            .gaussians
            .iter_mut()
            .zip(params.chunks_exact(PARAMS_PER_GAUSSIAN))
        {
            let old = g.rotation;
            *g = Gaussian::from_params(p);
            if g.rotation != old {
                g.rotation = quat_normalize(g.rotation);
            }
        }
    }
}

/// Gradient block for one Gaussian, same layout as [`Gaussian`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GaussianGrad {
    pub position: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub opacity_logit: f64,
    pub rgb: Vec3,
}

impl GaussianGrad {
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        Gaussian {
            position: self.position,
            log_scale: self.log_scale,
            rotation: self.rotation,
            opacity_logit: self.opacity_logit,
            rgb: self.rgb,
        }
        .to_params()
    }

    pub fn is_zero(&self) -> bool {
        self.to_params().iter().all(|&v| v == 0.0)
    }

    pub fn add_assign(&mut self, other: &GaussianGrad) {
        for k in 0..3 {
            self.position[k] += other.position[k];
            self.log_scale[k] += other.log_scale[k];
            self.rgb[k] += other.rgb[k];
        }
        for k in 0..4 {
            self.rotation[k] += other.rotation[k];
        }
        self.opacity_logit += other.opacity_logit;
    }
}

/// Flattens per-Gaussian gradients in [`Scene::to_params`] order.
pub fn flatten_grads(grads: &[GaussianGrad]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grads.len() * PARAMS_PER_GAUSSIAN);
    for g in grads {
        out.extend_from_slice(&g.to_params());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cov_of_unit_gaussian_is_identity() {
        let c = compute_cov3d([0.0; 3], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c, crate::linalg::IDENTITY3);
    }

    #[test]
    fn axis_aligned_scaling_squares_extent() {
        let c = compute_cov3d([core::f64::consts::LN_2, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]);
        let expected = [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negated_quaternion_gives_identical_covariance() {
        let q = [0.4, -0.2, 0.7, 0.3];
        let nq = [-0.4, 0.2, -0.7, -0.3];
        let s = [0.1, -0.5, 0.3];
        assert_eq!(compute_cov3d(s, q), compute_cov3d(s, nq));
    }

    #[test]
    fn params_roundtrip() {
        let g = Gaussian {
            position: [1.0, 2.0, 3.0],
            log_scale: [-1.0, -2.0, -3.0],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.5,
            rgb: [0.1, 0.2, 0.3],
        };
        assert_eq!(Gaussian::from_params(&g.to_params()), g);
    }
}
