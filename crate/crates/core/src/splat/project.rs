//! EWA projection of 3D Gaussians to image-plane splats, and its adjoint.

#[allow(unused_imports)]
use num_traits::Float;

use super::camera::Camera;
use super::gaussian::{Gaussian, GaussianGrad};
use crate::linalg::{
    mat_mul3, mat_vec3, quat_normalize, quat_normalize_vjp, quat_to_rot, quat_to_rot_vjp, sigmoid,
    transpose3, Mat2, Mat3, Vec3,
};

/// A Gaussian after projection onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Image-plane mean in pixels.
    pub mean2d: [f64; 2],
    /// Dilated image-plane covariance, pixels².
    pub cov2d: Mat2,
    /// Camera-space z.
    pub depth: f64,
    pub color: Vec3,
    pub alpha: f64,
}

/// Intermediate quantities shared by the forward projection and its adjoint.
struct Frame {
    rot: Mat3,
    scale: Vec3,
    cov3d: Mat3,
    t: Vec3,
    /// `J · W`, the 2×3 linearized projection.
    jw: [[f64; 3]; 2],
}

fn frame(g: &Gaussian, cam: &Camera) -> Option<Frame> {
    let t = cam.to_camera(g.position);
    if t[2] <= cam.near {
        return None;
    }
    let rot = quat_to_rot(quat_normalize(g.rotation));
    let scale = g.scale();
    let mut m = rot;
    for row in &mut m {
        for (v, s) in row.iter_mut().zip(scale) {
            *v *= s;
        }
    }
    let cov3d = mat_mul3(&m, &transpose3(&m));
    let (z, z2) = (t[2], t[2] * t[2]);
    let j = [
        [cam.fx / z, 0.0, -cam.fx * t[0] / z2],
        [0.0, cam.fy / z, -cam.fy * t[1] / z2],
    ];
    let w = &cam.rotation;
    let mut jw = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    Some(Frame {
        rot,
        scale,
        cov3d,
        t,
        jw,
    })
}

/// Projects `g` through `cam`; `None` when the center is at or behind the
/// near plane. `dilation` is added to the diagonal of the 2D covariance.
pub fn project_gaussian(g: &Gaussian, cam: &Camera, dilation: f64) -> Option<Splat2D> {
    let f = frame(g, cam)?;
    let t = f.t;
    let mean2d = [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy];
    let mut cov2d = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += f.jw[a][k] * f.cov3d[k][l] * f.jw[b][l];
                }
            }
            cov2d[a][b] = acc;
        }
    }
    // exact symmetry keeps the conic symmetric too
    let off = 0.5 * (cov2d[0][1] + cov2d[1][0]);
    cov2d[0][1] = off;
    cov2d[1][0] = off;
    cov2d[0][0] += dilation;
    cov2d[1][1] += dilation;
    Some(Splat2D {
        mean2d,
        cov2d,
        depth: t[2],
        color: g.color(),
        alpha: g.opacity(),
    })
}

/// Cotangents of one projected splat, produced by the compositing adjoint.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SplatCotangent {
    pub mean2d: [f64; 2],
    /// Full-matrix gradient (entries treated independently).
    pub cov2d: Mat2,
    pub color: Vec3,
    pub alpha: f64,
}

/// Pulls splat-space cotangents back to the Gaussian's raw parameters.
pub(crate) fn project_vjp(g: &Gaussian, cam: &Camera, ct: &SplatCotangent) -> GaussianGrad {
    let Some(f) = frame(g, cam) else {
        return GaussianGrad::default();
    };
    let mut out = GaussianGrad::default();

    // activations
    let color = g.color();
    for k in 0..3 {
        out.rgb[k] = ct.color[k] * color[k] * (1.0 - color[k]);
    }
    let a = sigmoid(g.opacity_logit);
    out.opacity_logit = ct.alpha * a * (1.0 - a);

    // cov2d = JW Σ (JW)ᵀ; G2 symmetrized
    let g2 = [
        [ct.cov2d[0][0], 0.5 * (ct.cov2d[0][1] + ct.cov2d[1][0])],
        [0.5 * (ct.cov2d[0][1] + ct.cov2d[1][0]), ct.cov2d[1][1]],
    ];
    // dL/dΣ3 = (JW)ᵀ G2 (JW)
    let mut g_cov3 = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            let mut acc = 0.0;
            for a_ in 0..2 {
                for b in 0..2 {
                    acc += f.jw[a_][k] * g2[a_][b] * f.jw[b][l];
                }
            }
            g_cov3[k][l] = acc;
        }
    }
    // dL/d(JW) = 2 G2 (JW) Σ3
    let mut g_jw = [[0.0; 3]; 2];
    for a_ in 0..2 {
        for l in 0..3 {
            let mut acc = 0.0;
            for b in 0..2 {
                for k in 0..3 {
                    acc += g2[a_][b] * f.jw[b][k] * f.cov3d[k][l];
                }
            }
            g_jw[a_][l] = 2.0 * acc;
        }
    }
    // dL/dJ = dL/d(JW) · Wᵀ
    let w = &cam.rotation;
    let mut g_j = [[0.0; 3]; 2];
    for a_ in 0..2 {
        for k in 0..3 {
            g_j[a_][k] = g_jw[a_][0] * w[k][0] + g_jw[a_][1] * w[k][1] + g_jw[a_][2] * w[k][2];
        }
    }

    let (x, y, z) = (f.t[0], f.t[1], f.t[2]);
    let (z2, z3) = (z * z, z * z * z);
    let mut g_t = [0.0; 3];
    // mean2d
    g_t[0] += ct.mean2d[0] * cam.fx / z;
    g_t[1] += ct.mean2d[1] * cam.fy / z;
    g_t[2] += -ct.mean2d[0] * cam.fx * x / z2 - ct.mean2d[1] * cam.fy * y / z2;
    // Jacobian entries
    g_t[0] += g_j[0][2] * (-cam.fx / z2);
    g_t[1] += g_j[1][2] * (-cam.fy / z2);
    g_t[2] += g_j[0][0] * (-cam.fx / z2)
        + g_j[0][2] * (2.0 * cam.fx * x / z3)
        + g_j[1][1] * (-cam.fy / z2)
        + g_j[1][2] * (2.0 * cam.fy * y / z3);
    out.position = mat_vec3(&transpose3(w), g_t);

    // Σ3 = M Mᵀ, M = R S
    let mut m = f.rot;
    for row in &mut m {
        for (v, s) in row.iter_mut().zip(f.scale) {
            *v *= s;
        }
    }
    let mut g_m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += (g_cov3[i][k] + g_cov3[k][i]) * m[k][j];
            }
            g_m[i][j] = acc;
        }
    }
    let mut g_rot = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g_rot[i][j] = g_m[i][j] * f.scale[j];
        }
    }
    for j in 0..3 {
        let mut acc = 0.0;
        for i in 0..3 {
            acc += f.rot[i][j] * g_m[i][j];
        }
        out.log_scale[j] = acc * f.scale[j];
    }
    let q_unit = quat_normalize(g.rotation);
    out.rotation = quat_normalize_vjp(g.rotation, quat_to_rot_vjp(q_unit, &g_rot));
    out
}
