//! Independent reference implementations used to freeze expected values.
//!
//! Everything here is written the slow, literal way and shares no code path
//! with the library beyond its public data types.

#![allow(dead_code)]

use concealgs_core::splat::{Camera, Gaussian, Scene};
use concealgs_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            for k in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

pub fn rotation_from_quaternion(q: [f64; 4]) -> Vec<Vec<f64>> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    vec![
        vec![
            w * w + x * x - y * y - z * z,
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        vec![
            2.0 * (x * y + w * z),
            w * w - x * x + y * y - z * z,
            2.0 * (y * z - w * x),
        ],
        vec![
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            w * w - x * x - y * y + z * z,
        ],
    ]
}

/// `R S Sᵀ Rᵀ` by dense products.
pub fn covariance(log_scale: [f64; 3], q: [f64; 4]) -> Vec<Vec<f64>> {
    let r = rotation_from_quaternion(q);
    let mut s = vec![vec![0.0; 3]; 3];
    for k in 0..3 {
        s[k][k] = log_scale[k].exp();
    }
    let rs = matmul(&r, &s);
    matmul(&matmul(&rs, &transpose(&s)), &transpose(&r))
}

pub struct OracleSplat {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    pub inv_cov: [[f64; 2]; 2],
    pub alpha: f64,
    pub color: [f64; 3],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn project(g: &Gaussian, cam: &Camera, index: usize, dilation: f64) -> Option<OracleSplat> {
    let w: Vec<Vec<f64>> = cam.rotation.iter().map(|r| r.to_vec()).collect();
    let x = matmul(
        &w,
        &[
            vec![g.position[0]],
            vec![g.position[1]],
            vec![g.position[2]],
        ],
    );
    let t = [
        x[0][0] + cam.translation[0],
        x[1][0] + cam.translation[1],
        x[2][0] + cam.translation[2],
    ];
    if t[2] <= cam.near {
        return None;
    }
    let j = vec![
        vec![cam.fx / t[2], 0.0, -cam.fx * t[0] / (t[2] * t[2])],
        vec![0.0, cam.fy / t[2], -cam.fy * t[1] / (t[2] * t[2])],
    ];
    let jw = matmul(&j, &w);
    let cov = matmul(
        &matmul(&jw, &covariance(g.log_scale, g.rotation)),
        &transpose(&jw),
    );
    let (a, b, d) = (
        cov[0][0] + dilation,
        0.5 * (cov[0][1] + cov[1][0]),
        cov[1][1] + dilation,
    );
    let det = a * d - b * b;
    Some(OracleSplat {
        index,
        depth: t[2],
        mean: [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy],
        inv_cov: [[d / det, -b / det], [-b / det, a / det]],
        alpha: sigmoid(g.opacity_logit),
        color: [sigmoid(g.rgb[0]), sigmoid(g.rgb[1]), sigmoid(g.rgb[2])],
    })
}

/// Literal per-pixel compositing: every splat evaluated at every pixel, no
/// support truncation, no early termination.
pub fn render_brute_force(
    scene: &Scene,
    cam: &Camera,
    dilation: f64,
    alpha_clamp: f64,
    alpha_skip: f64,
) -> Image {
    let mut splats: Vec<OracleSplat> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, cam, i, dilation))
        .collect();
    // insertion sort on (depth, index)
    for i in 1..splats.len() {
        let mut j = i;
        while j > 0
            && (splats[j - 1].depth, splats[j - 1].index) > (splats[j].depth, splats[j].index)
        {
            splats.swap(j - 1, j);
            j -= 1;
        }
    }
    Image::from_fn(cam.width, cam.height, |x, y| {
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let mut out = [0.0; 3];
        let mut transmittance = 1.0;
        for s in &splats {
            let d = [p[0] - s.mean[0], p[1] - s.mean[1]];
            let m = d[0] * (s.inv_cov[0][0] * d[0] + s.inv_cov[0][1] * d[1])
                + d[1] * (s.inv_cov[1][0] * d[0] + s.inv_cov[1][1] * d[1]);
            let a = (s.alpha * (-0.5 * m).exp()).min(alpha_clamp);
            if a < alpha_skip {
                continue;
            }
            for c in 0..3 {
                out[c] += s.color[c] * a * transmittance;
            }
            transmittance *= 1.0 - a;
        }
        for c in 0..3 {
            out[c] += scene.background[c] * transmittance;
        }
        out
    })
}

/// Small random scene in front of [`test_camera`]: centers within the
/// view frustum at depth 2–4, moderate opacities.
pub fn random_scene(seed: u64, n: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| {
            let z = rng.gen_range(2.0..4.0);
            Gaussian {
                position: [
                    rng.gen_range(-0.5..0.5) * z * 0.5,
                    rng.gen_range(-0.5..0.5) * z * 0.5,
                    z,
                ],
                log_scale: [
                    rng.gen_range(-2.6..-1.4),
                    rng.gen_range(-2.6..-1.4),
                    rng.gen_range(-2.6..-1.4),
                ],
                rotation: {
                    let q: [f64; 4] = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
                },
                opacity_logit: rng.gen_range(-1.0..1.5),
                rgb: [
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                ],
            }
        })
        .collect();
    Scene::new(
        gaussians,
        [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ],
    )
}

/// 16×16 camera at the origin looking down +z.
pub fn test_camera() -> Camera {
    Camera {
        fx: 18.0,
        fy: 18.0,
        cx: 8.0,
        cy: 8.0,
        width: 16,
        height: 16,
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
        near: 0.2,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central finite difference of `f` around `x` along coordinate `i`.
pub fn central_difference(x: &[f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// `|a - b| <= max(rel·|b|, abs_floor)`.
pub fn close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    (a - b).abs() <= (rel * b.abs()).max(abs_floor)
}

/// Plain mean squared error, two passes (difference image, then mean).
pub fn mse_two_pass(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut acc = 0.0;
    for d in &diffs {
        acc += d * d;
    }
    acc / diffs.len() as f64
}

/// Windowed SSIM straight from the definition: each 11×11 window weighted by
/// a 2-D Gaussian evaluated in place.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut weights = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *w;
        }
    }
    let (w, h) = a.dims();
    let mut acc = 0.0;
    for c in 0..3 {
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = weights[i][j] / total;
                        ma += wt * a.get(x0 + j, y0 + i, c);
                        mb += wt * b.get(x0 + j, y0 + i, c);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = weights[i][j] / total;
                        let da = a.get(x0 + j, y0 + i, c) - ma;
                        let db = b.get(x0 + j, y0 + i, c) - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += sum / count as f64;
    }
    acc / 3.0
}
