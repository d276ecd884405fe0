//! Front-to-back alpha compositing of projected splats and its adjoint.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::camera::Camera;
use super::gaussian::{GaussianGrad, Scene};
use super::project::{project_gaussian, project_vjp, Splat2D, SplatCotangent};
use crate::image::Image;
use crate::linalg::{inverse2, Mat2};
use crate::{Error, Result};

/// Rasterizer thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RenderConfig {
    /// Added to both diagonal entries of every 2D covariance (pixels²).
    pub dilation: f64,
    /// Upper bound on a single splat's per-pixel opacity.
    pub alpha_clamp: f64,
    /// Per-pixel opacities below this are skipped.
    pub alpha_skip: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_stop: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            dilation: 0.3,
            alpha_clamp: 0.99,
            alpha_skip: 1.0 / 255.0,
            transmittance_stop: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Prepared {
    index: usize,
    splat: Splat2D,
    conic: Mat2,
    x0: usize,
    x1: usize,
}

/// Projected, depth-sorted splats with per-row candidate lists.
struct Raster {
    splats: Vec<Prepared>,
    rows: Vec<Vec<u32>>,
}

/// Half-width, in standard deviations, beyond which `alpha · G < alpha_skip`.
fn support_radius(alpha: f64, cfg: &RenderConfig) -> Option<f64> {
    if alpha <= cfg.alpha_skip {
        return None;
    }
    if cfg.alpha_skip <= 0.0 {
        return Some(f64::INFINITY);
    }
    Some((2.0 * (alpha / cfg.alpha_skip).ln()).sqrt())
}

fn pixel_span(center: f64, half: f64, len: usize) -> Option<(usize, usize)> {
    if !half.is_finite() {
        return Some((0, len - 1));
    }
    let lo = (center - half - 0.5).floor() - 1.0;
    let hi = (center + half - 0.5).ceil() + 1.0;
    if hi < 0.0 || lo > (len - 1) as f64 {
        return None;
    }
    Some((lo.max(0.0) as usize, hi.min((len - 1) as f64) as usize))
}

fn rasterize(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Result<Raster> {
    cam.validate()?;
    let mut splats = Vec::with_capacity(scene.len());
    let mut rows = vec![Vec::new(); cam.height];
    for (index, g) in scene.gaussians.iter().enumerate() {
        let Some(splat) = project_gaussian(g, cam, cfg.dilation) else {
            continue;
        };
        let conic = inverse2(&splat.cov2d).ok_or(Error::SingularCovariance(index))?;
        if !(conic[0][0] > 0.0 && conic[1][1] > 0.0) {
            return Err(Error::SingularCovariance(index));
        }
        let Some(radius) = support_radius(splat.alpha, cfg) else {
            continue;
        };
        let hx = radius * splat.cov2d[0][0].sqrt();
        let hy = radius * splat.cov2d[1][1].sqrt();
        let (Some((x0, x1)), Some(_)) = (
            pixel_span(splat.mean2d[0], hx, cam.width),
            pixel_span(splat.mean2d[1], hy, cam.height),
        ) else {
            continue;
        };
        splats.push(Prepared {
            index,
            splat,
            conic,
            x0,
            x1,
        });
    }
    // stable: equal depths keep ascending Gaussian index
    splats.sort_by(|a, b| {
        a.splat
            .depth
            .partial_cmp(&b.splat.depth)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    for (k, p) in splats.iter().enumerate() {
        let radius = support_radius(p.splat.alpha, cfg).unwrap_or(0.0);
        let hy = radius * p.splat.cov2d[1][1].sqrt();
        if let Some((y0, y1)) = pixel_span(p.splat.mean2d[1], hy, cam.height) {
            for row in &mut rows[y0..=y1] {
                row.push(k as u32);
            }
        }
    }
    Ok(Raster { splats, rows })
}

/// One splat's contribution at one pixel, recorded for the adjoint.
#[derive(Debug, Clone, Copy)]
struct Fragment {
    splat: u32,
    alpha_hat: f64,
    gauss: f64,
    transmittance: f64,
    clamped: bool,
    d: [f64; 2],
}

/// Walks the candidate list for pixel `(x, y)` front to back. Returns the
/// final transmittance.
fn composite_pixel(
    raster: &Raster,
    x: usize,
    y: usize,
    cfg: &RenderConfig,
    mut visit: impl FnMut(Fragment),
) -> f64 {
    let px = x as f64 + 0.5;
    let py = y as f64 + 0.5;
    let mut t = 1.0;
    for &k in &raster.rows[y] {
        let p = &raster.splats[k as usize];
        if x < p.x0 || x > p.x1 {
            continue;
        }
        let d = [px - p.splat.mean2d[0], py - p.splat.mean2d[1]];
        let a = &p.conic;
        let power =
            -0.5 * (a[0][0] * d[0] * d[0] + 2.0 * a[0][1] * d[0] * d[1] + a[1][1] * d[1] * d[1]);
        if power > 0.0 {
            continue;
        }
        let gauss = power.exp();
        let raw = p.splat.alpha * gauss;
        let clamped = raw > cfg.alpha_clamp;
        let alpha_hat = if clamped { cfg.alpha_clamp } else { raw };
        if alpha_hat < cfg.alpha_skip {
            continue;
        }
        visit(Fragment {
            splat: k,
            alpha_hat,
            gauss,
            transmittance: t,
            clamped,
            d,
        });
        t *= 1.0 - alpha_hat;
        if t < cfg.transmittance_stop {
            break;
        }
    }
    t
}

/// Renders `scene` from `cam`. Every channel lies in `[0, 1]` when the
/// background does.
pub fn render(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    let raster = rasterize(scene, cam, cfg)?;
    let mut img = Image::new(cam.width, cam.height);
    let bg = scene.background;
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut c = [0.0; 3];
            let t = composite_pixel(&raster, x, y, cfg, |f| {
                let col = raster.splats[f.splat as usize].splat.color;
                let w = f.alpha_hat * f.transmittance;
                for ch in 0..3 {
                    c[ch] += col[ch] * w;
                }
            });
            for ch in 0..3 {
                img.set(x, y, ch, c[ch] + bg[ch] * t);
            }
        }
    }
    Ok(img)
}

/// Gradient of `Σ_p ⟨grad_image(p), C(p)⟩` with respect to every Gaussian's
/// raw parameters. Culled or fully skipped Gaussians get an all-zero block.
pub fn render_vjp(
    scene: &Scene,
    cam: &Camera,
    grad_image: &Image,
    cfg: &RenderConfig,
) -> Result<Vec<GaussianGrad>> {
    if grad_image.dims() != (cam.width, cam.height) {
        return Err(Error::Shape(format!(
            "cotangent image {}x{} for a {}x{} camera",
            grad_image.width(),
            grad_image.height(),
            cam.width,
            cam.height
        )));
    }
    let raster = rasterize(scene, cam, cfg)?;
    let mut cts = vec![SplatCotangent::default(); raster.splats.len()];
    // grad w.r.t. the conic, converted to cov2d after the pixel loop
    let mut conic_grads = vec![[[0.0f64; 2]; 2]; raster.splats.len()];
    let bg = scene.background;
    let mut frags: Vec<Fragment> = Vec::new();

    for y in 0..cam.height {
        for x in 0..cam.width {
            let g = grad_image.pixel(x, y);
            if g == [0.0; 3] {
                continue;
            }
            frags.clear();
            let t_final = composite_pixel(&raster, x, y, cfg, |f| frags.push(f));
            let mut suffix = [bg[0] * t_final, bg[1] * t_final, bg[2] * t_final];
            for f in frags.iter().rev() {
                let k = f.splat as usize;
                let p = &raster.splats[k];
                let col = p.splat.color;
                let w = f.alpha_hat * f.transmittance;
                let one_minus = 1.0 - f.alpha_hat;
                let mut d_alpha_hat = 0.0;
                for ch in 0..3 {
                    cts[k].color[ch] += g[ch] * w;
                    d_alpha_hat += g[ch] * (col[ch] * f.transmittance - suffix[ch] / one_minus);
                    suffix[ch] += col[ch] * w;
                }
                if f.clamped {
                    continue;
                }
                cts[k].alpha += d_alpha_hat * f.gauss;
                let d_power = d_alpha_hat * f.alpha_hat;
                let a = &p.conic;
                let ad = [
                    a[0][0] * f.d[0] + a[0][1] * f.d[1],
                    a[1][0] * f.d[0] + a[1][1] * f.d[1],
                ];
                cts[k].mean2d[0] += d_power * ad[0];
                cts[k].mean2d[1] += d_power * ad[1];
                let cg = &mut conic_grads[k];
                cg[0][0] += -0.5 * d_power * f.d[0] * f.d[0];
                cg[0][1] += -0.5 * d_power * f.d[0] * f.d[1];
                cg[1][0] += -0.5 * d_power * f.d[1] * f.d[0];
                cg[1][1] += -0.5 * d_power * f.d[1] * f.d[1];
            }
        }
    }

    let mut grads = vec![GaussianGrad::default(); scene.len()];
    for (k, p) in raster.splats.iter().enumerate() {
        // A = Σ⁻¹  ⇒  dL/dΣ = -A (dL/dA) A
        let a = &p.conic;
        let gc = &conic_grads[k];
        let mut tmp = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                tmp[i][j] = gc[i][0] * a[0][j] + gc[i][1] * a[1][j];
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                cts[k].cov2d[i][j] = -(a[i][0] * tmp[0][j] + a[i][1] * tmp[1][j]);
            }
        }
        grads[p.index] = project_vjp(&scene.gaussians[p.index], cam, &cts[k]);
    }
    Ok(grads)
}
