//! PSNR and single-scale SSIM for images in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Image, Result};

/// Returned by [`psnr`] when the images are (numerically) identical.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn report(a: &Image, b: &Image) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len().max(1) as f64)
}

/// `10·log10(1 / MSE)`, capped at [`PSNR_CAP`] when `MSE < 1e-10`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Separable correlation over valid positions only.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (wo, ho) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; wo * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..wo {
            tmp[y * wo + x] = row[x..x + n].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; wo * ho];
    for y in 0..ho {
        for (i, &kv) in k.iter().enumerate() {
            let src = &tmp[(y + i) * wo..(y + i + 1) * wo];
            for (o, &s) in out[y * wo..(y + 1) * wo].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a valid-size map back to `w × h`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (wo, ho) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; wo * h];
    for y in 0..ho {
        for (i, &kv) in k.iter().enumerate() {
            let dst = &mut tmp[(y + i) * wo..(y + i + 1) * wo];
            for (d, &m) in dst.iter_mut().zip(&map[y * wo..(y + 1) * wo]) {
                *d += kv * m;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for x in 0..wo {
            let t = tmp[y * wo + x];
            for (i, &kv) in k.iter().enumerate() {
                row[x + i] += kv * t;
            }
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data().chunks_exact(3).map(|p| p[c]).collect()
}

fn check_ssim_dims(a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::InvalidArgument(alloc::format!(
            "{}x{} image is smaller than the {}x{} SSIM window",
            a.width(),
            a.height(),
            SSIM_WINDOW,
            SSIM_WINDOW
        )));
    }
    Ok(())
}

/// Per-channel SSIM statistics over valid window positions.
struct SsimChannel {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    l_num: Vec<f64>,
    l_den: Vec<f64>,
    c_num: Vec<f64>,
    c_den: Vec<f64>,
}

impl SsimChannel {
    fn new(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64]) -> Self {
        let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
        let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let mu_a = filter_valid(a, w, h, k);
        let mu_b = filter_valid(b, w, h, k);
        let e_aa = filter_valid(&sq(a, a), w, h, k);
        let e_bb = filter_valid(&sq(b, b), w, h, k);
        let e_ab = filter_valid(&sq(a, b), w, h, k);
        let n = mu_a.len();
        let (mut l_num, mut l_den, mut c_num, mut c_den) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            l_num[i] = 2.0 * ma * mb + c1;
            l_den[i] = ma * ma + mb * mb + c1;
            c_num[i] = 2.0 * cov + c2;
            c_den[i] = var_a + var_b + c2;
        }
        Self {
            mu_a,
            mu_b,
            l_num,
            l_den,
            c_num,
            c_den,
        }
    }

    fn mean(&self) -> f64 {
        let n = self.l_num.len();
        (0..n)
            .map(|i| (self.l_num[i] * self.c_num[i]) / (self.l_den[i] * self.c_den[i]))
            .sum::<f64>()
            / n as f64
    }
}

/// Gaussian-window SSIM (11×11, σ = 1.5, K1 = 0.01, K2 = 0.03, L = 1),
/// averaged over valid window positions and then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_dims(a, b)?;
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (w, h) = a.dims();
    let total: f64 = (0..3)
        .map(|c| SsimChannel::new(&channel(a, c), &channel(b, c), w, h, &k).mean())
        .sum();
    Ok(total / 3.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_ssim_dims(a, b)?;
    let (w, h) = a.dims();
    let mut grad = Image::new(w, h);
    // identical inputs sit at the maximum, where the gradient is zero
    if a == b {
        return Ok((1.0, grad));
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let (pa, pb) = (channel(a, c), channel(b, c));
        let st = SsimChannel::new(&pa, &pb, w, h, &k);
        total += st.mean();
        let n = st.l_num.len();
        let norm = 1.0 / (3.0 * n as f64);
        // partials of the map with respect to the local moments μa, E[a²], E[ab]
        let (mut d_mu, mut d_aa, mut d_ab) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (l1, l2, k1, k2) = (st.l_num[i], st.l_den[i], st.c_num[i], st.c_den[i]);
            let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
            let s = l1 * k1 / (l2 * k2);
            let ds_dcov = 2.0 * l1 / (l2 * k2);
            let ds_dvar = -s / k2;
            let ds_dmu = 2.0 * mb * k1 / (l2 * k2) - 2.0 * ma * s / l2;
            d_mu[i] = norm * (ds_dmu - mb * ds_dcov - 2.0 * ma * ds_dvar);
            d_aa[i] = norm * ds_dvar;
            d_ab[i] = norm * ds_dcov;
        }
        let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
        let g_aa = filter_valid_adjoint(&d_aa, w, h, &k);
        let g_ab = filter_valid_adjoint(&d_ab, w, h, &k);
        for p in 0..w * h {
            grad.data_mut()[p * 3 + c] = g_mu[p] + 2.0 * pa[p] * g_aa[p] + pb[p] * g_ab[p];
        }
    }
    Ok((total / 3.0, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(w[i], w[10 - i]);
        }
    }

    #[test]
    fn adjoint_identity() {
        // <F x, y> = <x, Fᵀ y>
        let (w, h) = (15, 13);
        let k = gaussian_window(5, 1.0);
        let x: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let y: Vec<f64> = (0..(w - 4) * (h - 4))
            .map(|i| ((i * 13) % 7) as f64 * 0.2)
            .collect();
        let fx = filter_valid(&x, w, h, &k);
        let fty = filter_valid_adjoint(&y, w, h, &k);
        let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn too_small_for_window() {
        let a = Image::new(10, 20);
        assert!(ssim(&a, &a).is_err());
        assert!(psnr(&a, &Image::new(20, 10)).is_err());
    }
}
