//! Image-space attacks applied to check-view renders before recovery.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Image, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum AttackSpec {
    GaussianBlur { sigma: f64 },
    Jpeg { ratio: f64 },
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackSpec::GaussianBlur { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidArgument(alloc::format!(
                    "blur sigma {sigma} must be finite and >= 0"
                )))
            }
            AttackSpec::Jpeg { ratio } if !(ratio > 0.0 && ratio <= 1.0) => Err(
                Error::InvalidArgument(alloc::format!("jpeg ratio {ratio} outside (0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        self.validate()?;
        Ok(match *self {
            AttackSpec::GaussianBlur { sigma } => gaussian_blur(img, sigma),
            AttackSpec::Jpeg { ratio } => jpeg_compress(img, ratio),
        })
    }
}

/// Normalized Gaussian kernel of radius `⌈3σ⌉`.
pub fn blur_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), folded
/// periodically so any offset maps into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Separable Gaussian blur with reflect padding; `sigma = 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = blur_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = img.dims();
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (t, &kv) in k.iter().enumerate() {
                let sx = reflect(x as isize + t as isize - r, w);
                let p = &src[(y * w + sx) * 3..(y * w + sx) * 3 + 3];
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            tmp[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (t, &kv) in k.iter().enumerate() {
                let sy = reflect(y as isize + t as isize - r, h);
                let p = &tmp[(sy * w + x) * 3..(sy * w + x) * 3 + 3];
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    Image::from_vec(w, h, out).expect("same dimensions")
}

/// Annex K luminance quantization table, row-major.
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance quantization table, row-major.
pub const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality in `1..=100` for a compression ratio in `(0, 1]`.
pub fn jpeg_quality(ratio: f64) -> u32 {
    ((100.0 * ratio).round() as i64).clamp(1, 100) as u32
}

/// libjpeg's quality scaling of a base table.
pub fn scaled_table(base: &[u16; 64], quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) as f64) * u as f64 * PI / 16.0).cos();
        }
    }
    m
}

/// Quantizes one 8×8 block in the DCT domain and returns the reconstruction.
fn roundtrip_block(block: &mut [f64; 64], table: &[f64; 64], d: &[[f64; 8]; 8]) {
    let mut tmp = [0.0; 64];
    let mut coef = [0.0; 64];
    // coef = D · B · Dᵀ
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| d[u][y] * block[y * 8 + x]).sum();
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            coef[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * d[v][x]).sum();
        }
    }
    for (c, q) in coef.iter_mut().zip(table) {
        *c = (*c / q).round() * q;
    }
    // B = Dᵀ · coef · D
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| d[u][y] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * d[v][x]).sum();
        }
    }
}

/// Lossy JPEG-equivalent round trip: 8-bit YCbCr (4:4:4), 8×8 DCT,
/// quantization with Annex K tables at quality `round(100·ratio)`, then
/// reconstruction rounded to 8 bits. Entropy coding is omitted since it is
/// lossless. Edges are padded by replication to a multiple of 8.
pub fn jpeg_compress(img: &Image, ratio: f64) -> Image {
    let quality = jpeg_quality(ratio);
    let tables = [
        scaled_table(&LUMA_QUANT, quality),
        scaled_table(&CHROMA_QUANT, quality),
        scaled_table(&CHROMA_QUANT, quality),
    ];
    let (w, h) = img.dims();
    let (pw, ph) = (w.div_ceil(8) * 8, h.div_ceil(8) * 8);
    let mut planes = vec![vec![0.0; pw * ph]; 3];
    for y in 0..ph {
        for x in 0..pw {
            let p = img.pixel(x.min(w - 1), y.min(h - 1));
            let [r, g, b] = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round());
            planes[0][y * pw + x] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            planes[1][y * pw + x] = -0.168736 * r - 0.331264 * g + 0.5 * b;
            planes[2][y * pw + x] = 0.5 * r - 0.418688 * g - 0.081312 * b;
        }
    }
    let d = dct_matrix();
    for (plane, table) in planes.iter_mut().zip(&tables) {
        for by in (0..ph).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    block[y * 8..y * 8 + 8]
                        .copy_from_slice(&plane[(by + y) * pw + bx..(by + y) * pw + bx + 8]);
                }
                roundtrip_block(&mut block, table, &d);
                for y in 0..8 {
                    plane[(by + y) * pw + bx..(by + y) * pw + bx + 8]
                        .copy_from_slice(&block[y * 8..y * 8 + 8]);
                }
            }
        }
    }
    Image::from_fn(w, h, |x, y| {
        let i = y * pw + x;
        let (yy, cb, cr) = (planes[0][i] + 128.0, planes[1][i], planes[2][i]);
        let rgb = [
            yy + 1.402 * cr,
            yy - 0.344136 * cb - 0.714136 * cr,
            yy + 1.772 * cb,
        ];
        rgb.map(|v| v.round().clamp(0.0, 255.0) / 255.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, [2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        // period 4: 0,1,1,0, and -9 ≡ 3
        assert_eq!(reflect(-9, 2), 0);
    }

    #[test]
    fn quality_scaling_endpoints() {
        assert!(scaled_table(&LUMA_QUANT, 100).iter().all(|&q| q == 1.0));
        assert_eq!(scaled_table(&LUMA_QUANT, 50)[0], 16.0);
        assert_eq!(scaled_table(&LUMA_QUANT, 1)[63], 255.0);
        assert_eq!(jpeg_quality(0.8), 80);
        assert_eq!(jpeg_quality(0.001), 1);
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = dct_matrix();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = (0..8).map(|k| d[i][k] * d[j][k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(AttackSpec::GaussianBlur { sigma: -1.0 }.validate().is_err());
        assert!(AttackSpec::Jpeg { ratio: 0.0 }.validate().is_err());
        assert!(AttackSpec::Jpeg { ratio: 1.5 }.validate().is_err());
    }
}
