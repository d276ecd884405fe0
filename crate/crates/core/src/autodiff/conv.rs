//! Direct 2D convolution kernels (zero padding `k / 2`, stride 1 or 2).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{sum_f64, Real};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        x: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
    ) -> Result<Self, String> {
        if x.len() != 3 {
            return Err(format!("input must be [C, H, W], got {:?}", x));
        }
        if weight.len() != 4 || weight[2] != weight[3] || weight[2].is_multiple_of(2) {
            return Err(format!(
                "kernel must be [C_out, C_in, k, k] with odd k, got {:?}",
                weight
            ));
        }
        if weight[1] != x[0] {
            return Err(format!(
                "kernel expects {} input channels, input has {}",
                weight[1], x[0]
            ));
        }
        if bias != [weight[0]] {
            return Err(format!(
                "bias shape {:?} for {} output channels",
                bias, weight[0]
            ));
        }
        if stride != 1 && stride != 2 {
            return Err(format!("unsupported stride {stride}"));
        }
        let (k, pad) = (weight[2], weight[2] / 2);
        if x[1] + 2 * pad < k || x[2] + 2 * pad < k {
            return Err(format!("input {:?} smaller than kernel {}", x, k));
        }
        Ok(Self {
            c_in: x[0],
            h: x[1],
            w: x[2],
            c_out: weight[0],
            k,
            stride,
            pad,
            h_out: (x[1] + 2 * pad - k) / stride + 1,
            w_out: (x[2] + 2 * pad - k) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.c_out, self.h_out, self.w_out]
    }

    /// Output indices `o` with `0 <= o·stride + off < len_in`, as `lo..hi`.
    fn valid(&self, len_in: usize, len_out: usize, off: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let last = len_in as isize - 1 - off;
        let hi = if last < 0 {
            0
        } else {
            (last / s + 1).min(len_out as isize)
        };
        (lo as usize, hi.max(lo) as usize)
    }

    fn rows(&self, ky: usize) -> (usize, usize, isize) {
        let off = ky as isize - self.pad as isize;
        let (lo, hi) = self.valid(self.h, self.h_out, off);
        (lo, hi, off)
    }

    fn cols(&self, kx: usize) -> (usize, usize, isize) {
        let off = kx as isize - self.pad as isize;
        let (lo, hi) = self.valid(self.w, self.w_out, off);
        (lo, hi, off)
    }
}

/// Unfolds `x` into a `[C_in·k·k, H_out·W_out]` patch matrix.
fn im2col<T: Real>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let (plane_in, plane_out) = (g.h * g.w, g.h_out * g.w_out);
    let mut col = vec![T::zero(); g.c_in * g.k * g.k * plane_out];
    for ci in 0..g.c_in {
        let in_plane = &x[ci * plane_in..(ci + 1) * plane_in];
        for ky in 0..g.k {
            let (y_lo, y_hi, y_off) = g.rows(ky);
            for kx in 0..g.k {
                let (x_lo, x_hi, x_off) = g.cols(kx);
                let r = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[r * plane_out..(r + 1) * plane_out];
                for oy in y_lo..y_hi {
                    let iy = (oy as isize * g.stride as isize + y_off) as usize;
                    let in_row = &in_plane[iy * g.w..(iy + 1) * g.w];
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if g.stride == 1 {
                        let src = &in_row
                            [(x_lo as isize + x_off) as usize..(x_hi as isize + x_off) as usize];
                        out_row[x_lo..x_hi].copy_from_slice(src);
                    } else {
                        for ox in x_lo..x_hi {
                            out_row[ox] = in_row[(ox as isize * 2 + x_off) as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input.
fn col2im<T: Real>(g: &ConvGeom, col: &[T]) -> Vec<T> {
    let (plane_in, plane_out) = (g.h * g.w, g.h_out * g.w_out);
    let mut gx = vec![T::zero(); g.c_in * plane_in];
    for ci in 0..g.c_in {
        let gx_plane = &mut gx[ci * plane_in..(ci + 1) * plane_in];
        for ky in 0..g.k {
            let (y_lo, y_hi, y_off) = g.rows(ky);
            for kx in 0..g.k {
                let (x_lo, x_hi, x_off) = g.cols(kx);
                let r = (ci * g.k + ky) * g.k + kx;
                let src = &col[r * plane_out..(r + 1) * plane_out];
                for oy in y_lo..y_hi {
                    let iy = (oy as isize * g.stride as isize + y_off) as usize;
                    let gx_row = &mut gx_plane[iy * g.w..(iy + 1) * g.w];
                    let go_row = &src[oy * g.w_out..(oy + 1) * g.w_out];
                    if g.stride == 1 {
                        let dst = &mut gx_row
                            [(x_lo as isize + x_off) as usize..(x_hi as isize + x_off) as usize];
                        for (d, &v) in dst.iter_mut().zip(&go_row[x_lo..x_hi]) {
                            *d = *d + v;
                        }
                    } else {
                        for ox in x_lo..x_hi {
                            let ix = (ox as isize * 2 + x_off) as usize;
                            gx_row[ix] = gx_row[ix] + go_row[ox];
                        }
                    }
                }
            }
        }
    }
    gx
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// A 1×1 stride-1 convolution needs no unfolding.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let plane_out = g.h_out * g.w_out;
    let mut out = vec![T::zero(); g.c_out * plane_out];
    for (co, plane) in out.chunks_exact_mut(plane_out).enumerate() {
        plane.fill(bias[co]);
    }
    let unfolded;
    let col = if g.is_pointwise() {
        x
    } else {
        unfolded = im2col(g, x);
        &unfolded[..]
    };
    T::gemm(
        g.c_out,
        g.patch_len(),
        plane_out,
        weight,
        false,
        col,
        false,
        T::one(),
        &mut out,
    );
    out
}

/// Gradient with respect to the input.
pub(crate) fn backward_input<T: Real>(g: &ConvGeom, weight: &[T], grad_out: &[T]) -> Vec<T> {
    let plane_out = g.h_out * g.w_out;
    let mut gcol = vec![T::zero(); g.patch_len() * plane_out];
    T::gemm(
        g.patch_len(),
        g.c_out,
        plane_out,
        weight,
        true,
        grad_out,
        false,
        T::zero(),
        &mut gcol,
    );
    if g.is_pointwise() {
        gcol
    } else {
        col2im(g, &gcol)
    }
}

/// Gradients with respect to the kernel and bias. The bias sum is
/// accumulated in `f64`.
pub(crate) fn backward_params<T: Real>(g: &ConvGeom, x: &[T], grad_out: &[T]) -> (Vec<T>, Vec<T>) {
    let plane_out = g.h_out * g.w_out;
    let unfolded;
    let col = if g.is_pointwise() {
        x
    } else {
        unfolded = im2col(g, x);
        &unfolded[..]
    };
    let mut gw = vec![T::zero(); g.c_out * g.patch_len()];
    T::gemm(
        g.c_out,
        plane_out,
        g.patch_len(),
        grad_out,
        false,
        col,
        true,
        T::zero(),
        &mut gw,
    );
    let gb = grad_out
        .chunks_exact(plane_out)
        .map(|p| T::from_f64(sum_f64(p)))
        .collect();
    (gw, gb)
}
