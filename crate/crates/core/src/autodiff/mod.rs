//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! The layer vocabulary is fixed to what the decoder needs: 2D convolution,
//! leaky ReLU, nearest-neighbour ×2 upsampling, channel concatenation,
//! sigmoid and addition, plus a handful of reductions used as losses.
//! Activations are `[C, H, W]` (batch of one).

mod adam;
mod conv;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tape::{Gradients, LayerKind, Tape, Var};
pub use tensor::Tensor;

/// Scalar types the engine runs on.
pub trait Real:
    num_traits::Float + Default + core::fmt::Debug + core::iter::Sum + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c ← a·b + beta·c` for an `m×k` by `k×n` product. `a` and `b` are
    /// contiguous, read row-major or transposed as flagged; `c` is row-major.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! gemm_impl {
    ($f:ident) => {
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            a: &[Self],
            a_t: bool,
            b: &[Self],
            b_t: bool,
            beta: Self,
            c: &mut [Self],
        ) {
            assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
            let (rsa, csa) = strides(m, k, a_t);
            let (rsb, csb) = strides(k, n, b_t);
            // SAFETY: every slice covers the extent implied by its dimensions
            // and strides, checked above; `c` does not alias `a` or `b`.
            unsafe {
                matrixmultiply::$f(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    };
}

impl Real for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    gemm_impl!(sgemm);
}

impl Real for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    gemm_impl!(dgemm);
}

/// Dot product of two equal-length slices, accumulated in `f64`.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len());
    dot_f64(a, b)
}

#[inline]
pub(crate) fn dot_f64<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k].as_f64() * b[4 * i + k].as_f64();
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i].as_f64() * b[i].as_f64();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sum with `f64` accumulation.
#[inline]
pub(crate) fn sum_f64<T: Real>(a: &[T]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k].as_f64();
        }
    }
    let mut tail = 0.0;
    for v in &a[chunks * 4..] {
        tail += v.as_f64();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
