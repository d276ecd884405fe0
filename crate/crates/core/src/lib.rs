//! Hiding an image inside the parameters of a 3D Gaussian splat scene.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every piece of the
//! pipeline that is pure computation:
//!
//! - [`splat`]: the differentiable splat renderer and its analytic
//!   vector-Jacobian product.
//! - [`autodiff`]: a small tape-based reverse-mode engine and Adam.
//! - [`decoder`]: the U-Net style decoder and its per-layer gradient
//!   cosine statistics.
//! - [`train`]: teacher pretraining and the student/decoder embedding loop.
//! - [`metrics`], [`attacks`], [`lsb`]: evaluation, image-space attacks and
//!   the bit-plane baseline.
//! - [`scene_gen`]: deterministic procedural scenes and camera rings.
//!
//! File formats, the CLI and the evaluation harness live in the `concealgs`
//! companion crate.

#![no_std]

extern crate alloc;

pub mod attacks;
pub mod autodiff;
pub mod decoder;
mod error;
pub mod image;
pub mod linalg;
pub mod lsb;
pub mod metrics;
pub mod scene_gen;
pub mod splat;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
