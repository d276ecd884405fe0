//! Differentiable 3D Gaussian splat renderer.
//!
//! Gaussians carry degree-0 color only. A frame is produced by projecting
//! each Gaussian to a 2D splat (EWA linearization), sorting splats by
//! camera depth, then alpha compositing front to back over the scene
//! background. [`render_vjp`] is the exact adjoint of [`render`], with the
//! same thresholds applied.

mod camera;
mod gaussian;
mod project;
mod render;

pub use camera::Camera;
pub use gaussian::{
    compute_cov3d, flatten_grads, Gaussian, GaussianGrad, Scene, PARAMS_PER_GAUSSIAN,
};
pub use project::{project_gaussian, Splat2D};
pub use render::{render, render_vjp, RenderConfig};
