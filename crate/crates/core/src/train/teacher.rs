use alloc::vec::Vec;

use super::{check_finite, l1_grad, TrainConfig};
use crate::autodiff::{adam_step, AdamState, Tensor};
use crate::metrics::{psnr, ssim_with_grad};
use crate::splat::{flatten_grads, render, render_vjp, Camera, Scene};
use crate::{Error, Image, Result};

const L1_WEIGHT: f64 = 0.8;
const SSIM_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherLog {
    pub step: usize,
    pub view: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherResult {
    pub scene: Scene,
    pub log: Vec<TeacherLog>,
    /// Mean PSNR of the final scene over every training view.
    pub train_psnr: f64,
}

/// `0.8·L1 + 0.2·(1 − SSIM)` and its gradient with respect to `render`.
fn photometric_loss(render: &Image, target: &Image) -> Result<(f64, Image)> {
    let l1 = render.mean_abs_diff(target)?;
    let (s, ds) = ssim_with_grad(render, target)?;
    let mut grad = l1_grad(render, target, L1_WEIGHT);
    for (g, d) in grad.data_mut().iter_mut().zip(ds.data()) {
        *g -= SSIM_WEIGHT * d;
    }
    Ok((L1_WEIGHT * l1 + SSIM_WEIGHT * (1.0 - s), grad))
}

pub(crate) fn mean_psnr(
    scene: &Scene,
    views: &[(Camera, Image)],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (cam, target) in views {
        total += psnr(&render(scene, cam, &cfg.render)?, target)?;
    }
    Ok(total / views.len() as f64)
}

/// Fits `init` to the training views with Adam over every Gaussian
/// parameter, visiting views round-robin. The Gaussian count is fixed.
pub fn pretrain_teacher(
    init: &Scene,
    views: &[(Camera, Image)],
    cfg: &TrainConfig,
) -> Result<TeacherResult> {
    if views.len() < 2 {
        return Err(Error::InvalidArgument(
            "teacher pretraining needs at least two views".into(),
        ));
    }
    if init.is_empty() {
        return Err(Error::InvalidArgument(
            "teacher scene has no gaussians".into(),
        ));
    }
    for (i, (cam, target)) in views.iter().enumerate() {
        cam.validate()?;
        if target.dims() != (cam.width, cam.height) {
            return Err(Error::Shape(alloc::format!(
                "view {i}: target does not match camera resolution"
            )));
        }
    }
    if !(cfg.lr_teacher > 0.0 && cfg.lr_teacher.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!(
            "lr_teacher must be positive, got {}",
            cfg.lr_teacher
        )));
    }

    let mut scene = init.clone();
    let mut params = [Tensor::new(
        &[init.len() * crate::splat::PARAMS_PER_GAUSSIAN],
        scene.to_params(),
    )?];
    let mut adam = AdamState::default();
    let mut log = Vec::with_capacity(cfg.steps_teacher);
    for step in 0..cfg.steps_teacher {
        let view = step % views.len();
        let (cam, target) = &views[view];
        let img = render(&scene, cam, &cfg.render)?;
        let (loss, grad_img) = photometric_loss(&img, target)?;
        check_finite(loss, step)?;
        log.push(TeacherLog { step, view, loss });
        let grads = flatten_grads(&render_vjp(&scene, cam, &grad_img, &cfg.render)?);
        adam_step(
            &mut params,
            &[Tensor::new(&[grads.len()], grads)?],
            &mut adam,
            cfg.lr_teacher,
        )?;
        scene.set_params(params[0].data());
        params[0].data_mut().copy_from_slice(&scene.to_params());
    }
    let train_psnr = mean_psnr(&scene, views, cfg)?;
    Ok(TeacherResult {
        scene,
        log,
        train_psnr,
    })
}
