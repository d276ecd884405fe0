use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_finite, l1_grad, HiddenImage, TrainConfig};
use crate::attacks::{gaussian_blur, AttackSpec};
use crate::autodiff::{adam_step, AdamState, Tensor};
use crate::decoder::{build_decoder, per_layer_cosine, DecoderNet, LayerGradStats};
use crate::metrics::psnr;
use crate::splat::{flatten_grads, render, render_vjp, Camera, Scene, PARAMS_PER_GAUSSIAN};
use crate::{Error, Image, Result};

/// A camera together with the frozen teacher's render from it.
#[derive(Debug, Clone, Copy)]
pub struct PoseView<'a> {
    pub camera: &'a Camera,
    pub teacher: &'a Image,
}

/// The poses used by one embedding step.
#[derive(Debug, Clone)]
pub struct StepPoses<'a> {
    /// `P_m`, where the student is distilled toward the teacher.
    pub kd: PoseView<'a>,
    /// `P_c`; the first entry is the primary check view.
    pub checks: Vec<PoseView<'a>>,
    /// `P_n`, a normal view fed to the decoder as an identity example.
    pub normal: PoseView<'a>,
    /// Attack applied to the check-view renders before they reach the decoder.
    pub check_attack: Option<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLog {
    pub step: usize,
    pub kd_view: usize,
    pub normal_view: usize,
    pub l_kd: f64,
    pub l_d_pos: f64,
    pub l_d_neg: f64,
    pub cosines: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean_w: f64,
    /// Largest mean absolute difference between student and teacher over
    /// the check views, measured before this step's update.
    pub check_disruption: f64,
    /// PSNR of the primary check view's recovery against the hidden image,
    /// recorded every `log_every` steps and on the last step.
    pub psnr_check_recovery: Option<f64>,
}

/// Optimizer state carried across embedding steps.
#[derive(Debug, Clone)]
pub struct EmbedState {
    pub student: Scene,
    pub decoder: DecoderNet<f32>,
    gaussian_params: Tensor<f64>,
    gaussian_adam: AdamState,
    decoder_adam: AdamState,
    step: usize,
}

impl EmbedState {
    /// Student as a copy of `teacher` and a freshly initialized decoder.
    pub fn new(teacher: &Scene, cfg: &TrainConfig) -> Result<Self> {
        let decoder = build_decoder(cfg.seed, cfg.decoder_width)?;
        Self::with_decoder(teacher, decoder)
    }

    pub fn with_decoder(teacher: &Scene, decoder: DecoderNet<f32>) -> Result<Self> {
        Ok(Self {
            student: teacher.clone(),
            decoder,
            gaussian_params: Tensor::new(
                &[teacher.len() * PARAMS_PER_GAUSSIAN],
                teacher.to_params(),
            )?,
            gaussian_adam: AdamState::default(),
            decoder_adam: AdamState::default(),
            step: 0,
        })
    }

    /// Number of steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }
}

/// Per-layer `w_i·(λ_pos·g⁺_i + λ_neg·g⁻_i)` over the `[weight, bias]` blocks.
pub fn combine_decoder_grads(
    pos: &[Tensor<f32>],
    neg: &[Tensor<f32>],
    weights: &[f64],
    lambda_pos: f64,
    lambda_neg: f64,
) -> Result<Vec<Tensor<f32>>> {
    if pos.len() != neg.len() || pos.len() != 2 * weights.len() {
        return Err(Error::Shape(format!(
            "{} positive blocks, {} negative blocks, {} layer weights",
            pos.len(),
            neg.len(),
            weights.len()
        )));
    }
    let mut out = Vec::with_capacity(pos.len());
    for (i, (gp, gn)) in pos.iter().zip(neg).enumerate() {
        if gp.shape() != gn.shape() {
            return Err(Error::Shape(format!(
                "block {i}: {:?} vs {:?}",
                gp.shape(),
                gn.shape()
            )));
        }
        let w = weights[i / 2];
        let (a, b) = ((w * lambda_pos) as f32, (w * lambda_neg) as f32);
        let data = gp
            .data()
            .iter()
            .zip(gn.data())
            .map(|(&p, &n)| a * p + b * n)
            .collect();
        out.push(Tensor::new(gp.shape(), data)?);
    }
    Ok(out)
}

/// Pulls a cotangent back through an attack: the blur kernel is symmetric,
/// so blurring the cotangent is its adjoint up to border reflections; JPEG
/// is passed straight through.
fn attack_vjp(attack: Option<AttackSpec>, cotangent: Image) -> Image {
    match attack {
        Some(AttackSpec::GaussianBlur { sigma }) => gaussian_blur(&cotangent, sigma),
        _ => cotangent,
    }
}

/// Draws the check-view augmentation for one step.
fn draw_attack(rng: &mut ChaCha8Rng, cfg: &TrainConfig) -> Option<AttackSpec> {
    let u: f64 = rng.gen();
    let half = 0.5 * (1.0 - cfg.augment_clean);
    match u {
        u if u < cfg.augment_clean => None,
        u if u < cfg.augment_clean + half => Some(AttackSpec::GaussianBlur {
            sigma: rng.gen_range(0.0..=cfg.augment_max_blur),
        }),
        _ => Some(AttackSpec::Jpeg {
            ratio: rng.gen_range(cfg.augment_min_jpeg..=1.0),
        }),
    }
}

fn planar(img: &Image) -> Result<Tensor<f32>> {
    Tensor::new(&[3, img.height(), img.width()], img.to_planar())
}

/// One joint update of the student's Gaussians and the decoder.
///
/// `target` is the hidden image resampled to the render resolution.
/// `kd_view` and `normal_view` are only recorded in the log.
pub fn embed_step(
    state: &mut EmbedState,
    poses: &StepPoses<'_>,
    target: &Image,
    cfg: &TrainConfig,
    (kd_view, normal_view): (usize, usize),
) -> Result<StepLog> {
    if poses.checks.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one check view is required".into(),
        ));
    }
    let step = state.step;
    let rcfg = &cfg.render;
    let n_checks = poses.checks.len() as f64;
    let lambda_neg = cfg.effective_lambda_neg();
    let target_t = planar(target)?;

    // distillation at P_m
    let img_m = render(&state.student, poses.kd.camera, rcfg)?;
    let l_kd = img_m.mean_abs_diff(poses.kd.teacher)?;
    let mut cotangents: Vec<(&Camera, Image)> = alloc::vec![(
        poses.kd.camera,
        l1_grad(&img_m, poses.kd.teacher, cfg.lambda_kd)
    )];

    // hidden-image loss at each P_c
    let mut l_d_pos = 0.0;
    let mut check_disruption: f64 = 0.0;
    let mut recovery = None;
    let mut pos_grads: Option<Vec<Tensor<f32>>> = None;
    for (k, view) in poses.checks.iter().enumerate() {
        let img_c = render(&state.student, view.camera, rcfg)?;
        check_disruption = check_disruption.max(img_c.mean_abs_diff(view.teacher)?);
        if cfg.no_decoder {
            l_d_pos += img_c.mean_abs_diff(target)? / n_checks;
            cotangents.push((
                view.camera,
                l1_grad(&img_c, target, cfg.lambda_pos / n_checks),
            ));
            if k == 0 {
                recovery = Some(img_c);
            }
            continue;
        }
        let input = match &poses.check_attack {
            Some(a) => a.apply(&img_c)?,
            None => img_c.clone(),
        };
        let pass = state.decoder.l1_pass(&planar(&input)?, &target_t, true)?;
        l_d_pos += pass.loss / n_checks;
        let g_in = pass.input_grad.expect("input gradient requested");
        let mut g_img = attack_vjp(
            poses.check_attack,
            Image::from_planar(img_c.width(), img_c.height(), g_in.data())?,
        );
        let s = cfg.lambda_pos / n_checks;
        for v in g_img.data_mut() {
            *v *= s;
        }
        cotangents.push((view.camera, g_img));
        if k == 0 {
            recovery = Some(match poses.check_attack {
                None => Image::from_planar(img_c.width(), img_c.height(), pass.output.data())?,
                Some(_) => state.decoder.decode(&img_c)?,
            });
        }
        match &mut pos_grads {
            None => pos_grads = Some(pass.param_grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&pass.param_grads) {
                    a.add_assign(g);
                }
            }
        }
    }
    if let Some(acc) = &mut pos_grads {
        if poses.checks.len() > 1 {
            for a in acc.iter_mut() {
                a.scale((1.0 / n_checks) as f32);
            }
        }
    }

    // decoder consistency at P_n, on teacher renders only
    let (l_d_neg, stats, decoder_grads) = match pos_grads {
        None => (
            0.0,
            LayerGradStats {
                cosine: Vec::new(),
                weight: Vec::new(),
            },
            None,
        ),
        Some(g_pos) => {
            let t_n = planar(poses.normal.teacher)?;
            let neg = state.decoder.l1_pass(&t_n, &t_n, false)?;
            let mut stats = per_layer_cosine(
                &state.decoder.layer_vectors(&g_pos),
                &state.decoder.layer_vectors(&neg.param_grads),
            )?;
            if cfg.no_grad_guidance {
                // cosines stay in the log; the weights are forced to one
                stats.weight = LayerGradStats::uniform(stats.weight.len()).weight;
            }
            let combined = combine_decoder_grads(
                &g_pos,
                &neg.param_grads,
                &stats.weight,
                cfg.lambda_pos,
                lambda_neg,
            )?;
            (neg.loss, stats, Some(combined))
        }
    };

    let total = cfg.lambda_kd * l_kd + cfg.lambda_pos * l_d_pos + lambda_neg * l_d_neg;
    check_finite(total, step)?;

    let psnr_check_recovery = if step.is_multiple_of(cfg.log_every) || step + 1 == cfg.steps_embed {
        match &recovery {
            Some(r) => Some(psnr(r, target)?),
            None => None,
        }
    } else {
        None
    };

    // Gaussian update from λ_kd·L_kd + λ_pos·L_d⁺
    let mut grads = alloc::vec![0.0; state.gaussian_params.len()];
    for (cam, g) in &cotangents {
        for (a, b) in
            grads
                .iter_mut()
                .zip(flatten_grads(&render_vjp(&state.student, cam, g, rcfg)?))
        {
            *a += b;
        }
    }
    adam_step(
        core::slice::from_mut(&mut state.gaussian_params),
        &[Tensor::new(&[grads.len()], grads)?],
        &mut state.gaussian_adam,
        cfg.lr_gaussian,
    )?;
    state.student.set_params(state.gaussian_params.data());
    state
        .gaussian_params
        .data_mut()
        .copy_from_slice(&state.student.to_params());

    if let Some(g) = decoder_grads {
        adam_step(
            state.decoder.params_mut(),
            &g,
            &mut state.decoder_adam,
            cfg.lr_decoder,
        )?;
    }
    state.step += 1;

    let mean_w = stats.mean_weight();
    Ok(StepLog {
        step,
        kd_view,
        normal_view,
        l_kd,
        l_d_pos,
        l_d_neg,
        cosines: stats.cosine,
        weights: stats.weight,
        mean_w,
        check_disruption,
        psnr_check_recovery,
    })
}

#[derive(Debug, Clone)]
pub struct EmbedResult {
    pub student: Scene,
    pub decoder: DecoderNet<f32>,
    pub log: Vec<StepLog>,
    /// Set when trained without a decoder; recovery is then the render itself.
    pub no_decoder: bool,
}

impl EmbedResult {
    /// Recovers the hidden image from a check-view render.
    pub fn recover(&self, image: &Image) -> Result<Image> {
        if self.no_decoder {
            Ok(image.clone())
        } else {
            recover(&self.decoder, image)
        }
    }
}

/// Runs the decoder on a rendered (possibly attacked) image.
pub fn recover(decoder: &DecoderNet<f32>, image: &Image) -> Result<Image> {
    decoder.decode(image)
}

/// Embeds `hidden` into a copy of `teacher`, visible from the check view(s)
/// through the jointly trained decoder.
pub fn train_embed(
    teacher: &Scene,
    cameras: &[Camera],
    hidden: &HiddenImage,
    cfg: &TrainConfig,
) -> Result<EmbedResult> {
    cfg.validate(cameras.len())?;
    let first = cameras[0];
    for cam in cameras {
        cam.validate()?;
        if (cam.width, cam.height) != (first.width, first.height) {
            return Err(Error::Camera(
                "embedding cameras must share a resolution".into(),
            ));
        }
    }
    if !cfg.no_decoder && (!first.width.is_multiple_of(4) || !first.height.is_multiple_of(4)) {
        return Err(Error::Shape(format!(
            "render size {}x{} not divisible by 4",
            first.width, first.height
        )));
    }
    let teacher_renders: Vec<Image> = cameras
        .iter()
        .map(|c| render(teacher, c, &cfg.render))
        .collect::<Result<_>>()?;
    let target = hidden.resampled(first.width, first.height);
    let checks = cfg.check_views();
    let normals: Vec<usize> = (0..cameras.len()).filter(|i| !checks.contains(i)).collect();
    let view = |i: usize| PoseView {
        camera: &cameras[i],
        teacher: &teacher_renders[i],
    };

    let mut state = EmbedState::new(teacher, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a09_e667_f3bc_c908);
    let mut log = Vec::with_capacity(cfg.steps_embed);
    for step in 0..cfg.steps_embed {
        let kd = if cfg.kd_check_only {
            checks[step % checks.len()]
        } else {
            step % cameras.len()
        };
        let normal = normals[rng.gen_range(0..normals.len())];
        let check_attack = if cfg.augment_check && !cfg.no_decoder {
            draw_attack(&mut augment_rng, cfg)
        } else {
            None
        };
        let poses = StepPoses {
            kd: view(kd),
            checks: checks.iter().map(|&i| view(i)).collect(),
            normal: view(normal),
            check_attack,
        };
        log.push(embed_step(&mut state, &poses, &target, cfg, (kd, normal))?);
    }
    Ok(EmbedResult {
        student: state.student,
        decoder: state.decoder,
        log,
        no_decoder: cfg.no_decoder,
    })
}
