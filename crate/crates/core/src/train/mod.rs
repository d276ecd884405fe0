//! Teacher pretraining and joint student/decoder embedding.

mod embed;
mod teacher;

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::splat::RenderConfig;
use crate::{Error, Image, Result};

pub use embed::{
    combine_decoder_grads, embed_step, recover, train_embed, EmbedResult, EmbedState, PoseView,
    StepLog, StepPoses,
};
pub use teacher::{pretrain_teacher, TeacherLog, TeacherResult};

/// Side length of the hidden image.
pub const HIDDEN_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub steps_teacher: usize,
    pub steps_embed: usize,
    /// Adam learning rate for the student's Gaussians during embedding.
    pub lr_gaussian: f64,
    /// Adam learning rate for the teacher's Gaussians during pretraining.
    pub lr_teacher: f64,
    pub lr_decoder: f64,
    pub lambda_pos: f64,
    pub lambda_neg: f64,
    pub lambda_kd: f64,
    pub check_view_index: usize,
    /// Further check views; the hidden-image loss is averaged over all.
    pub extra_check_views: Vec<usize>,
    pub no_decoder: bool,
    pub no_consistency: bool,
    pub no_grad_guidance: bool,
    /// Restricts the distillation loss to the check pose instead of cycling
    /// over every pose.
    pub kd_check_only: bool,
    pub decoder_width: usize,
    /// Feed the decoder a randomly attacked check-view render: clean with
    /// probability `augment_clean`, otherwise blurred or JPEG-compressed
    /// with equal odds.
    pub augment_check: bool,
    /// Probability that an augmented step still sees the clean render.
    pub augment_clean: f64,
    /// Largest blur sigma (px) drawn for augmentation.
    pub augment_max_blur: f64,
    /// Smallest JPEG ratio drawn for augmentation.
    pub augment_min_jpeg: f64,
    /// Upper bound on the mean absolute check-view change the run is
    /// expected to respect.
    pub disruption_budget: f64,
    /// Recovery PSNR is logged every `log_every` steps.
    pub log_every: usize,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps_teacher: 3000,
            steps_embed: 4000,
            lr_gaussian: 1e-4,
            lr_teacher: 1e-2,
            lr_decoder: 1e-3,
            lambda_pos: 1.0,
            lambda_neg: 1.0,
            lambda_kd: 5.0,
            check_view_index: 0,
            extra_check_views: Vec::new(),
            no_decoder: false,
            no_consistency: false,
            no_grad_guidance: false,
            kd_check_only: false,
            decoder_width: 16,
            augment_check: true,
            augment_clean: 0.8,
            augment_max_blur: 1.0,
            augment_min_jpeg: 0.5,
            disruption_budget: 0.05,
            log_every: 100,
            seed: 0,
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_views: usize) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArgument(msg));
        for (name, lr) in [
            ("lr_gaussian", self.lr_gaussian),
            ("lr_teacher", self.lr_teacher),
            ("lr_decoder", self.lr_decoder),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, l) in [
            ("lambda_pos", self.lambda_pos),
            ("lambda_neg", self.lambda_neg),
            ("lambda_kd", self.lambda_kd),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("{name} must be non-negative, got {l}"));
            }
        }
        for &i in core::iter::once(&self.check_view_index).chain(&self.extra_check_views) {
            if i >= n_views {
                return bad(format!("check view {i} out of range for {n_views} poses"));
            }
        }
        if self.check_views().len() >= n_views {
            return bad("at least one normal (non-check) view is required".into());
        }
        if self.decoder_width < 4 {
            return bad(format!("decoder width {} below 4", self.decoder_width));
        }
        if !(0.0..=1.0).contains(&self.augment_clean) {
            return bad(format!(
                "augment_clean must lie in [0, 1], got {}",
                self.augment_clean
            ));
        }
        if !(self.augment_max_blur >= 0.0 && self.augment_max_blur.is_finite()) {
            return bad(format!(
                "augment_max_blur must be finite and >= 0, got {}",
                self.augment_max_blur
            ));
        }
        if !(self.augment_min_jpeg > 0.0 && self.augment_min_jpeg <= 1.0) {
            return bad(format!(
                "augment_min_jpeg must lie in (0, 1], got {}",
                self.augment_min_jpeg
            ));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        Ok(())
    }

    /// Check-view indices, deduplicated, primary first.
    pub fn check_views(&self) -> Vec<usize> {
        let mut v = alloc::vec![self.check_view_index];
        for &i in &self.extra_check_views {
            if !v.contains(&i) {
                v.push(i);
            }
        }
        v
    }

    /// Effective weight of the decoder-consistency loss.
    pub fn effective_lambda_neg(&self) -> f64 {
        if self.no_consistency {
            0.0
        } else {
            self.lambda_neg
        }
    }
}

/// The 64×64 image to embed.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenImage(Image);

impl HiddenImage {
    /// Accepts an image of any size, resampling to 64×64 and clamping to `[0, 1]`.
    pub fn ingest(img: &Image) -> Self {
        Self(img.resize_bilinear(HIDDEN_SIZE, HIDDEN_SIZE).clamped())
    }

    /// Requires an exact 64×64 image with values in `[0, 1]`.
    pub fn new(img: Image) -> Result<Self> {
        if img.dims() != (HIDDEN_SIZE, HIDDEN_SIZE) {
            return Err(Error::Shape(format!(
                "hidden image must be 64x64, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "hidden image values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self(img))
    }

    /// A seeded picture of soft discs over a two-tone diagonal background.
    pub fn pattern(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bg: [[f64; 3]; 2] =
            core::array::from_fn(|_| core::array::from_fn(|_| rng.gen_range(0.1..0.9)));
        let discs: Vec<([f64; 2], f64, [f64; 3])> = (0..4)
            .map(|_| {
                let c = [rng.gen_range(10.0..54.0), rng.gen_range(10.0..54.0)];
                (
                    c,
                    rng.gen_range(6.0..14.0),
                    core::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                )
            })
            .collect();
        let img = Image::from_fn(HIDDEN_SIZE, HIDDEN_SIZE, |x, y| {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut px = if fx + fy < HIDDEN_SIZE as f64 {
                bg[0]
            } else {
                bg[1]
            };
            for (c, r, col) in &discs {
                let d = ((fx - c[0]).powi(2) + (fy - c[1]).powi(2)).sqrt();
                let t = (r - d).clamp(0.0, 1.0);
                for k in 0..3 {
                    px[k] = px[k] * (1.0 - t) + col[k] * t;
                }
            }
            px
        });
        Self(img)
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    /// Bilinear resample to a render resolution.
    pub fn resampled(&self, width: usize, height: usize) -> Image {
        self.0.resize_bilinear(width, height)
    }
}

/// `sign(a − b) / n`, the gradient of the mean absolute error with respect to `a`.
pub(crate) fn l1_grad(a: &Image, b: &Image, scale: f64) -> Image {
    let n = a.data().len() as f64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            if x > y {
                scale / n
            } else if x < y {
                -scale / n
            } else {
                0.0
            }
        })
        .collect();
    Image::from_vec(a.width(), a.height(), data).expect("same dimensions")
}

pub(crate) fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step })
    }
}
