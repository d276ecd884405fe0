//! Rendering-quality and hidden-recovery report, robustness sweep and the
//! LSB comparison.

use concealgs_core::attacks::AttackSpec;
use concealgs_core::decoder::DecoderNet;
use concealgs_core::lsb::{lsb_embed, lsb_extract, lsb_extract_raw, quantize_image};
use concealgs_core::metrics::{report, MetricReport};
use concealgs_core::scene_gen::PoseSet;
use concealgs_core::splat::{render, RenderConfig, Scene};
use concealgs_core::train::HiddenImage;
use concealgs_core::Image;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const REPORT_VERSION: u32 = 1;
pub const BLUR_SIGMAS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];
pub const JPEG_RATIOS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
/// Side length the hidden image is reduced to for the LSB baseline on a 64×64
/// cover. Smaller covers use half their shorter side.
pub const LSB_HIDDEN_SIZE: usize = 32;
pub const LSB_BITS: u8 = 4;
pub const LSB_JPEG_RATIO: f64 = 0.8;

/// What is needed to evaluate one embedding run.
pub struct EvalInputs<'a> {
    /// Scene whose renders are the ground truth.
    pub ground_truth: &'a Scene,
    pub teacher: &'a Scene,
    pub student: &'a Scene,
    /// `None` when the run had no decoder; recovery is then the render.
    pub decoder: Option<&'a DecoderNet<f32>>,
    pub poses: &'a PoseSet,
    pub hidden: &'a HiddenImage,
    pub render: RenderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneQuality {
    pub teacher: MetricReport,
    pub student: MetricReport,
    /// Student normal-view renders passed through the decoder.
    pub student_decoded: MetricReport,
    /// Teacher PSNR minus student PSNR, averaged over normal views.
    pub psnr_drop: f64,
    pub ssim_drop: f64,
    pub lpips: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsbComparison {
    pub bits: u8,
    pub hidden_size: usize,
    pub jpeg_ratio: f64,
    /// Unattacked extraction equals the 8-bit hidden image.
    pub unattacked_exact: bool,
    /// LSB recovery after JPEG, reading the payload at known geometry.
    pub lsb_attacked_psnr: f64,
    /// Decoder recovery from the same attacked stego image.
    pub concealgs_attacked_psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub check_view: usize,
    pub normal_views: usize,
    pub scene: SceneQuality,
    pub hidden: MetricReport,
    /// Mean absolute student/teacher difference at the check view.
    pub check_disruption: f64,
    /// Mean absolute `|F(x) − x|` over teacher renders of the normal views.
    pub normal_identity_error: f64,
    pub lsb: LsbComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub attack: String,
    pub param: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn recover(decoder: Option<&DecoderNet<f32>>, img: &Image) -> Result<Image> {
    Ok(match decoder {
        Some(d) => d.decode(img)?,
        None => img.clone(),
    })
}

fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    MetricReport {
        psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}

impl EvalInputs<'_> {
    fn check_render(&self) -> Result<Image> {
        Ok(render(self.student, self.poses.check(), &self.render)?)
    }

    fn target(&self) -> Image {
        let cam = self.poses.check();
        self.hidden.resampled(cam.width, cam.height)
    }

    pub fn report(&self) -> Result<EvalReport> {
        let (mut teacher, mut student, mut decoded) = (Vec::new(), Vec::new(), Vec::new());
        let mut identity = 0.0;
        let normals: Vec<usize> = self.poses.normal_indices().collect();
        for &i in &normals {
            let cam = &self.poses.cameras[i];
            let gt = render(self.ground_truth, cam, &self.render)?;
            let t = render(self.teacher, cam, &self.render)?;
            teacher.push(report(&t, &gt)?);
            let s = render(self.student, cam, &self.render)?;
            student.push(report(&s, &gt)?);
            decoded.push(report(&recover(self.decoder, &s)?, &gt)?);
            identity += recover(self.decoder, &t)?.mean_abs_diff(&t)? / normals.len() as f64;
        }
        let (teacher, student) = (mean_report(&teacher), mean_report(&student));

        let check = self.check_render()?;
        let target = self.target();
        let hidden = report(&recover(self.decoder, &check)?, &target)?;
        let check_disruption =
            check.mean_abs_diff(&render(self.teacher, self.poses.check(), &self.render)?)?;
        Ok(EvalReport {
            version: REPORT_VERSION,
            check_view: self.poses.check_index,
            normal_views: normals.len(),
            scene: SceneQuality {
                psnr_drop: teacher.psnr - student.psnr,
                ssim_drop: teacher.ssim - student.ssim,
                teacher,
                student,
                student_decoded: mean_report(&decoded),
                lpips: "n/a".into(),
            },
            hidden,
            check_disruption,
            normal_identity_error: identity,
            lsb: self.lsb_comparison(&check, &target)?,
        })
    }

    fn lsb_comparison(&self, check: &Image, target: &Image) -> Result<LsbComparison> {
        let side = LSB_HIDDEN_SIZE.min(check.width().min(check.height()) / 2);
        let small = self.hidden.resampled(side, side);
        let stego = lsb_embed(check, &small, LSB_BITS)?;
        let quantized = Image::from_vec(
            side,
            side,
            quantize_image(&small)
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
        )?;
        let unattacked_exact = lsb_extract(&stego)
            .map(|img| img == quantized)
            .unwrap_or(false);
        let attacked = AttackSpec::Jpeg {
            ratio: LSB_JPEG_RATIO,
        }
        .apply(&stego)?;
        let lsb_out = lsb_extract_raw(&attacked, LSB_BITS, side, side)?;
        Ok(LsbComparison {
            bits: LSB_BITS,
            hidden_size: side,
            jpeg_ratio: LSB_JPEG_RATIO,
            unattacked_exact,
            lsb_attacked_psnr: concealgs_core::metrics::psnr(&lsb_out, &small)?,
            concealgs_attacked_psnr: concealgs_core::metrics::psnr(
                &recover(self.decoder, &attacked)?,
                target,
            )?,
        })
    }

    /// Recovery quality at the check view after each attack in the grid.
    pub fn robustness_sweep(&self) -> Result<Vec<SweepRow>> {
        let check = self.check_render()?;
        let target = self.target();
        let attacks = BLUR_SIGMAS
            .iter()
            .map(|&sigma| ("gaussian_blur", sigma, AttackSpec::GaussianBlur { sigma }))
            .chain(
                JPEG_RATIOS
                    .iter()
                    .rev()
                    .map(|&ratio| ("jpeg", ratio, AttackSpec::Jpeg { ratio })),
            );
        let mut rows = Vec::new();
        for (name, param, spec) in attacks {
            let r = report(&recover(self.decoder, &spec.apply(&check)?)?, &target)?;
            rows.push(SweepRow {
                attack: name.into(),
                param,
                psnr: r.psnr,
                ssim: r.ssim,
            });
        }
        Ok(rows)
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| crate::error::Error::Usage(format!("csv buffer: {e}")))
}
