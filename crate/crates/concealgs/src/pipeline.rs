//! The end-to-end toy run: generate, pretrain, embed, evaluate.

use std::path::{Path, PathBuf};

use concealgs_core::scene_gen::{generate_pose_ring, generate_scene, perturb_scene, PoseSet};
use concealgs_core::splat::{render, Scene};
use concealgs_core::train::{
    pretrain_teacher, train_embed, EmbedResult, HiddenImage, TeacherResult, TrainConfig,
};
use concealgs_core::Image;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_decoder;
use crate::error::Result;
use crate::eval::{sweep_csv, EvalInputs, EvalReport};
use crate::io::{save_poses, save_scene, write_bytes, write_json, write_ppm};
use crate::logs::{write_embed_log, write_teacher_log};

/// Scene and camera-ring parameters of the toy setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub gaussians: usize,
    pub extent: f64,
    pub background: [f64; 3],
    pub views: usize,
    pub radius: f64,
    pub resolution: usize,
    pub check_view: usize,
    /// Jitter applied to the ground truth to get the teacher's start point.
    pub init_perturbation: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            gaussians: 200,
            extent: 2.0,
            background: [0.5; 3],
            views: 20,
            radius: 4.0,
            resolution: 64,
            check_view: 0,
            init_perturbation: 0.05,
        }
    }
}

impl SceneSpec {
    pub fn ground_truth(&self) -> Result<Scene> {
        let mut scene = generate_scene(self.seed, self.gaussians, self.extent)?;
        scene.background = self.background;
        Ok(scene)
    }

    pub fn poses(&self) -> Result<PoseSet> {
        let mut poses = generate_pose_ring(
            self.views,
            self.radius,
            [0.0; 3],
            (self.resolution, self.resolution),
        )?;
        poses.check_index = self.check_view;
        poses.validate()?;
        Ok(poses)
    }

    pub fn teacher_init(&self, ground_truth: &Scene) -> Scene {
        perturb_scene(
            ground_truth,
            self.seed.wrapping_add(1),
            self.init_perturbation,
            self.extent,
        )
    }
}

/// Renders every pose of `scene` as a training target.
pub fn targets(
    scene: &Scene,
    poses: &PoseSet,
    cfg: &TrainConfig,
) -> Result<Vec<(concealgs_core::splat::Camera, Image)>> {
    poses
        .cameras
        .iter()
        .map(|c| Ok((*c, render(scene, c, &cfg.render)?)))
        .collect()
}

/// Ablation names accepted by `--ablate`, applied to a config.
pub fn apply_ablation(cfg: &mut TrainConfig, name: &str) -> Result<()> {
    match name {
        "decoder" => cfg.no_decoder = true,
        "consistency" => cfg.no_consistency = true,
        "grad" => cfg.no_grad_guidance = true,
        other => {
            return Err(crate::Error::Usage(format!(
                "unknown ablation {other:?} (expected decoder, consistency or grad)"
            )))
        }
    }
    Ok(())
}

pub struct DemoOptions {
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub hidden: HiddenImage,
    pub out: PathBuf,
    pub ablations: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoSummary {
    pub teacher_train_psnr: f64,
    pub report: EvalReport,
    pub ablations: Vec<(String, EvalReport)>,
}

/// Writes the artifacts of one embedding run into `dir` and returns its report.
pub fn write_embedding(
    dir: &Path,
    ground_truth: &Scene,
    teacher: &Scene,
    poses: &PoseSet,
    hidden: &HiddenImage,
    cfg: &TrainConfig,
    result: &EmbedResult,
) -> Result<EvalReport> {
    save_scene(&dir.join("student.json"), &result.student)?;
    save_decoder(&dir.join("decoder.ckpt"), &result.decoder)?;
    write_embed_log(&dir.join("embed_log.csv"), &result.log)?;
    let inputs = EvalInputs {
        ground_truth,
        teacher,
        student: &result.student,
        decoder: (!result.no_decoder).then_some(&result.decoder),
        poses,
        hidden,
        render: cfg.render,
    };
    let report = inputs.report()?;
    write_json(&dir.join("report.json"), &report)?;
    write_bytes(
        &dir.join("robustness.csv"),
        &sweep_csv(&inputs.robustness_sweep()?)?,
    )?;
    let check = render(&result.student, poses.check(), &cfg.render)?;
    write_ppm(&dir.join("check_view.ppm"), &check)?;
    write_ppm(&dir.join("recovered.ppm"), &result.recover(&check)?)?;
    Ok(report)
}

pub fn run_demo(opts: &DemoOptions) -> Result<DemoSummary> {
    let mut cfg = opts.train.clone();
    cfg.check_view_index = opts.scene.check_view;
    let out = &opts.out;
    let gt = opts.scene.ground_truth()?;
    let poses = opts.scene.poses()?;
    write_json(&out.join("demo_config.json"), &(&opts.scene, &cfg))?;
    save_scene(&out.join("ground_truth.json"), &gt)?;
    save_poses(&out.join("poses.json"), &poses)?;
    write_ppm(&out.join("hidden.ppm"), opts.hidden.image())?;

    let TeacherResult {
        scene: teacher,
        log,
        train_psnr,
    } = pretrain_teacher(
        &opts.scene.teacher_init(&gt),
        &targets(&gt, &poses, &cfg)?,
        &cfg,
    )?;
    save_scene(&out.join("teacher.json"), &teacher)?;
    write_teacher_log(&out.join("teacher_log.csv"), &log)?;

    let result = train_embed(&teacher, &poses.cameras, &opts.hidden, &cfg)?;
    let report = write_embedding(out, &gt, &teacher, &poses, &opts.hidden, &cfg, &result)?;

    let mut ablations = Vec::new();
    if opts.ablations {
        for name in ["consistency", "grad", "decoder"] {
            let mut acfg = cfg.clone();
            apply_ablation(&mut acfg, name)?;
            let r = train_embed(&teacher, &poses.cameras, &opts.hidden, &acfg)?;
            let dir = out.join(format!("ablation_{name}"));
            ablations.push((
                name.to_string(),
                write_embedding(&dir, &gt, &teacher, &poses, &opts.hidden, &acfg, &r)?,
            ));
        }
    }
    Ok(DemoSummary {
        teacher_train_psnr: train_psnr,
        report,
        ablations,
    })
}
