//! Command-line front end. [`run`] never exits the process; it returns the
//! exit code so it can be driven from tests.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use concealgs_core::attacks::AttackSpec;
use concealgs_core::metrics::report;
use concealgs_core::splat::render;
use concealgs_core::train::{pretrain_teacher, train_embed, HiddenImage, TrainConfig};
use serde_json::{json, Map, Value};

use crate::checkpoint::{load_decoder, save_decoder};
use crate::error::{Error, Result};
use crate::eval::{sweep_csv, EvalInputs};
use crate::io::{
    load_poses, load_scene, read_json, read_ppm, save_poses, save_scene, write_bytes, write_json,
    write_ppm,
};
use crate::logs::{write_embed_log, write_teacher_log};
use crate::pipeline::{apply_ablation, run_demo, targets, DemoOptions, SceneSpec};

/// Identifies the `--json` summary layout.
pub const SUMMARY_SCHEMA: &str = "concealgs-cli-summary";
pub const SUMMARY_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "concealgs",
    version,
    about = "Hide an image in a Gaussian splat scene and recover it"
)]
struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a procedural scene and a camera ring.
    Gen(GenArgs),
    /// Fit a teacher scene to target renders.
    Pretrain(PretrainArgs),
    /// Embed a hidden image into a copy of the teacher and train the decoder.
    Embed(EmbedArgs),
    /// Render one pose of a scene to PPM.
    Render(RenderArgs),
    /// Run the decoder on an image.
    Recover(RecoverArgs),
    /// Blur or JPEG-compress an image.
    Attack(AttackArgs),
    /// Rendering-quality report and robustness sweep.
    Eval(EvalArgs),
    /// End-to-end toy run: gen, pretrain, embed, eval.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct SceneArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    gaussians: usize,
    #[arg(long, default_value_t = 2.0)]
    extent: f64,
    /// Gray level of the background.
    #[arg(long, default_value_t = 0.5)]
    background: f64,
    #[arg(long, default_value_t = 20)]
    views: usize,
    #[arg(long, default_value_t = 4.0)]
    radius: f64,
    /// Square render size in pixels.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    check_view: usize,
}

impl SceneArgs {
    fn spec(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            gaussians: self.gaussians,
            extent: self.extent,
            background: [self.background; 3],
            views: self.views,
            radius: self.radius,
            resolution: self.resolution,
            check_view: self.check_view,
            ..SceneSpec::default()
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    scene_out: PathBuf,
    #[arg(long)]
    poses_out: PathBuf,
    /// Also write the perturbed teacher start point.
    #[arg(long)]
    init_out: Option<PathBuf>,
}

/// Training flags shared by `pretrain`, `embed` and `demo`. A `--config`
/// file overrides any flag it names.
#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps_teacher: Option<usize>,
    #[arg(long)]
    steps_embed: Option<usize>,
    #[arg(long)]
    lr_teacher: Option<f64>,
    #[arg(long)]
    lr_gaussian: Option<f64>,
    #[arg(long)]
    lr_decoder: Option<f64>,
    #[arg(long)]
    lambda_pos: Option<f64>,
    #[arg(long)]
    lambda_neg: Option<f64>,
    #[arg(long)]
    lambda_kd: Option<f64>,
    #[arg(long)]
    decoder_width: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Seed for decoder initialization and pose sampling.
    #[arg(long)]
    train_seed: Option<u64>,
    /// Drop a component: decoder, consistency or grad. Repeatable.
    #[arg(long)]
    ablate: Vec<String>,
    /// Train the decoder on clean check-view renders only.
    #[arg(long)]
    no_augment: bool,
}

impl TrainArgs {
    fn config(&self, check_view: usize) -> Result<TrainConfig> {
        let mut cfg = TrainConfig {
            check_view_index: check_view,
            ..TrainConfig::default()
        };
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(
            steps_teacher,
            steps_embed,
            lr_teacher,
            lr_gaussian,
            lr_decoder,
            lambda_pos,
            lambda_neg,
            lambda_kd,
            decoder_width,
            log_every
        );
        if let Some(s) = self.train_seed {
            cfg.seed = s;
        }
        cfg.augment_check &= !self.no_augment;
        for a in &self.ablate {
            apply_ablation(&mut cfg, a)?;
        }
        if let Some(path) = &self.config {
            cfg = merge_config(&cfg, path)?;
        }
        Ok(cfg)
    }
}

/// Fields present in the JSON file replace the corresponding flag values.
fn merge_config(base: &TrainConfig, path: &Path) -> Result<TrainConfig> {
    let overrides: Value = read_json(path)?;
    let Value::Object(overrides) = overrides else {
        return Err(Error::format(path, "config must be a JSON object"));
    };
    let Value::Object(mut merged) = serde_json::to_value(base)? else {
        unreachable!("config serializes to an object")
    };
    for (k, v) in overrides {
        merged.insert(k, v);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Starting scene.
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    /// Scene whose renders are the targets.
    #[arg(long, conflicts_with = "targets")]
    target_scene: Option<PathBuf>,
    /// Directory of `view_<i>.ppm` target images, one per pose.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct HiddenArgs {
    /// Hidden image (PPM); resampled to 64×64.
    #[arg(long, conflicts_with = "hidden_seed")]
    hidden: Option<PathBuf>,
    /// Use the procedural hidden pattern with this seed.
    #[arg(long, default_value_t = 0)]
    hidden_seed: u64,
}

impl HiddenArgs {
    fn load(&self) -> Result<HiddenImage> {
        match &self.hidden {
            Some(p) => Ok(HiddenImage::ingest(&read_ppm(p)?)),
            None => Ok(HiddenImage::pattern(self.hidden_seed)),
        }
    }
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[command(flatten)]
    hidden: HiddenArgs,
    /// Check view; defaults to the pose file's check index.
    #[arg(long)]
    check_view: Option<usize>,
    #[arg(long)]
    out_scene: PathBuf,
    #[arg(long)]
    out_decoder: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    /// Pose index; defaults to the check view.
    #[arg(long)]
    view: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    #[arg(long)]
    decoder: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Image to score the recovery against.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Gaussian blur standard deviation in pixels.
    #[arg(long, conflicts_with = "jpeg", required_unless_present = "jpeg")]
    blur: Option<f64>,
    /// JPEG ratio in (0, 1]; quality is round(100·ratio).
    #[arg(long)]
    jpeg: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    student: PathBuf,
    /// Omit to evaluate a decoder-free run.
    #[arg(long)]
    decoder: Option<PathBuf>,
    #[arg(long)]
    poses: PathBuf,
    #[command(flatten)]
    hidden: HiddenArgs,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    sweep: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    hidden: HiddenArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also run the consistency, gradient-guidance and decoder ablations.
    #[arg(long)]
    ablations: bool,
    #[command(flatten)]
    train: TrainArgs,
}

/// What a successful command reports.
struct Outcome {
    lines: Vec<String>,
    outputs: Map<String, Value>,
    metrics: Map<String, Value>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            outputs: Map::new(),
            metrics: Map::new(),
        }
    }

    fn output(&mut self, name: &str, path: &Path) {
        self.outputs
            .insert(name.into(), json!(path.display().to_string()));
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), json!(value));
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Pretrain(_) => "pretrain",
        Command::Embed(_) => "embed",
        Command::Render(_) => "render",
        Command::Recover(_) => "recover",
        Command::Attack(_) => "attack",
        Command::Eval(_) => "eval",
        Command::Demo(_) => "demo",
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 for usage errors, 2 for failures.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            let _ = writeln!(stderr, "{line}");
            return 1;
        }
    };
    let name = command_name(&cli.command);
    match execute(&cli.command) {
        Ok(out) => {
            if cli.json {
                let summary = json!({
                    "schema": SUMMARY_SCHEMA,
                    "version": SUMMARY_VERSION,
                    "command": name,
                    "ok": true,
                    "outputs": out.outputs,
                    "metrics": out.metrics,
                });
                let _ = writeln!(stdout, "{summary}");
            } else {
                for l in &out.lines {
                    let _ = writeln!(stdout, "{l}");
                }
            }
            0
        }
        Err(e) => {
            let code = e.exit_code();
            let _ = writeln!(stderr, "error: {}", e.to_string().replace('\n', " "));
            if cli.json {
                let summary = json!({
                    "schema": SUMMARY_SCHEMA,
                    "version": SUMMARY_VERSION,
                    "command": name,
                    "ok": false,
                    "error": e.to_string(),
                    "exit_code": code,
                });
                let _ = writeln!(stdout, "{summary}");
            }
            code
        }
    }
}

fn execute(cmd: &Command) -> Result<Outcome> {
    let mut out = Outcome::new();
    match cmd {
        Command::Gen(a) => {
            let spec = a.scene.spec();
            let gt = spec.ground_truth()?;
            save_scene(&a.scene_out, &gt)?;
            save_poses(&a.poses_out, &spec.poses()?)?;
            out.output("scene", &a.scene_out);
            out.output("poses", &a.poses_out);
            if let Some(p) = &a.init_out {
                save_scene(p, &spec.teacher_init(&gt))?;
                out.output("init", p);
            }
            out.lines.push(format!(
                "wrote {} gaussians and {} poses",
                gt.len(),
                spec.views
            ));
        }
        Command::Pretrain(a) => {
            let poses = load_poses(&a.poses)?;
            let cfg = a.train.config(poses.check_index)?;
            let views = match (&a.target_scene, &a.targets) {
                (Some(s), _) => targets(&load_scene(s)?, &poses, &cfg)?,
                (None, Some(dir)) => poses
                    .cameras
                    .iter()
                    .enumerate()
                    .map(|(i, c)| Ok((*c, read_ppm(&dir.join(format!("view_{i:03}.ppm")))?)))
                    .collect::<Result<_>>()?,
                (None, None) => {
                    return Err(Error::Usage(
                        "one of --target-scene or --targets is required".into(),
                    ))
                }
            };
            let r = pretrain_teacher(&load_scene(&a.init)?, &views, &cfg)?;
            save_scene(&a.out, &r.scene)?;
            out.output("teacher", &a.out);
            if let Some(p) = &a.log {
                write_teacher_log(p, &r.log)?;
                out.output("log", p);
            }
            out.metric("train_psnr", r.train_psnr);
            out.lines.push(format!(
                "teacher train PSNR {:.2} dB after {} steps",
                r.train_psnr, cfg.steps_teacher
            ));
        }
        Command::Embed(a) => {
            let poses = load_poses(&a.poses)?;
            let cfg = a.train.config(a.check_view.unwrap_or(poses.check_index))?;
            let hidden = a.hidden.load()?;
            let r = train_embed(&load_scene(&a.teacher)?, &poses.cameras, &hidden, &cfg)?;
            save_scene(&a.out_scene, &r.student)?;
            save_decoder(&a.out_decoder, &r.decoder)?;
            out.output("student", &a.out_scene);
            out.output("decoder", &a.out_decoder);
            if let Some(p) = &a.log {
                write_embed_log(p, &r.log)?;
                out.output("log", p);
            }
            if let Some(p) = r.log.iter().rev().find_map(|l| l.psnr_check_recovery) {
                out.metric("psnr_check_recovery", p);
                out.lines.push(format!(
                    "check-view recovery PSNR {p:.2} dB after {} steps",
                    cfg.steps_embed
                ));
            }
        }
        Command::Render(a) => {
            let poses = load_poses(&a.poses)?;
            let i = a.view.unwrap_or(poses.check_index);
            let cam = poses.cameras.get(i).ok_or_else(|| {
                Error::Usage(format!(
                    "view {i} out of range for {} poses",
                    poses.cameras.len()
                ))
            })?;
            let img = render(&load_scene(&a.scene)?, cam, &Default::default())?;
            write_ppm(&a.out, &img)?;
            out.output("image", &a.out);
            out.lines
                .push(format!("rendered view {i} to {}", a.out.display()));
        }
        Command::Recover(a) => {
            let img = read_ppm(&a.image)?;
            let rec = load_decoder(&a.decoder)?.decode(&img)?;
            write_ppm(&a.out, &rec)?;
            out.output("image", &a.out);
            if let Some(r) = &a.reference {
                let reference = read_ppm(r)?;
                let m = report(&rec, &reference.resize_bilinear(rec.width(), rec.height()))?;
                out.metric("psnr", m.psnr);
                out.metric("ssim", m.ssim);
                out.lines.push(format!(
                    "recovered: PSNR {:.2} dB, SSIM {:.4}",
                    m.psnr, m.ssim
                ));
            }
        }
        Command::Attack(a) => {
            let spec = match (a.blur, a.jpeg) {
                (Some(sigma), _) => AttackSpec::GaussianBlur { sigma },
                (None, Some(ratio)) => AttackSpec::Jpeg { ratio },
                (None, None) => {
                    return Err(Error::Usage("one of --blur or --jpeg is required".into()))
                }
            };
            spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
            let img = read_ppm(&a.image)?;
            let attacked = spec.apply(&img)?;
            write_ppm(&a.out, &attacked)?;
            out.output("image", &a.out);
            out.metric("psnr", concealgs_core::metrics::psnr(&attacked, &img)?);
        }
        Command::Eval(a) => {
            let (gt, teacher, student) = (
                load_scene(&a.ground_truth)?,
                load_scene(&a.teacher)?,
                load_scene(&a.student)?,
            );
            let decoder = a.decoder.as_deref().map(load_decoder).transpose()?;
            let poses = load_poses(&a.poses)?;
            let hidden = a.hidden.load()?;
            let inputs = EvalInputs {
                ground_truth: &gt,
                teacher: &teacher,
                student: &student,
                decoder: decoder.as_ref(),
                poses: &poses,
                hidden: &hidden,
                render: Default::default(),
            };
            let rep = inputs.report()?;
            write_json(&a.report, &rep)?;
            out.output("report", &a.report);
            if let Some(p) = &a.sweep {
                write_bytes(p, &sweep_csv(&inputs.robustness_sweep()?)?)?;
                out.output("sweep", p);
            }
            report_metrics(&mut out, &rep);
        }
        Command::Demo(a) => {
            let spec = a.scene.spec();
            let train = a.train.config(spec.check_view)?;
            let hidden = a.hidden.load()?;
            let summary = run_demo(&DemoOptions {
                scene: spec,
                train,
                hidden,
                out: a.out.clone(),
                ablations: a.ablations,
            })?;
            out.output("dir", &a.out);
            out.metric("teacher_train_psnr", summary.teacher_train_psnr);
            report_metrics(&mut out, &summary.report);
            for (name, r) in &summary.ablations {
                out.metric(
                    &format!("ablation_{name}_student_psnr"),
                    r.scene.student.psnr,
                );
                out.metric(&format!("ablation_{name}_hidden_psnr"), r.hidden.psnr);
                out.lines.push(format!(
                    "ablation {name}: normal-view PSNR {:.2} dB, recovery PSNR {:.2} dB",
                    r.scene.student.psnr, r.hidden.psnr
                ));
            }
        }
    }
    Ok(out)
}

fn report_metrics(out: &mut Outcome, r: &crate::eval::EvalReport) {
    out.metric("teacher_psnr", r.scene.teacher.psnr);
    out.metric("student_psnr", r.scene.student.psnr);
    out.metric("psnr_drop", r.scene.psnr_drop);
    out.metric("hidden_psnr", r.hidden.psnr);
    out.metric("hidden_ssim", r.hidden.ssim);
    out.lines.push(format!(
        "normal views: teacher {:.2} dB, student {:.2} dB (drop {:.2} dB); hidden recovery {:.2} dB / SSIM {:.4}",
        r.scene.teacher.psnr, r.scene.student.psnr, r.scene.psnr_drop, r.hidden.psnr, r.hidden.ssim
    ));
}
