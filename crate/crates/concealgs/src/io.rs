//! Scene and pose JSON, binary PPM images.

use std::fs;
use std::path::Path;

use concealgs_core::linalg::{Mat3, Quat, Vec3};
use concealgs_core::scene_gen::PoseSet;
use concealgs_core::splat::{Camera, Gaussian, Scene};
use concealgs_core::Image;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCENE_VERSION: u32 = 1;
pub const POSES_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRecord {
    pos: Vec3,
    log_scale: Vec3,
    quat: Quat,
    opacity_logit: f64,
    rgb: Vec3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    background: Vec3,
    gaussians: Vec<GaussianRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    /// World-to-camera rotation, row-major.
    rotation: Mat3,
    translation: Vec3,
    near: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PosesFile {
    version: u32,
    check_index: usize,
    cameras: Vec<CameraRecord>,
}

/// Serializes to pretty JSON. Floats use the shortest representation that
/// parses back to the same `f64`.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, to_json_string(value)?.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_finite(path: &Path, what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::format(
            path,
            format!("{what} contains a non-finite value"),
        ))
    }
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    let file = SceneFile {
        version: SCENE_VERSION,
        background: scene.background,
        gaussians: scene
            .gaussians
            .iter()
            .map(|g| GaussianRecord {
                pos: g.position,
                log_scale: g.log_scale,
                quat: g.rotation,
                opacity_logit: g.opacity_logit,
                rgb: g.rgb,
            })
            .collect(),
    };
    to_json_string(&file)
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    if !scene
        .to_params()
        .iter()
        .chain(&scene.background)
        .all(|v| v.is_finite())
    {
        return Err(Error::Usage(
            "refusing to save a scene with non-finite parameters".into(),
        ));
    }
    write_bytes(path, scene_to_json(scene)?.as_bytes())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let file: SceneFile = read_json(path)?;
    if file.version != SCENE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported scene version {}", file.version),
        ));
    }
    check_finite(path, "background", &file.background)?;
    let gaussians = file
        .gaussians
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let g = Gaussian {
                position: r.pos,
                log_scale: r.log_scale,
                rotation: r.quat,
                opacity_logit: r.opacity_logit,
                rgb: r.rgb,
            };
            check_finite(path, &format!("gaussian {i}"), &g.to_params())?;
            if g.rotation.iter().all(|&q| q == 0.0) {
                return Err(Error::format(
                    path,
                    format!("gaussian {i} has a zero quaternion"),
                ));
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    Ok(Scene::new(gaussians, file.background))
}

pub fn save_poses(path: &Path, poses: &PoseSet) -> Result<()> {
    let file = PosesFile {
        version: POSES_VERSION,
        check_index: poses.check_index,
        cameras: poses
            .cameras
            .iter()
            .map(|c| CameraRecord {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
                rotation: c.rotation,
                translation: c.translation,
                near: c.near,
            })
            .collect(),
    };
    write_json(path, &file)
}

pub fn load_poses(path: &Path) -> Result<PoseSet> {
    let file: PosesFile = read_json(path)?;
    if file.version != POSES_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported pose version {}", file.version),
        ));
    }
    if file.cameras.is_empty() {
        return Err(Error::format(path, "pose set has no cameras"));
    }
    let cameras = file
        .cameras
        .into_iter()
        .map(|r| Camera {
            fx: r.fx,
            fy: r.fy,
            cx: r.cx,
            cy: r.cy,
            width: r.width,
            height: r.height,
            rotation: r.rotation,
            translation: r.translation,
            near: r.near,
        })
        .collect();
    let poses = PoseSet {
        cameras,
        check_index: file.check_index,
    };
    poses
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(poses)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM bytes: `P6\n{w} {h}\n255\n`, then RGB row-major, each value
/// quantized to `round(255·x)` after clamping to `[0, 1]`.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| to_byte(v)));
    out
}

/// Parses a binary PPM with maxval 255. Comments (`#` to end of line) are
/// accepted between header fields.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "header is not ASCII")?);
    }
    if fields[0] != "P6" {
        return Err(format!("unsupported magic {:?}, expected P6", fields[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} {s:?}"));
    let (w, h, maxval) = (
        num(fields[1], "width")?,
        num(fields[2], "height")?,
        num(fields[3], "maxval")?,
    );
    if maxval != 255 {
        return Err(format!(
            "unsupported maxval {maxval}, only 255 is supported"
        ));
    }
    if w == 0 || h == 0 {
        return Err("zero-sized image".into());
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("truncated header".into());
    }
    let raster = &bytes[pos + 1..];
    let n = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(3))
        .ok_or("image too large")?;
    if raster.len() < n {
        return Err(format!("truncated payload: {} of {n} bytes", raster.len()));
    }
    let data = raster[..n].iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_vec(w, h, data).map_err(|e| e.to_string())
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|m| Error::format(path, m))
}
