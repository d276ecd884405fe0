//! Procedural scenes and camera rings, pure functions of their seeds.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{quat_normalize, Quat, Vec3};
use crate::splat::{Camera, Gaussian, Scene};
use crate::{Error, Result};

/// Uniformly distributed unit quaternion (Shoemake's method).
pub fn random_unit_quaternion<R: Rng>(rng: &mut R) -> Quat {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (t2, t3) = (2.0 * PI * u2, 2.0 * PI * u3);
    [b * t3.cos(), a * t2.sin(), a * t2.cos(), b * t3.sin()]
}

/// `n` Gaussians with centers uniform in the cube `[-extent/2, extent/2]³`,
/// per-axis scales log-uniform in `[0.02, 0.08]·extent`, uniform random
/// orientation, opacity logits in `[0, 2]` and color logits in `[-2, 2]`.
/// Background is black.
pub fn generate_scene(seed: u64, n: usize, extent: f64) -> Result<Scene> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "scene needs at least one gaussian".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (0.02 * extent).ln();
    let span = (0.08f64 / 0.02).ln();
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let mut position = [0.0; 3];
        for p in &mut position {
            *p = (rng.gen::<f64>() - 0.5) * extent;
        }
        let mut log_scale = [0.0; 3];
        for s in &mut log_scale {
            *s = lo + rng.gen::<f64>() * span;
        }
        let rotation = random_unit_quaternion(&mut rng);
        let opacity_logit = rng.gen::<f64>() * 2.0;
        let mut rgb = [0.0; 3];
        for c in &mut rgb {
            *c = rng.gen::<f64>() * 4.0 - 2.0;
        }
        gaussians.push(Gaussian {
            position,
            log_scale,
            rotation,
            opacity_logit,
            rgb,
        });
    }
    Ok(Scene::new(gaussians, [0.0; 3]))
}

/// A noisy copy of `scene`, used as a fitting start point: centers jittered
/// by up to `strength·extent` per axis, log-scales by up to `strength`,
/// colors and opacities reset to neutral logits.
pub fn perturb_scene(scene: &Scene, seed: u64, strength: f64, extent: f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    for g in &mut out.gaussians {
        for p in &mut g.position {
            *p += (rng.gen::<f64>() * 2.0 - 1.0) * strength * extent;
        }
        for s in &mut g.log_scale {
            *s += (rng.gen::<f64>() * 2.0 - 1.0) * strength;
        }
        g.rotation = quat_normalize(g.rotation);
        g.opacity_logit = 0.0;
        g.rgb = [0.0; 3];
    }
    out
}

/// Ordered cameras sharing intrinsics, one of which is the check view.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSet {
    pub cameras: Vec<Camera>,
    pub check_index: usize,
}

impl PoseSet {
    pub fn validate(&self) -> Result<()> {
        if self.check_index >= self.cameras.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "check index {} out of range for {} poses",
                self.check_index,
                self.cameras.len()
            )));
        }
        let first = self.cameras[0];
        for cam in &self.cameras {
            cam.validate()?;
            if (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
                != (
                    first.fx,
                    first.fy,
                    first.cx,
                    first.cy,
                    first.width,
                    first.height,
                )
            {
                return Err(Error::Camera("intrinsics differ within a pose set".into()));
            }
        }
        Ok(())
    }

    pub fn check(&self) -> &Camera {
        &self.cameras[self.check_index]
    }

    /// Indices of every pose except the check view.
    pub fn normal_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cameras.len()).filter(move |&i| i != self.check_index)
    }
}

pub const RING_FOV_X: f64 = PI / 3.0;

/// `n_views` cameras equally spaced on a horizontal (z-up) circle around
/// `look_at`, azimuth `2πk/n` measured from +x, 60° horizontal field of view.
pub fn generate_pose_ring(
    n_views: usize,
    radius: f64,
    look_at: Vec3,
    resolution: (usize, usize),
) -> Result<PoseSet> {
    if n_views < 2 {
        return Err(Error::InvalidArgument(
            "pose ring needs at least two views".into(),
        ));
    }
    let cameras = (0..n_views)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / n_views as f64;
            let eye = [
                look_at[0] + radius * theta.cos(),
                look_at[1] + radius * theta.sin(),
                look_at[2],
            ];
            Camera::look_at(
                eye,
                look_at,
                [0.0, 0.0, 1.0],
                RING_FOV_X,
                resolution.0,
                resolution.1,
            )
        })
        .collect();
    let poses = PoseSet {
        cameras,
        check_index: 0,
    };
    poses.validate()?;
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        assert_eq!(
            generate_scene(3, 50, 2.0).unwrap(),
            generate_scene(3, 50, 2.0).unwrap()
        );
        assert_ne!(
            generate_scene(3, 50, 2.0).unwrap(),
            generate_scene(4, 50, 2.0).unwrap()
        );
    }

    #[test]
    fn doubling_extent_doubles_distances() {
        let a = generate_scene(11, 20, 1.5).unwrap();
        let b = generate_scene(11, 20, 3.0).unwrap();
        let dist = |s: &Scene, i: usize, j: usize| {
            let (p, q) = (s.gaussians[i].position, s.gaussians[j].position);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        };
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(dist(&b, i, j), 2.0 * dist(&a, i, j));
            }
        }
    }

    #[test]
    fn sampled_ranges() {
        let s = generate_scene(5, 500, 2.0).unwrap();
        for g in &s.gaussians {
            assert!(g.position.iter().all(|p| p.abs() <= 1.0));
            assert!(g
                .log_scale
                .iter()
                .all(|&l| l >= (0.04f64).ln() - 1e-12 && l <= (0.16f64).ln() + 1e-12));
            assert!((crate::linalg::quat_norm(g.rotation) - 1.0).abs() < 1e-12);
            assert!((0.0..=2.0).contains(&g.opacity_logit));
            assert!(g.rgb.iter().all(|c| (-2.0..=2.0).contains(c)));
        }
        assert!(generate_scene(1, 0, 1.0).is_err());
    }

    #[test]
    fn four_view_ring_azimuths() {
        let ring = generate_pose_ring(4, 3.0, [0.0; 3], (32, 32)).unwrap();
        let expected = [0.0, 90.0, 180.0, 270.0];
        for (cam, want) in ring.cameras.iter().zip(expected) {
            let p = cam.position();
            let az = p[1].atan2(p[0]).to_degrees().rem_euclid(360.0);
            assert!(
                (az - want).abs() < 1e-9 || (az - want).abs() > 360.0 - 1e-9,
                "{az} vs {want}"
            );
        }
        assert_eq!(ring.check_index, 0);
        assert!(generate_pose_ring(1, 3.0, [0.0; 3], (32, 32)).is_err());
    }

    #[test]
    fn ring_cameras_sit_on_the_circle() {
        let target = [0.3, -0.2, 0.5];
        let ring = generate_pose_ring(7, 2.5, target, (24, 16)).unwrap();
        for cam in &ring.cameras {
            let p = cam.position();
            let d = ((p[0] - target[0]).powi(2)
                + (p[1] - target[1]).powi(2)
                + (p[2] - target[2]).powi(2))
            .sqrt();
            assert!((d - 2.5).abs() < 1e-9);
        }
    }
}
