use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Camera, Scene, SceneError, Vec3};

/// Camera placement policy for [`generate_camera_rig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RigPolicy {
    /// Positions uniform in the scene bounds shrunk by `margin` (a fraction
    /// of each extent); targets area-uniform on the geometry.
    Interior { margin: f64, fov_deg: f64 },
    /// Positions on a cap around `normal` through the bounds center at
    /// distance `[min_distance, max_distance]` and at most `max_angle_deg`
    /// off-axis; targets jittered around the center by `target_jitter`.
    Facing {
        normal: [f64; 3],
        min_distance: f64,
        max_distance: f64,
        max_angle_deg: f64,
        target_jitter: f64,
        fov_deg: f64,
    },
}

impl Default for RigPolicy {
    fn default() -> Self {
        RigPolicy::Interior { margin: 0.1, fov_deg: 60.0 }
    }
}

fn pick_up(dir: &Vec3) -> Vec3 {
    if dir.normalize().cross(&Vec3::y()).norm() > 1e-3 {
        Vec3::y()
    } else {
        Vec3::z()
    }
}

fn orthonormal(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a);
    (a, b)
}

pub fn generate_camera_rig(
    scene: &Scene,
    count: usize,
    seed: u64,
    policy: &RigPolicy,
) -> Result<Vec<Camera>, SceneError> {
    if count == 0 {
        return Err(SceneError::Invalid("rig count must be at least 1".into()));
    }
    let (lo, hi) = scene.bounds();
    let extent = hi - lo;
    let diag = extent.norm();
    if !diag.is_finite() || diag <= 0.0 {
        return Err(SceneError::DegenerateBounds(format!("extent {extent:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rig = Vec::with_capacity(count);
    match policy {
        RigPolicy::Interior { margin, fov_deg } => {
            if extent.iter().any(|&e| e <= 0.0) {
                return Err(SceneError::DegenerateBounds(format!("extent {extent:?} has a zero axis")));
            }
            let inner_lo = lo + extent * *margin;
            let inner_hi = hi - extent * *margin;
            if (0..3).any(|k| inner_lo[k] >= inner_hi[k]) {
                return Err(SceneError::DegenerateBounds(format!("margin {margin} leaves no interior")));
            }
            let mut cdf = Vec::with_capacity(scene.triangles.len());
            let mut total = 0.0;
            for t in 0..scene.triangles.len() {
                let p = scene.tri_positions(t);
                total += 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
                cdf.push(total);
            }
            while rig.len() < count {
                let pos = Vec3::from_fn(|k, _| rng.random_range(inner_lo[k]..inner_hi[k]));
                let x = rng.random::<f64>() * total;
                let t = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
                let [a, b, c] = scene.tri_positions(t);
                let s = rng.random::<f64>().sqrt();
                let r = rng.random::<f64>();
                let target = a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r);
                let dir = target - pos;
                if dir.norm() < 1e-3 * diag {
                    continue;
                }
                rig.push(Camera::new(pos, target, pick_up(&dir), *fov_deg, 1e-3 * diag, 4.0 * diag));
            }
        }
        RigPolicy::Facing { normal, min_distance, max_distance, max_angle_deg, target_jitter, fov_deg } => {
            let n = Vec3::from(*normal);
            if n.norm() == 0.0 || min_distance <= &0.0 || max_distance < min_distance {
                return Err(SceneError::Invalid("facing rig needs a normal and 0 < min ≤ max distance".into()));
            }
            let n = n.normalize();
            let (a, b) = orthonormal(&n);
            let center = (lo + hi) * 0.5;
            let cos_max = max_angle_deg.to_radians().cos();
            for _ in 0..count {
                // uniform direction on the spherical cap
                let cos_t = rng.random_range(cos_max..=1.0);
                let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let dir = n * cos_t + a * (sin_t * phi.cos()) + b * (sin_t * phi.sin());
                let dist = rng.random_range(*min_distance..=*max_distance);
                let pos = center + dir * dist;
                let jitter = Vec3::from_fn(|k, _| rng.random_range(-1.0..=1.0) * target_jitter * extent[k]);
                let target = center + jitter;
                let view = target - pos;
                rig.push(Camera::new(pos, target, pick_up(&view), *fov_deg, 1e-3 * dist, dist + 4.0 * diag));
            }
        }
    }
    Ok(rig)
}

pub fn save_rig(rig: &[Camera], path: &Path) -> Result<(), SceneError> {
    let mut text = serde_json::to_string_pretty(rig)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_rig(path: &Path) -> Result<Vec<Camera>, SceneError> {
    let rig: Vec<Camera> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for cam in &rig {
        cam.validate()?;
    }
    Ok(rig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synth;

    #[test]
    fn single_camera_inside_bounds() {
        let scene = synth::box_room();
        let rig = generate_camera_rig(&scene, 1, 3, &RigPolicy::default()).unwrap();
        assert_eq!(rig.len(), 1);
        let (lo, hi) = scene.bounds();
        let p = Vec3::from(rig[0].position);
        assert!((0..3).all(|k| p[k] > lo[k] && p[k] < hi[k]));
        rig[0].validate().unwrap();
    }

    #[test]
    fn flat_scene_has_no_interior() {
        let scene = synth::quad_scene();
        assert!(matches!(
            generate_camera_rig(&scene, 4, 0, &RigPolicy::default()),
            Err(SceneError::DegenerateBounds(_))
        ));
    }

    #[test]
    fn large_rig_serializes_identically() {
        let scene = synth::box_room();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        save_rig(&generate_camera_rig(&scene, 5000, 42, &RigPolicy::default()).unwrap(), &a).unwrap();
        save_rig(&generate_camera_rig(&scene, 5000, 42, &RigPolicy::default()).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(load_rig(&a).unwrap().len(), 5000);
    }
}
