use serde::{Deserialize, Serialize};

use super::{SceneError, Vec3};

/// Pinhole camera. Serialized as one record of the rig JSON array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
}

/// Orthonormal view basis: `right`, `up`, `forward` (depth grows along `forward`).
#[derive(Clone, Copy, Debug)]
pub struct ViewBasis {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl ViewBasis {
    /// View-space coordinates `(x right, y up, z depth)`.
    #[inline]
    pub fn to_view(&self, p: &Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(&self.right), d.dot(&self.up), d.dot(&self.forward))
    }
}

impl Camera {
    pub fn new(position: Vec3, target: Vec3, up: Vec3, fov_deg: f64, near: f64, far: f64) -> Self {
        Self {
            position: position.into(),
            target: target.into(),
            up: up.into(),
            fov_deg,
            near,
            far,
        }
    }

    pub fn fov_rad(&self) -> f64 {
        self.fov_deg.to_radians()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let fov = self.fov_rad();
        if !(fov > 0.0 && fov < std::f64::consts::PI) {
            return Err(SceneError::Camera(format!("fov {} deg outside (0, 180)", self.fov_deg)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(SceneError::Camera(format!("need 0 < near < far, got {} / {}", self.near, self.far)));
        }
        let dir = Vec3::from(self.target) - Vec3::from(self.position);
        if dir.norm() == 0.0 {
            return Err(SceneError::Camera("target coincides with position".into()));
        }
        let up = Vec3::from(self.up);
        if up.norm() == 0.0 || dir.normalize().cross(&up.normalize()).norm() < 1e-9 {
            return Err(SceneError::Camera("up vector is parallel to the view direction".into()));
        }
        Ok(())
    }

    pub fn basis(&self) -> ViewBasis {
        let origin = Vec3::from(self.position);
        let forward = (Vec3::from(self.target) - origin).normalize();
        let right = forward.cross(&Vec3::from(self.up)).normalize();
        let up = right.cross(&forward);
        ViewBasis { origin, right, up, forward }
    }

    /// Tangent of half the vertical field of view.
    pub fn tan_half_fov(&self) -> f64 {
        (0.5 * self.fov_rad()).tan()
    }

    /// World-space unit ray direction through NDC point `(x, y)` for an
    /// image of the given aspect (width / height).
    pub fn ray_dir(&self, ndc_x: f64, ndc_y: f64, aspect: f64) -> Vec3 {
        let b = self.basis();
        let t = self.tan_half_fov();
        (b.forward + b.right * (ndc_x * t * aspect) + b.up * (ndc_y * t)).normalize()
    }
}
