//! Scene geometry: instanced triangle meshes with a shared UV atlas, the
//! camera model, UV rasterization and reference-UV sampling.

mod camera;
mod obj;
mod raster;
mod refs;
mod rig;
pub mod synth;
mod texture;

pub use texture::{load_mask_png, quantize16, quantize8, save_mask_png};

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;

pub use camera::Camera;
pub use obj::{parse_obj, write_obj};
pub use raster::{chart_texels, rasterize, rasterize_with, RasterFrame, RasterOptions, RasterStats, BACKGROUND};
pub use refs::{sample_reference_uvs, ReferenceSet};
pub use rig::{generate_camera_rig, load_rig, save_rig, RigPolicy};
pub use texture::TextureImage;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing UVs on triangle {triangle}")]
    MissingUvs { triangle: usize },
    #[error("face on line {line} has {count} vertices; only triangles are supported")]
    NotTriangulated { line: usize, count: usize },
    #[error("triangle {triangle}: uv {uv:?} outside [0,1]²")]
    UvOutOfRange { triangle: usize, uv: [f64; 2] },
    #[error("instance charts overlap: instance {a} (triangle {ta}) and instance {b} (triangle {tb})")]
    ChartOverlap { a: u32, b: u32, ta: usize, tb: usize },
    #[error("instance {0} owns no triangles")]
    EmptyInstance(u32),
    #[error("instance {instance} has zero total UV area")]
    ZeroUvArea { instance: u32 },
    #[error("group {0:?} has no entry in the instance map")]
    UnmappedGroup(String),
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("degenerate scene bounds: {0}")]
    DegenerateBounds(String),
    #[error("{0}")]
    Invalid(String),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triangle {
    pub vertices: [u32; 3],
    pub uvs: [u32; 3],
    pub instance: u32,
}

/// Instanced triangle mesh whose instances own disjoint UV charts.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub positions: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<Triangle>,
    pub instance_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSummary {
    pub triangles: usize,
    pub instances: usize,
    pub atlas_occupancy: f64,
    pub instance_triangles: Vec<usize>,
    pub instance_uv_area: Vec<f64>,
}

fn tri_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Interior-overlap test between two 2-D triangles by separating axes.
/// Triangles that only share an edge or a vertex do not overlap.
fn triangles_overlap(p: [[f64; 2]; 3], q: [[f64; 2]; 3]) -> bool {
    const EPS: f64 = 1e-9;
    for tri in [&p, &q] {
        for i in 0..3 {
            let a = tri[i];
            let b = tri[(i + 1) % 3];
            let axis = [-(b[1] - a[1]), b[0] - a[0]];
            let proj = |t: &[[f64; 2]; 3]| {
                let v: Vec<f64> = t.iter().map(|v| v[0] * axis[0] + v[1] * axis[1]).collect();
                (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            };
            let (pmin, pmax) = proj(&p);
            let (qmin, qmax) = proj(&q);
            let scale = (axis[0].abs() + axis[1].abs()).max(1e-300);
            if pmax <= qmin + EPS * scale || qmax <= pmin + EPS * scale {
                return false;
            }
        }
    }
    true
}

impl Scene {
    /// Build and validate a scene.
    pub fn new(
        positions: Vec<Vec3>,
        uvs: Vec<[f64; 2]>,
        triangles: Vec<Triangle>,
        instance_names: Vec<String>,
    ) -> Result<Self, SceneError> {
        let scene = Self { positions, uvs, triangles, instance_names };
        scene.validate()?;
        Ok(scene)
    }

    pub fn instance_count(&self) -> usize {
        self.instance_names.len()
    }

    pub fn tri_positions(&self, t: usize) -> [Vec3; 3] {
        let tri = &self.triangles[t];
        tri.vertices.map(|i| self.positions[i as usize])
    }

    pub fn tri_uvs(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = &self.triangles[t];
        tri.uvs.map(|i| self.uvs[i as usize])
    }

    pub fn uv_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_uvs(t);
        tri_area(a, b, c).abs()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let m = self.instance_count();
        let mut owned = vec![0usize; m];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in &tri.vertices {
                if v as usize >= self.positions.len() {
                    return Err(SceneError::Invalid(format!("triangle {t}: vertex index {v} out of range")));
                }
            }
            for &u in &tri.uvs {
                let Some(uv) = self.uvs.get(u as usize) else {
                    return Err(SceneError::Invalid(format!("triangle {t}: uv index {u} out of range")));
                };
                if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                    return Err(SceneError::UvOutOfRange { triangle: t, uv: *uv });
                }
            }
            if tri.instance as usize >= m {
                return Err(SceneError::Invalid(format!(
                    "triangle {t}: instance id {} outside 0..{m}",
                    tri.instance
                )));
            }
            owned[tri.instance as usize] += 1;
        }
        if let Some(i) = owned.iter().position(|&c| c == 0) {
            return Err(SceneError::EmptyInstance(i as u32));
        }
        self.check_disjoint_charts()
    }

    fn check_disjoint_charts(&self) -> Result<(), SceneError> {
        // bucket triangles by UV bounding box on a coarse grid
        const G: usize = 32;
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); G * G];
        let cell = |x: f64| ((x * G as f64).floor() as isize).clamp(0, G as isize - 1) as usize;
        for t in 0..self.triangles.len() {
            let uv = self.tri_uvs(t);
            let (x0, x1) = (uv.iter().map(|p| p[0]).fold(1.0, f64::min), uv.iter().map(|p| p[0]).fold(0.0, f64::max));
            let (y0, y1) = (uv.iter().map(|p| p[1]).fold(1.0, f64::min), uv.iter().map(|p| p[1]).fold(0.0, f64::max));
            for gy in cell(y0)..=cell(y1) {
                for gx in cell(x0)..=cell(x1) {
                    buckets[gy * G + gx].push(t);
                }
            }
        }
        for bucket in &buckets {
            for (i, &a) in bucket.iter().enumerate() {
                for &b in &bucket[i + 1..] {
                    let (ia, ib) = (self.triangles[a].instance, self.triangles[b].instance);
                    if ia == ib {
                        continue;
                    }
                    if triangles_overlap(self.tri_uvs(a), self.tri_uvs(b)) {
                        let (ta, tb) = if ia < ib { (a, b) } else { (b, a) };
                        return Err(SceneError::ChartOverlap {
                            a: ia.min(ib),
                            b: ia.max(ib),
                            ta,
                            tb,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> SceneSummary {
        let m = self.instance_count();
        let mut instance_triangles = vec![0; m];
        let mut instance_uv_area = vec![0.0; m];
        for (t, tri) in self.triangles.iter().enumerate() {
            instance_triangles[tri.instance as usize] += 1;
            instance_uv_area[tri.instance as usize] += self.uv_area(t);
        }
        let total: f64 = instance_uv_area.iter().sum();
        SceneSummary {
            triangles: self.triangles.len(),
            instances: m,
            atlas_occupancy: total.min(1.0),
            instance_triangles,
            instance_uv_area,
        }
    }

    /// Axis-aligned bounds of all vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

/// Load a wavefront-style mesh and its group → instance-id JSON map.
pub fn load_scene(mesh: &Path, instance_map: &Path) -> Result<(Scene, SceneSummary), SceneError> {
    let text = std::fs::read_to_string(mesh)?;
    let map: BTreeMap<String, u32> = serde_json::from_str(&std::fs::read_to_string(instance_map)?)?;
    let scene = parse_obj(&text, &map)?;
    let summary = scene.summary();
    Ok((scene, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sat_overlap_cases() {
        let a = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let shared_edge = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let inside = [[0.1, 0.1], [0.3, 0.1], [0.1, 0.3]];
        let far = [[2.0, 2.0], [3.0, 2.0], [2.0, 3.0]];
        assert!(!triangles_overlap(a, shared_edge));
        assert!(triangles_overlap(a, inside));
        assert!(!triangles_overlap(a, far));
    }
}
