//! Procedural test scenes: a single quad, a box room and a room with boxes,
//! each with a packed UV atlas, a ground-truth texture and a camera rig.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::{stream_seed, Stream};

use super::{
    chart_texels, generate_camera_rig, save_rig, write_obj, Camera, RigPolicy, Scene, SceneError, TextureImage,
    Triangle, Vec3, BACKGROUND,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    Quad,
    BoxRoom,
    MultiObject { boxes: usize },
}

impl FromStr for FixtureKind {
    type Err = SceneError;

    /// `quad`, `box-room`, `multi-object` (4 boxes) or `multi-object:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quad" => Ok(Self::Quad),
            "box-room" => Ok(Self::BoxRoom),
            "multi-object" => Ok(Self::MultiObject { boxes: 4 }),
            _ => match s.strip_prefix("multi-object:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(Self::MultiObject { boxes: k }),
                _ => Err(SceneError::Invalid(format!(
                    "unknown scene kind {s:?} (expected quad, box-room, multi-object[:K])"
                ))),
            },
        }
    }
}

impl FixtureKind {
    pub fn name(&self) -> String {
        match self {
            Self::Quad => "quad".into(),
            Self::BoxRoom => "box-room".into(),
            Self::MultiObject { boxes } => format!("multi-object:{boxes}"),
        }
    }

    pub fn default_rig_policy(&self) -> RigPolicy {
        match self {
            Self::Quad => quad_rig_policy(),
            _ => RigPolicy::default(),
        }
    }
}

pub fn quad_rig_policy() -> RigPolicy {
    RigPolicy::Facing {
        normal: [0.0, 0.0, 1.0],
        min_distance: 2.0,
        max_distance: 3.0,
        max_angle_deg: 35.0,
        target_jitter: 0.1,
        fov_deg: 50.0,
    }
}

#[derive(Default)]
struct Builder {
    positions: Vec<Vec3>,
    uvs: Vec<[f64; 2]>,
    triangles: Vec<Triangle>,
    names: Vec<String>,
    areas: Vec<f64>,
}

impl Builder {
    fn instance(&mut self, name: impl Into<String>) -> u32 {
        self.names.push(name.into());
        self.areas.push(0.0);
        (self.names.len() - 1) as u32
    }

    /// Rectangle `center ± a ± b` whose front side faces `normal`, mapped
    /// onto the UV rectangle `[u0,u1]×[v0,v1]`.
    fn face(&mut self, instance: u32, center: Vec3, mut a: Vec3, b: Vec3, normal: Vec3, rect: [f64; 4]) {
        if a.cross(&b).dot(&normal) < 0.0 {
            a = -a;
        }
        let [u0, v0, u1, v1] = rect;
        let p0 = self.positions.len() as u32;
        let t0 = self.uvs.len() as u32;
        self.positions.extend([center - a - b, center + a - b, center + a + b, center - a + b]);
        self.uvs.extend([[u0, v0], [u1, v0], [u1, v1], [u0, v1]]);
        for [x, y, z] in [[0, 1, 2], [0, 2, 3]] {
            self.triangles.push(Triangle {
                vertices: [p0 + x, p0 + y, p0 + z],
                uvs: [t0 + x, t0 + y, t0 + z],
                instance,
            });
        }
        self.areas[instance as usize] += (u1 - u0) * (v1 - v0);
    }

    fn finish(self) -> (Scene, Vec<f64>) {
        let scene = Scene::new(self.positions, self.uvs, self.triangles, self.names)
            .expect("generated scenes are valid by construction");
        (scene, self.areas)
    }
}

/// Split `[0,1]²` into a `cols × rows` grid and return cell `k`, shrunk by
/// a relative padding on every side.
fn atlas_cell(k: usize, count: usize, pad: f64) -> [f64; 4] {
    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    sub_cell([0.0, 0.0, 1.0, 1.0], k % cols, k / cols, cols, rows, pad)
}

fn sub_cell(r: [f64; 4], col: usize, row: usize, cols: usize, rows: usize, pad: f64) -> [f64; 4] {
    let (w, h) = ((r[2] - r[0]) / cols as f64, (r[3] - r[1]) / rows as f64);
    let (u0, v0) = (r[0] + col as f64 * w, r[1] + row as f64 * h);
    [u0 + pad * w, v0 + pad * h, u0 + (1.0 - pad) * w, v0 + (1.0 - pad) * h]
}

/// Quad over `x, y ∈ [-1, 1]` at `z = 0`, facing `+z`, with
/// `uv = ((x+1)/2, (y+1)/2)`: one instance covering the whole atlas.
pub fn quad_scene() -> Scene {
    quad_fixture().0
}

fn quad_fixture() -> (Scene, Vec<f64>) {
    let mut b = Builder::default();
    let q = b.instance("quad");
    b.face(q, Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z(), [0.0, 0.0, 1.0, 1.0]);
    b.finish()
}

const ROOM_HALF: [f64; 3] = [2.0, 1.25, 2.0];
const PAD: f64 = 0.02;

fn room_faces(b: &mut Builder, total: usize) {
    let [hx, hy, hz] = ROOM_HALF;
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    let faces = [
        ("floor", Vec3::zeros(), x * hx, z * hz, y),
        ("ceiling", y * (2.0 * hy), x * hx, z * hz, -y),
        ("wall_north", Vec3::new(0.0, hy, -hz), x * hx, y * hy, z),
        ("wall_south", Vec3::new(0.0, hy, hz), x * hx, y * hy, -z),
        ("wall_west", Vec3::new(-hx, hy, 0.0), z * hz, y * hy, x),
        ("wall_east", Vec3::new(hx, hy, 0.0), z * hz, y * hy, -x),
    ];
    for (k, (name, c, a, bb, n)) in faces.into_iter().enumerate() {
        let id = b.instance(name);
        b.face(id, c, a, bb, n, atlas_cell(k, total, PAD));
    }
}

/// Closed room: floor, ceiling and four walls, each its own instance,
/// all facing inward.
pub fn box_room() -> Scene {
    box_room_fixture().0
}

fn box_room_fixture() -> (Scene, Vec<f64>) {
    let mut b = Builder::default();
    room_faces(&mut b, 6);
    b.finish()
}

/// Room plus `boxes` outward-facing boxes resting on the floor, placed on a
/// ring with seeded sizes. Instance count is `6 + boxes`.
pub fn multi_object(boxes: usize, seed: u64) -> Scene {
    multi_object_fixture(boxes, seed).0
}

fn multi_object_fixture(boxes: usize, seed: u64) -> (Scene, Vec<f64>) {
    let total = 6 + boxes;
    let mut b = Builder::default();
    room_faces(&mut b, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());
    for k in 0..boxes {
        let angle = std::f64::consts::TAU * k as f64 / boxes as f64 + rng.random_range(-0.2..0.2);
        let radius = rng.random_range(0.9..1.4);
        let half = Vec3::new(rng.random_range(0.15..0.3), rng.random_range(0.15..0.45), rng.random_range(0.15..0.3));
        let c = Vec3::new(radius * angle.cos(), half.y, radius * angle.sin());
        let id = b.instance(format!("box{k}"));
        let cell = atlas_cell(6 + k, total, PAD);
        let faces = [
            (c + y * half.y, x * half.x, z * half.z, y),
            (c + z * half.z, x * half.x, y * half.y, z),
            (c - z * half.z, x * half.x, y * half.y, -z),
            (c + x * half.x, z * half.z, y * half.y, x),
            (c - x * half.x, z * half.z, y * half.y, -x),
        ];
        for (f, (fc, a, bb, n)) in faces.into_iter().enumerate() {
            b.face(id, fc, a, bb, n, sub_cell(cell, f % 3, f / 3, 3, 2, 0.04));
        }
    }
    b.finish()
}

const PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.35, 0.25],
    [0.25, 0.55, 0.85],
    [0.35, 0.75, 0.35],
    [0.90, 0.75, 0.30],
    [0.60, 0.40, 0.75],
    [0.30, 0.75, 0.75],
    [0.80, 0.50, 0.60],
    [0.55, 0.55, 0.55],
];

/// Ground-truth atlas: per-instance base color, a 4×4 checker over the
/// instance's chart bounding box and a gentle gradient. Uncharted texels
/// are black.
pub fn ground_truth_texture(scene: &Scene, resolution: usize) -> TextureImage {
    let owner = chart_texels(scene, resolution);
    let m = scene.instance_count();
    let mut bbox = vec![[1.0f64, 1.0, 0.0, 0.0]; m];
    for (t, tri) in scene.triangles.iter().enumerate() {
        let r = &mut bbox[tri.instance as usize];
        for uv in scene.tri_uvs(t) {
            r[0] = r[0].min(uv[0]);
            r[1] = r[1].min(uv[1]);
            r[2] = r[2].max(uv[0]);
            r[3] = r[3].max(uv[1]);
        }
    }
    TextureImage::from_fn(resolution, resolution, |i, j| {
        let id = owner[i * resolution + j];
        if id == BACKGROUND {
            return [0.0; 3];
        }
        let r = bbox[id as usize];
        let u = ((j as f64 + 0.5) / resolution as f64 - r[0]) / (r[2] - r[0]).max(1e-12);
        let v = ((i as f64 + 0.5) / resolution as f64 - r[1]) / (r[3] - r[1]).max(1e-12);
        let checker = ((u * 4.0).floor() as i64 + (v * 4.0).floor() as i64).rem_euclid(2) as f32;
        let base = PALETTE[id as usize % PALETTE.len()];
        let (u, v) = (u as f32, v as f32);
        let grad = [u, v, 1.0 - 0.5 * (u + v)];
        std::array::from_fn(|k| (0.55 * base[k] + 0.25 * checker + 0.2 * grad[k]).clamp(0.0, 1.0))
    })
}

/// File names and bookkeeping written next to a generated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub triangles: usize,
    pub instances: usize,
    pub instance_names: Vec<String>,
    pub instance_triangles: Vec<usize>,
    /// Per-instance UV area as laid out by the generator.
    pub instance_uv_area: Vec<f64>,
    pub atlas_occupancy: f64,
    pub texture_resolution: usize,
    pub rig_count: usize,
    pub mesh: PathBuf,
    pub instance_map: PathBuf,
    pub texture: PathBuf,
    pub rig: PathBuf,
}

pub struct Fixture {
    pub kind: FixtureKind,
    pub seed: u64,
    pub scene: Scene,
    pub texture: TextureImage,
    pub rig: Vec<Camera>,
    /// UV areas from the generator's own layout, independent of the loader.
    pub layout_areas: Vec<f64>,
}

impl Fixture {
    /// `seed` is a master seed: the layout and the rig draw from its scene
    /// and rig streams.
    pub fn generate(
        kind: FixtureKind,
        seed: u64,
        texture_resolution: usize,
        rig_count: usize,
        rig_policy: Option<&RigPolicy>,
    ) -> Result<Self, SceneError> {
        let (scene, layout_areas) = match kind {
            FixtureKind::Quad => quad_fixture(),
            FixtureKind::BoxRoom => box_room_fixture(),
            FixtureKind::MultiObject { boxes } => multi_object_fixture(boxes, stream_seed(seed, Stream::Scene)),
        };
        let texture = ground_truth_texture(&scene, texture_resolution);
        let policy = rig_policy.cloned().unwrap_or_else(|| kind.default_rig_policy());
        let rig = generate_camera_rig(&scene, rig_count, stream_seed(seed, Stream::Rig), &policy)?;
        Ok(Self { kind, seed, scene, texture, rig, layout_areas })
    }

    pub fn instance_map(&self) -> BTreeMap<String, u32> {
        self.scene.instance_names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect()
    }

    pub fn manifest(&self) -> Manifest {
        let mut instance_triangles = vec![0; self.scene.instance_count()];
        for tri in &self.scene.triangles {
            instance_triangles[tri.instance as usize] += 1;
        }
        Manifest {
            kind: self.kind.name(),
            seed: self.seed,
            triangles: self.scene.triangles.len(),
            instances: self.scene.instance_count(),
            instance_names: self.scene.instance_names.clone(),
            instance_triangles,
            instance_uv_area: self.layout_areas.clone(),
            atlas_occupancy: self.layout_areas.iter().sum(),
            texture_resolution: self.texture.width,
            rig_count: self.rig.len(),
            mesh: "scene.obj".into(),
            instance_map: "instances.json".into(),
            texture: "texture.png".into(),
            rig: "rig.json".into(),
        }
    }

    /// Write mesh, instance map, texture, rig and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest, SceneError> {
        std::fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        std::fs::write(dir.join(&manifest.mesh), write_obj(&self.scene))?;
        std::fs::write(dir.join(&manifest.instance_map), serde_json::to_string_pretty(&self.instance_map())?)?;
        self.texture.save_png(&dir.join(&manifest.texture))?;
        save_rig(&self.rig, &dir.join(&manifest.rig))?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, SceneError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?)
}
