//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;
use scenetex::scene::{Camera, Scene, Triangle, Vec3};

pub fn scenetex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenetex"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn scenetex")
}

/// Run the binary and panic with its stderr unless it exits 0.
pub fn scenetex_ok(args: &[&str]) -> String {
    let out = scenetex(args);
    assert!(out.status.success(), "scenetex {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Up to `max_tris` random triangles near the origin, one instance each,
/// with UV charts in separate cells of a 5×4 atlas grid. The camera sits
/// 4–6 units out, so every vertex is well past the near plane.
pub fn random_scene(rng: &mut impl Rng, max_tris: usize) -> (Scene, Camera) {
    let n = rng.random_range(1..=max_tris.min(20));
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    for t in 0..n {
        let centre = Vec3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
        let (cu, cv) = ((t % 5) as f64 / 5.0, (t / 5) as f64 / 4.0);
        for _ in 0..3 {
            let jitter = Vec3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
            positions.push(centre + jitter);
            uvs.push([cu + 0.02 + 0.16 * rng.random::<f64>(), cv + 0.02 + 0.21 * rng.random::<f64>()]);
        }
        let b = 3 * t as u32;
        triangles.push(Triangle { vertices: [b, b + 1, b + 2], uvs: [b, b + 1, b + 2], instance: t as u32 });
    }
    let names = (0..n).map(|t| format!("tri{t}")).collect();
    let scene = Scene::new(positions, uvs, triangles, names).expect("random scene");

    let dir = loop {
        let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if d.norm() > 0.2 && d.norm() <= 1.0 && d.normalize().y.abs() < 0.95 {
            break d.normalize();
        }
    };
    let position = dir * rng.random_range(4.0..6.0);
    let camera = Camera::new(position, Vec3::zeros(), Vec3::y(), rng.random_range(30.0..60.0), 0.1, 100.0);
    (scene, camera)
}

pub enum OraclePixel {
    Background,
    Hit { instance: u32, depth: f64 },
    /// Within the edge band of some front-facing triangle, or two hits at
    /// (nearly) the same depth.
    Ambiguous,
}

/// Brute-force ray casting through pixel centres: nearest front-facing
/// hit within `[near, far]`, depth measured along the view axis.
pub fn raycast(scene: &Scene, camera: &Camera, height: usize, width: usize, edge_band: f64) -> Vec<OraclePixel> {
    let origin = Vec3::from(camera.position);
    let forward = (Vec3::from(camera.target) - origin).normalize();
    let right = forward.cross(&Vec3::from(camera.up)).normalize();
    let up = right.cross(&forward);
    let tan = (camera.fov_deg.to_radians() / 2.0).tan();
    let aspect = width as f64 / height as f64;

    struct Front {
        p: [Vec3; 3],
        ndc: [[f64; 2]; 3],
        instance: u32,
    }
    let mut front = Vec::new();
    for (t, tri) in scene.triangles.iter().enumerate() {
        let p = scene.tri_positions(t);
        let normal = (p[1] - p[0]).cross(&(p[2] - p[0]));
        if normal.dot(&(p[0] - origin)) >= 0.0 {
            continue;
        }
        let ndc = p.map(|v| {
            let d = v - origin;
            let z = d.dot(&forward);
            [d.dot(&right) / (z * tan * aspect), d.dot(&up) / (z * tan)]
        });
        front.push(Front { p, ndc, instance: tri.instance });
    }

    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let x = (j as f64 + 0.5) / width as f64 * 2.0 - 1.0;
            let y = 1.0 - (i as f64 + 0.5) / height as f64 * 2.0;
            let near_edge = front.iter().any(|f| (0..3).any(|k| segment_distance([x, y], f.ndc[k], f.ndc[(k + 1) % 3]) < edge_band));
            if near_edge {
                out.push(OraclePixel::Ambiguous);
                continue;
            }
            let dir = forward + right * (x * tan * aspect) + up * (y * tan);
            let mut hits: Vec<(f64, u32)> = front
                .iter()
                .filter_map(|f| intersect(origin, dir, &f.p).map(|s| (s, f.instance)))
                .filter(|&(z, _)| z >= camera.near && z <= camera.far)
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0));
            out.push(match hits.as_slice() {
                [] => OraclePixel::Background,
                [a, b, ..] if (b.0 - a.0) <= 1e-9 * a.0 => OraclePixel::Ambiguous,
                [a, ..] => OraclePixel::Hit { instance: a.1, depth: a.0 },
            });
        }
    }
    out
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    ((p[0] - a[0] - s * dx).powi(2) + (p[1] - a[1] - s * dy).powi(2)).sqrt()
}

/// Möller–Trumbore. `dir` has unit component along the view axis, so the
/// ray parameter is the view depth.
fn intersect(origin: Vec3, dir: Vec3, p: &[Vec3; 3]) -> Option<f64> {
    let (e1, e2) = (p[1] - p[0], p[2] - p[0]);
    let h = dir.cross(&e2);
    let a = e1.dot(&h);
    if a.abs() < 1e-14 {
        return None;
    }
    let s = origin - p[0];
    let u = s.dot(&h) / a;
    let q = s.cross(&e1);
    let v = dir.dot(&q) / a;
    if u < 0.0 || v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) / a;
    (t > 0.0).then_some(t)
}

/// Reference multi-head attention, one query at a time: softmax over the
/// keys of the query's segment with logits scaled by 1/sqrt(head width).
pub fn dense_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    width: usize,
    heads: usize,
    segments: &[(std::ops::Range<usize>, std::ops::Range<usize>)],
    rows: usize,
) -> Vec<f64> {
    let dh = width / heads;
    let mut out = vec![0.0; rows * width];
    for (qs, ks) in segments {
        for i in qs.clone() {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let logits: Vec<f64> = ks
                    .clone()
                    .map(|j| cols.clone().map(|c| q[i * width + c] * k[j * width + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = w.iter().sum();
                for (wj, j) in w.iter().zip(ks.clone()) {
                    for c in cols.clone() {
                        out[i * width + c] += wj / z * v[j * width + c];
                    }
                }
            }
        }
    }
    out
}

/// Kolmogorov–Smirnov statistic of `xs` against U(lo, hi).
pub fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// 2×2 box average of an RGB image stored row-major.
pub fn box_downsample(data: &[f32], width: usize, height: usize) -> Vec<f32> {
    let (w2, h2) = (width / 2, height / 2);
    let mut out = vec![0.0; w2 * h2 * 3];
    for i in 0..h2 {
        for j in 0..w2 {
            for c in 0..3 {
                let at = |y: usize, x: usize| data[(y * width + x) * 3 + c];
                out[(i * w2 + j) * 3 + c] =
                    0.25 * (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1));
            }
        }
    }
    out
}

pub fn psnr(a: &[f32], b: &[f32], mask: &[bool]) -> f64 {
    let (mut se, mut n) = (0.0, 0usize);
    for (p, &m) in mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                se += (a[p * 3 + c] as f64 - b[p * 3 + c] as f64).powi(2);
            }
            n += 3;
        }
    }
    -10.0 * (se / n as f64).log10()
}
