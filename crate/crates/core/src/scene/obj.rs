use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Scene, SceneError, Triangle, Vec3};

/// Parse `v`, `vt`, `f` and `o`/`g` records. Faces must be triangles with
/// texture coordinates; normals (`v/vt/vn`) are accepted and ignored. Faces
/// before the first group belong to group `"default"`.
pub fn parse_obj(text: &str, instance_map: &BTreeMap<String, u32>) -> Result<Scene, SceneError> {
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    let mut group = "default".to_string();

    let resolve = |raw: &str, len: usize, line: usize| -> Result<u32, SceneError> {
        let i: i64 = raw
            .parse()
            .map_err(|_| SceneError::Parse { line, msg: format!("bad index {raw:?}") })?;
        let idx = if i < 0 { len as i64 + i } else { i - 1 };
        if idx < 0 || idx as usize >= len {
            return Err(SceneError::Parse { line, msg: format!("index {raw} out of range") });
        }
        Ok(idx as u32)
    };

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut it = content.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        let floats = |k: usize| -> Result<Vec<f64>, SceneError> {
            if rest.len() < k {
                return Err(SceneError::Parse { line, msg: format!("expected {k} numbers") });
            }
            rest[..k]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| SceneError::Parse { line, msg: format!("bad number {s:?}") }))
                .collect()
        };
        match tag {
            "v" => {
                let p = floats(3)?;
                positions.push(Vec3::new(p[0], p[1], p[2]));
            }
            "vt" => {
                let t = floats(2)?;
                uvs.push([t[0], t[1]]);
            }
            "o" | "g" => {
                group = rest.join(" ");
                if group.is_empty() {
                    return Err(SceneError::Parse { line, msg: "empty group name".into() });
                }
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(SceneError::NotTriangulated { line, count: rest.len() });
                }
                let instance = *instance_map.get(&group).ok_or_else(|| SceneError::UnmappedGroup(group.clone()))?;
                let mut vertices = [0u32; 3];
                let mut tex = [0u32; 3];
                for (k, corner) in rest.iter().enumerate() {
                    let mut parts = corner.split('/');
                    vertices[k] = resolve(parts.next().unwrap_or(""), positions.len(), line)?;
                    match parts.next() {
                        Some(t) if !t.is_empty() => tex[k] = resolve(t, uvs.len(), line)?,
                        _ => return Err(SceneError::MissingUvs { triangle: triangles.len() }),
                    }
                }
                triangles.push(Triangle { vertices, uvs: tex, instance });
            }
            // normals, smoothing groups, materials
            _ => {}
        }
    }

    let count = instance_map.values().map(|&v| v as usize + 1).max().unwrap_or(0);
    let mut names = vec![String::new(); count];
    for (name, &id) in instance_map {
        names[id as usize] = name.clone();
    }
    Scene::new(positions, uvs, triangles, names)
}

/// Serialize a scene to the text format read by [`parse_obj`], one `o`
/// group per instance, groups named after `instance_names`.
pub fn write_obj(scene: &Scene) -> String {
    let mut out = String::new();
    for p in &scene.positions {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    for t in &scene.uvs {
        let _ = writeln!(out, "vt {} {}", t[0], t[1]);
    }
    for (id, name) in scene.instance_names.iter().enumerate() {
        let _ = writeln!(out, "o {name}");
        for tri in scene.triangles.iter().filter(|t| t.instance as usize == id) {
            let _ = writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                tri.vertices[0] + 1,
                tri.uvs[0] + 1,
                tri.vertices[1] + 1,
                tri.uvs[1] + 1,
                tri.vertices[2] + 1,
                tri.uvs[2] + 1
            );
        }
    }
    out
}
