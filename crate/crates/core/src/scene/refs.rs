use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scene, SceneError};

/// Fixed per-instance UV samples used as attention references.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    pub n_ref: usize,
    pub seed: u64,
    /// `per_instance[m]` holds exactly `n_ref` UVs inside instance `m`'s charts.
    pub per_instance: Vec<Vec<[f64; 2]>>,
}

impl ReferenceSet {
    pub fn instance(&self, m: u32) -> Option<&[[f64; 2]]> {
        self.per_instance.get(m as usize).map(Vec::as_slice)
    }
}

/// Area-uniform UV samples per instance: a triangle is drawn with
/// probability proportional to its UV area, then a uniform point inside it.
pub fn sample_reference_uvs(scene: &Scene, n_ref: usize, seed: u64) -> Result<ReferenceSet, SceneError> {
    if n_ref == 0 {
        return Err(SceneError::Invalid("n_ref must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_instance = Vec::with_capacity(scene.instance_count());
    for m in 0..scene.instance_count() as u32 {
        let tris: Vec<usize> = (0..scene.triangles.len()).filter(|&t| scene.triangles[t].instance == m).collect();
        let mut cdf = Vec::with_capacity(tris.len());
        let mut total = 0.0;
        for &t in &tris {
            total += scene.uv_area(t);
            cdf.push(total);
        }
        if total <= 0.0 {
            return Err(SceneError::ZeroUvArea { instance: m });
        }
        let samples = (0..n_ref)
            .map(|_| {
                let x = rng.random::<f64>() * total;
                let k = cdf.partition_point(|&c| c <= x).min(tris.len() - 1);
                let [a, b, c] = scene.tri_uvs(tris[k]);
                let s = rng.random::<f64>().sqrt();
                let r = rng.random::<f64>();
                let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
                [wa * a[0] + wb * b[0] + wc * c[0], wa * a[1] + wb * b[1] + wc * c[1]]
            })
            .collect();
        per_instance.push(samples);
    }
    Ok(ReferenceSet { n_ref, seed, per_instance })
}
