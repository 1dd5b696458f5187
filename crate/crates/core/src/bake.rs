//! Texture baking: evaluate a trained field and decoder on an `R×R` texel
//! lattice, plus image comparison by PSNR.
//!
//! Texel `(i, j)` is queried at uv `((j+½)/R, (i+½)/R)`, so row 0 of the
//! baked image holds v near 0. This is the same convention
//! [`TextureImage`] uses when sampled.


use rayon::prelude::*;

use crate::diffcore::{DiffError, Scalar, Tape, Tensor};
use crate::optim::Model;
use crate::scene::{chart_texels, ReferenceSet, Scene, TextureImage, BACKGROUND};
use crate::xattn::{Segment, XattnError};

/// Texels decoded per tape.
const TILE: usize = 16_384;

#[derive(Debug, thiserror::Error)]
pub enum BakeError {
    #[error("bake resolution must be at least 1")]
    Resolution,
    #[error("psnr: {0}")]
    Compare(String),
    #[error(transparent)]
    Xattn(#[from] XattnError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Baked {
    pub texture: TextureImage,
    /// Texels inside some instance chart.
    pub coverage: Vec<bool>,
    /// Owning instance per texel, or [`BACKGROUND`].
    pub owner: Vec<u32>,
}

/// Decode every charted texel through the model, using the owning
/// instance's references when the decoder has cross-attention. Texels
/// outside all charts get `background`.
pub fn bake<S: Scalar + Send + Sync>(
    model: &Model<S>,
    scene: &Scene,
    refs: &ReferenceSet,
    resolution: usize,
    background: [f64; 3],
) -> Result<Baked, BakeError> {
    if resolution == 0 {
        return Err(BakeError::Resolution);
    }
    let r = resolution;
    let owner = chart_texels(scene, r);
    let mut texture = TextureImage::new(r, r);
    for k in 0..r * r {
        texture.data[k * 3..k * 3 + 3].copy_from_slice(&background.map(|c| c as f32));
    }
    let mut by_instance: Vec<Vec<usize>> = vec![Vec::new(); scene.instance_count()];
    for (k, &id) in owner.iter().enumerate() {
        if id != BACKGROUND {
            by_instance[id as usize].push(k);
        }
    }
    let uv_of = |k: usize| [((k % r) as f64 + 0.5) / r as f64, ((k / r) as f64 + 0.5) / r as f64];
    let attend = model.decoder.config.cross_attention;

    for (id, texels) in by_instance.iter().enumerate() {
        if texels.is_empty() {
            continue;
        }
        let kv = if attend {
            let list = refs.instance(id as u32).filter(|l| !l.is_empty());
            let list = list.ok_or(XattnError::NoReferences { instance: id as u32 })?;
            Some(instance_keys_values(model, list)?)
        } else {
            None
        };
        let tiles: Vec<&[usize]> = texels.chunks(TILE).collect();
        let rgb: Vec<Tensor<S>> = tiles
            .par_iter()
            .map(|tile| {
                let uvs: Vec<[f64; 2]> = tile.iter().map(|&k| uv_of(k)).collect();
                shade_tile(model, &uvs, kv.as_ref())
            })
            .collect::<Result<_, BakeError>>()?;
        for (tile, colors) in tiles.iter().zip(&rgb) {
            for (row, &k) in tile.iter().enumerate() {
                for c in 0..3 {
                    texture.data[k * 3 + c] = colors.data()[row * 3 + c].f64() as f32;
                }
            }
        }
    }
    let coverage = owner.iter().map(|&o| o != BACKGROUND).collect();
    Ok(Baked { texture, coverage, owner })
}

fn instance_keys_values<S: Scalar>(model: &Model<S>, list: &[[f64; 2]]) -> Result<(Tensor<S>, Tensor<S>), BakeError> {
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    let emb = model.grid.encode(&tape, &p, list).map_err(XattnError::from)?;
    let (k, v) = model.decoder.keys_values(&tape, &p, emb)?;
    Ok(((*tape.value(k)).clone(), (*tape.value(v)).clone()))
}

fn shade_tile<S: Scalar>(
    model: &Model<S>,
    uvs: &[[f64; 2]],
    kv: Option<&(Tensor<S>, Tensor<S>)>,
) -> Result<Tensor<S>, BakeError> {
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    let emb = model.grid.encode(&tape, &p, uvs).map_err(XattnError::from)?;
    let out = match kv {
        Some((k, v)) => {
            let seg = [Segment { q: 0..uvs.len(), k: 0..k.rows() }];
            let (k, v) = (tape.constant(k.clone()), tape.constant(v.clone()));
            model.decoder.shade(&tape, &p, emb, Some((k, v, &seg)))?
        }
        None => model.decoder.shade(&tape, &p, emb, None)?,
    };
    Ok((*tape.value(out)).clone())
}

/// `10·log10(1/MSE)` over the masked pixels of two images in `[0,1]`
/// with `channels` values per pixel. Identical images give `+∞`.
pub fn psnr<S: Scalar>(a: &[S], b: &[S], mask: Option<&[bool]>, channels: usize) -> Result<f64, BakeError> {
    if a.len() != b.len() || channels == 0 || !a.len().is_multiple_of(channels) {
        return Err(BakeError::Compare(format!("lengths {} and {} with {channels} channels", a.len(), b.len())));
    }
    let pixels = a.len() / channels;
    if mask.is_some_and(|m| m.len() != pixels) {
        return Err(BakeError::Compare(format!("mask of {} for {pixels} pixels", mask.map_or(0, <[bool]>::len))));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for p in 0..pixels {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for k in p * channels..(p + 1) * channels {
            sum += (a[k].f64() - b[k].f64()).powi(2);
        }
        count += channels;
    }
    if count == 0 {
        return Err(BakeError::Compare("empty mask".into()));
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// PSNR per instance chart, in instance order; `None` where an instance
/// owns no texels.
pub fn psnr_by_instance(a: &TextureImage, b: &TextureImage, owner: &[u32], instances: usize) -> Vec<Option<f64>> {
    (0..instances as u32)
        .map(|id| {
            let mask: Vec<bool> = owner.iter().map(|&o| o == id).collect();
            psnr(&a.data, &b.data, Some(&mask), 3).ok()
        })
        .collect()
}
