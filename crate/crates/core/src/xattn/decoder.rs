use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{multihead_attention, AttentionShape, Segment, XattnError};
use crate::diffcore::nn::{Init, Mlp};
use crate::diffcore::{Bound, ParamStore, Scalar, Tape, Tensor, Var};
use crate::scene::{RasterFrame, ReferenceSet};
use crate::texfield::HashGridTexture;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub heads: usize,
    /// Hidden width of the RGB head.
    pub head_hidden: usize,
    /// Number of linear layers in the RGB head.
    pub head_layers: usize,
    /// Reference UVs per instance.
    pub n_ref: usize,
    /// `false` runs the plain decoder (attention bypassed).
    pub cross_attention: bool,
    /// RGB of uncovered pixels.
    pub background: [f64; 3],
    pub query_tile: usize,
    pub key_tile: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DecoderConfig {
    pub fn desk() -> Self {
        Self {
            heads: 4,
            head_hidden: 64,
            head_layers: 4,
            n_ref: 256,
            cross_attention: true,
            background: [0.0; 3],
            query_tile: 64,
            key_tile: 128,
        }
    }

    pub fn paper() -> Self {
        Self { head_hidden: 256, n_ref: 4096, ..Self::desk() }
    }

    pub fn validate(&self, embed_width: usize) -> Result<(), XattnError> {
        let err = |m: String| Err(XattnError::Config(m));
        if self.heads == 0 || !embed_width.is_multiple_of(self.heads) {
            return err(format!("embedding width {embed_width} is not divisible by {} heads", self.heads));
        }
        if self.head_hidden == 0 || self.head_layers == 0 || self.n_ref == 0 {
            return err("head_hidden, head_layers and n_ref must be at least 1".into());
        }
        if self.query_tile == 0 || self.key_tile == 0 {
            return err("attention tiles must be at least 1".into());
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return err(format!("background {:?} outside [0,1]", self.background));
        }
        Ok(())
    }

    pub fn attention_shape(&self) -> AttentionShape {
        AttentionShape { heads: self.heads, query_tile: self.query_tile, key_tile: self.key_tile }
    }
}

/// Decoder weights, registered under `decoder.*`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub embed_width: usize,
    pub query: Mlp,
    pub key: Mlp,
    pub value: Mlp,
    pub post: Mlp,
    pub head: Mlp,
}

impl Decoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        config: DecoderConfig,
        embed_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, XattnError> {
        config.validate(embed_width)?;
        let e = embed_width;
        let query = Mlp::new(store, "decoder.query", &[e, e, e], Init::KaimingUniform, rng);
        let key = Mlp::new(store, "decoder.key", &[e, e, e], Init::KaimingUniform, rng);
        let value = Mlp::new(store, "decoder.value", &[e, e, e], Init::KaimingUniform, rng);
        let post = Mlp::new(store, "decoder.post", &[e, e, e], Init::Zero, rng);
        let mut widths = vec![e];
        widths.extend(std::iter::repeat_n(config.head_hidden, config.head_layers - 1));
        widths.push(3);
        let head = Mlp::new(store, "decoder.head", &widths, Init::KaimingUniform, rng);
        Ok(Self { config, embed_width, query, key, value, post, head })
    }

    /// Keys and values from reference embeddings.
    pub fn keys_values<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, refs: Var) -> Result<(Var, Var), XattnError> {
        Ok((self.key.forward(tape, p, refs)?, self.value.forward(tape, p, refs)?))
    }

    /// RGB in `(0,1)` for rendering embeddings `emb` (`[P, E]`). With
    /// `attend = Some((keys, values, segments))` each segment's queries
    /// attend to its key rows and the result joins the residual path.
    pub fn shade<S: Scalar>(
        &self,
        tape: &Tape<S>,
        p: &Bound,
        emb: Var,
        attend: Option<(Var, Var, &[Segment])>,
    ) -> Result<Var, XattnError> {
        let x = match attend {
            Some((k, v, segments)) => {
                let q = self.query.forward(tape, p, emb)?;
                let a = multihead_attention(tape, q, k, v, segments, self.config.attention_shape())?;
                let post = self.post.forward(tape, p, a)?;
                tape.add(emb, post)?
            }
            None => emb,
        };
        let logits = self.head.forward(tape, p, x)?;
        Ok(tape.sigmoid(logits)?)
    }
}

/// Covered pixels of a frame in instance-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLayout {
    pub height: usize,
    pub width: usize,
    /// Pixel index of every decoded row.
    pub pixels: Vec<usize>,
    pub uvs: Vec<[f64; 2]>,
    /// Instance id and its rows within `pixels`, instances ascending.
    pub groups: Vec<(u32, Range<usize>)>,
}

impl FrameLayout {
    pub fn new(frame: &RasterFrame) -> Self {
        let mut pixels = Vec::with_capacity(frame.covered_count());
        let mut groups = Vec::new();
        for (id, px) in frame.pixels_by_instance() {
            let start = pixels.len();
            pixels.extend(px);
            groups.push((id, start..pixels.len()));
        }
        let uvs = pixels.iter().map(|&p| frame.uv[p]).collect();
        Self { height: frame.height, width: frame.width, pixels, uvs, groups }
    }
}

/// Full decoder: cross-attention against each instance's references.
pub fn decode_frame<S: Scalar>(
    tape: &Tape<S>,
    p: &Bound,
    grid: &HashGridTexture,
    decoder: &Decoder,
    frame: &RasterFrame,
    refs: &ReferenceSet,
) -> Result<Var, XattnError> {
    decode_frame_with(tape, p, grid, decoder, &FrameLayout::new(frame), Some(refs))
}

/// Ablation: the rendering embedding goes straight to the RGB head.
pub fn decode_frame_plain<S: Scalar>(
    tape: &Tape<S>,
    p: &Bound,
    grid: &HashGridTexture,
    decoder: &Decoder,
    frame: &RasterFrame,
) -> Result<Var, XattnError> {
    decode_frame_with(tape, p, grid, decoder, &FrameLayout::new(frame), None)
}

/// Decode a laid-out frame into an `[H, W, 3]` image. `refs = None` skips
/// attention. Uncovered pixels hold the background color as a constant.
pub fn decode_frame_with<S: Scalar>(
    tape: &Tape<S>,
    p: &Bound,
    grid: &HashGridTexture,
    decoder: &Decoder,
    layout: &FrameLayout,
    refs: Option<&ReferenceSet>,
) -> Result<Var, XattnError> {
    let npix = layout.height * layout.width;
    let bg = decoder.config.background.map(S::c);
    let mut background = Vec::with_capacity(npix * 3);
    let mut covered = vec![false; npix];
    for &px in &layout.pixels {
        covered[px] = true;
    }
    for &c in &covered {
        background.extend(if c { [S::zero(); 3] } else { bg });
    }
    let background = Tensor::from_vec(&[npix, 3], background)?;
    if layout.pixels.is_empty() {
        let img = tape.constant(background);
        return Ok(tape.reshape(img, &[layout.height, layout.width, 3])?);
    }

    let emb = grid.encode(tape, p, &layout.uvs)?;
    let rgb = match refs {
        Some(refs) => {
            let mut ref_uvs = Vec::new();
            let mut segments = Vec::with_capacity(layout.groups.len());
            for (id, rows) in &layout.groups {
                let list = refs.instance(*id).filter(|r| !r.is_empty());
                let list = list.ok_or(XattnError::NoReferences { instance: *id })?;
                let start = ref_uvs.len();
                ref_uvs.extend_from_slice(list);
                segments.push(Segment { q: rows.clone(), k: start..ref_uvs.len() });
            }
            let ref_emb = grid.encode(tape, p, &ref_uvs)?;
            let (k, v) = decoder.keys_values(tape, p, ref_emb)?;
            decoder.shade(tape, p, emb, Some((k, v, &segments)))?
        }
        None => decoder.shade(tape, p, emb, None)?,
    };
    let img = tape.scatter_rows(rgb, &layout.pixels, npix)?;
    let img = tape.offset(img, &background)?;
    Ok(tape.reshape(img, &[layout.height, layout.width, 3])?)
}
