//! Blockwise multi-head cross-attention.
//!
//! Queries are split into tiles; each tile streams its segment's keys in
//! blocks while keeping a running row max and denominator, so the full
//! score matrix never exists. Backward recomputes scores from the saved
//! per-row log-sum-exp. Tile boundaries do not depend on the thread count
//! and partial key/value gradients are reduced in tile order, so results
//! are bit-identical for any degree of parallelism.

use std::ops::Range;

use rayon::prelude::*;

use crate::diffcore::{gemm, CustomOp, DiffError, MatMut, MatRef, Scalar, Tape, Tensor, Var};

/// Queries `q` attend only to keys `k` (half-open row ranges).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub q: Range<usize>,
    pub k: Range<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub heads: usize,
    pub query_tile: usize,
    pub key_tile: usize,
}

struct Tile {
    rows: Range<usize>,
    keys: Range<usize>,
}

fn tiles(segments: &[Segment], query_tile: usize) -> Vec<Tile> {
    let mut out = Vec::new();
    for s in segments {
        let mut r = s.q.start;
        while r < s.q.end {
            let e = (r + query_tile).min(s.q.end);
            out.push(Tile { rows: r..e, keys: s.k.clone() });
            r = e;
        }
    }
    out
}

fn validate(
    q: &[usize],
    k: &[usize],
    v: &[usize],
    segments: &[Segment],
    shape: &AttentionShape,
) -> Result<(), DiffError> {
    if q.len() != 2 || k.len() != 2 || v.len() != 2 || q[1] != k[1] || k != v {
        return Err(DiffError::ShapeMismatch { op: "attention", lhs: q.to_vec(), rhs: k.to_vec() });
    }
    if shape.heads == 0 || !q[1].is_multiple_of(shape.heads) {
        return Err(DiffError::Invalid(format!("width {} is not divisible by {} heads", q[1], shape.heads)));
    }
    if shape.query_tile == 0 || shape.key_tile == 0 {
        return Err(DiffError::Invalid("attention tiles must be nonempty".into()));
    }
    let mut next = 0;
    for s in segments {
        if s.k.is_empty() {
            return Err(DiffError::Invalid("instance has no references".into()));
        }
        if s.q.start < next || s.q.end > q[0] || s.k.end > k[0] {
            return Err(DiffError::Invalid(format!("segment {s:?} out of order or out of range")));
        }
        next = s.q.end;
    }
    Ok(())
}

/// Forward pass for one tile: output rows `[n, e]` and log-sum-exp `[n, heads]`.
fn forward_tile<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    tile: &Tile,
    shape: &AttentionShape,
) -> (Vec<S>, Vec<S>) {
    let e = q.last_dim();
    let dh = e / shape.heads;
    let scale = S::one() / S::c(dh as f64).sqrt();
    let n = tile.rows.len();
    let mut out = vec![S::zero(); n * e];
    let mut lse = vec![S::zero(); n * shape.heads];
    let mut s = vec![S::zero(); n * shape.key_tile];
    let qrows = &q.data()[tile.rows.start * e..tile.rows.end * e];
    for h in 0..shape.heads {
        let qh = MatRef::cols(qrows, n, e, h * dh, dh);
        let mut m = vec![S::neg_infinity(); n];
        let mut l = vec![S::zero(); n];
        let mut acc = vec![S::zero(); n * dh];
        let mut c0 = tile.keys.start;
        while c0 < tile.keys.end {
            let b = (tile.keys.end - c0).min(shape.key_tile);
            let kh = MatRef::cols(k.data(), k.rows(), e, h * dh, dh).rows_slice(c0, b);
            let vh = MatRef::cols(v.data(), v.rows(), e, h * dh, dh).rows_slice(c0, b);
            let sb = &mut s[..n * b];
            gemm(scale, qh, kh.t(), S::zero(), MatMut::new(sb, n, b));
            for i in 0..n {
                let row = &mut sb[i * b..(i + 1) * b];
                let block_max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let new_m = m[i].max(block_max);
                let corr = (m[i] - new_m).exp();
                let mut total = S::zero();
                for x in row.iter_mut() {
                    *x = (*x - new_m).exp();
                    total = total + *x;
                }
                l[i] = l[i] * corr + total;
                for a in &mut acc[i * dh..(i + 1) * dh] {
                    *a = *a * corr;
                }
                m[i] = new_m;
            }
            gemm(S::one(), MatRef::new(sb, n, b), vh, S::one(), MatMut::new(&mut acc, n, dh));
            c0 += b;
        }
        for i in 0..n {
            let inv = S::one() / l[i];
            for d in 0..dh {
                out[i * e + h * dh + d] = acc[i * dh + d] * inv;
            }
            lse[i * shape.heads + h] = m[i] + l[i].ln();
        }
    }
    (out, lse)
}

struct TileGrads<S> {
    dq: Vec<S>,
    dk: Vec<S>,
    dv: Vec<S>,
}

#[allow(clippy::too_many_arguments)]
fn backward_tile<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    out: &Tensor<S>,
    dout: &Tensor<S>,
    lse: &[S],
    tile: &Tile,
    shape: &AttentionShape,
) -> TileGrads<S> {
    let e = q.last_dim();
    let dh = e / shape.heads;
    let scale = S::one() / S::c(dh as f64).sqrt();
    let n = tile.rows.len();
    let nk = tile.keys.len();
    let span = tile.rows.start * e..tile.rows.end * e;
    let (qrows, orows, drows) = (&q.data()[span.clone()], &out.data()[span.clone()], &dout.data()[span]);
    let mut dq = vec![S::zero(); n * e];
    let mut dk = vec![S::zero(); nk * e];
    let mut dv = vec![S::zero(); nk * e];
    let mut p = vec![S::zero(); n * shape.key_tile];
    let mut dp = vec![S::zero(); n * shape.key_tile];
    for h in 0..shape.heads {
        let qh = MatRef::cols(qrows, n, e, h * dh, dh);
        let doh = MatRef::cols(drows, n, e, h * dh, dh);
        let delta: Vec<S> = (0..n)
            .map(|i| (0..dh).map(|d| drows[i * e + h * dh + d] * orows[i * e + h * dh + d]).sum())
            .collect();
        let mut c0 = tile.keys.start;
        while c0 < tile.keys.end {
            let b = (tile.keys.end - c0).min(shape.key_tile);
            let local = c0 - tile.keys.start;
            let kh = MatRef::cols(k.data(), k.rows(), e, h * dh, dh).rows_slice(c0, b);
            let vh = MatRef::cols(v.data(), v.rows(), e, h * dh, dh).rows_slice(c0, b);
            let (pb, dpb) = (&mut p[..n * b], &mut dp[..n * b]);
            gemm(scale, qh, kh.t(), S::zero(), MatMut::new(pb, n, b));
            gemm(S::one(), doh, vh.t(), S::zero(), MatMut::new(dpb, n, b));
            for i in 0..n {
                let l = lse[(tile.rows.start + i) * shape.heads + h];
                for j in 0..b {
                    let pij = (pb[i * b + j] - l).exp();
                    pb[i * b + j] = pij;
                    // dS = P ∘ (dP − delta); the logit scale is folded into the gemms below
                    dpb[i * b + j] = pij * (dpb[i * b + j] - delta[i]);
                }
            }
            let pm = MatRef::new(&*pb, n, b);
            let dsm = MatRef::new(&*dpb, n, b);
            gemm(scale, dsm, kh, S::one(), MatMut::cols(&mut dq, n, e, h * dh, dh));
            let dk_rows = &mut dk[local * e..(local + b) * e];
            gemm(scale, dsm.t(), qh, S::one(), MatMut::cols(dk_rows, b, e, h * dh, dh));
            let dv_rows = &mut dv[local * e..(local + b) * e];
            gemm(S::one(), pm.t(), doh, S::one(), MatMut::cols(dv_rows, b, e, h * dh, dh));
            c0 += b;
        }
    }
    TileGrads { dq, dk, dv }
}

struct AttentionOp<S> {
    segments: Vec<Segment>,
    shape: AttentionShape,
    lse: Vec<S>,
}

impl<S: Scalar> CustomOp<S> for AttentionOp<S> {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, grad_out: &Tensor<S>, inputs: &[&Tensor<S>], output: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let e = q.last_dim();
        let tiles = tiles(&self.segments, self.shape.query_tile);
        let parts: Vec<TileGrads<S>> = tiles
            .par_iter()
            .map(|t| backward_tile(q, k, v, output, grad_out, &self.lse, t, &self.shape))
            .collect();
        let mut dq = vec![S::zero(); q.len()];
        let mut dk = vec![S::zero(); k.len()];
        let mut dv = vec![S::zero(); v.len()];
        for (t, g) in tiles.iter().zip(parts) {
            dq[t.rows.start * e..t.rows.end * e].copy_from_slice(&g.dq);
            let span = t.keys.start * e..t.keys.end * e;
            for (d, x) in dk[span.clone()].iter_mut().zip(&g.dk) {
                *d = *d + *x;
            }
            for (d, x) in dv[span].iter_mut().zip(&g.dv) {
                *d = *d + *x;
            }
        }
        let wrap = |data, t: &Tensor<S>| Some(Tensor::from_vec(t.shape(), data).expect("input shape"));
        vec![wrap(dq, q), wrap(dk, k), wrap(dv, v)]
    }
}

/// Forward values without a tape: output `[P, E]` and per-row, per-head
/// log-sum-exp of the scaled scores. Rows outside every segment are zero.
pub fn attention_values<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    segments: &[Segment],
    shape: &AttentionShape,
) -> Result<(Tensor<S>, Vec<S>), DiffError> {
    validate(q.shape(), k.shape(), v.shape(), segments, shape)?;
    let e = q.last_dim();
    let tiles = tiles(segments, shape.query_tile);
    let parts: Vec<(Vec<S>, Vec<S>)> = tiles.par_iter().map(|t| forward_tile(q, k, v, t, shape)).collect();
    let mut out = vec![S::zero(); q.len()];
    let mut lse = vec![S::zero(); q.rows() * shape.heads];
    for (t, (o, l)) in tiles.iter().zip(parts) {
        out[t.rows.start * e..t.rows.end * e].copy_from_slice(&o);
        lse[t.rows.start * shape.heads..t.rows.end * shape.heads].copy_from_slice(&l);
    }
    Ok((Tensor::from_vec(&[q.rows(), e], out)?, lse))
}

/// Tape-recorded multi-head scaled dot-product attention over segments.
pub fn multihead_attention<S: Scalar>(
    tape: &Tape<S>,
    q: Var,
    k: Var,
    v: Var,
    segments: &[Segment],
    shape: AttentionShape,
) -> Result<Var, DiffError> {
    let (out, lse) = attention_values(&tape.value(q), &tape.value(k), &tape.value(v), segments, &shape)?;
    tape.custom(&[q, k, v], out, Box::new(AttentionOp { segments: segments.to_vec(), shape, lse }))
}

/// Attention weights of head `h` for query rows `rows` of one segment,
/// reconstructed from the saved log-sum-exp: `[rows.len(), |segment keys|]`.
pub fn attention_weights<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    lse: &[S],
    segment: &Segment,
    heads: usize,
    head: usize,
) -> Tensor<S> {
    let e = q.last_dim();
    let dh = e / heads;
    let scale = S::one() / S::c(dh as f64).sqrt();
    let (n, b) = (segment.q.len(), segment.k.len());
    let mut w = vec![S::zero(); n * b];
    let qh = MatRef::cols(q.data(), q.rows(), e, head * dh, dh).rows_slice(segment.q.start, n);
    let kh = MatRef::cols(k.data(), k.rows(), e, head * dh, dh).rows_slice(segment.k.start, b);
    gemm(scale, qh, kh.t(), S::zero(), MatMut::new(&mut w, n, b));
    for i in 0..n {
        let l = lse[(segment.q.start + i) * heads + head];
        for x in &mut w[i * b..(i + 1) * b] {
            *x = (*x - l).exp();
        }
    }
    Tensor::from_vec(&[n, b], w).expect("weights shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
        Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    /// Direct softmax(QKᵀ/√d)V per head and segment.
    fn dense(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, segs: &[Segment], heads: usize) -> Vec<f64> {
        let e = q.last_dim();
        let dh = e / heads;
        let mut out = vec![0.0; q.len()];
        for s in segs {
            for i in s.q.clone() {
                for h in 0..heads {
                    let logits: Vec<f64> = s
                        .k
                        .clone()
                        .map(|j| (0..dh).map(|d| q.data()[i * e + h * dh + d] * k.data()[j * e + h * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let ex: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
                    let z: f64 = ex.iter().sum();
                    for (w, j) in ex.iter().zip(s.k.clone()) {
                        for d in 0..dh {
                            out[i * e + h * dh + d] += w / z * v.data()[j * e + h * dh + d];
                        }
                    }
                }
            }
        }
        out
    }

    fn shape(heads: usize, qt: usize, kt: usize) -> AttentionShape {
        AttentionShape { heads, query_tile: qt, key_tile: kt }
    }

    #[test]
    fn single_reference_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = rand_tensor(&mut rng, 5, 8, 1.0);
        let k = rand_tensor(&mut rng, 1, 8, 1.0);
        let v = rand_tensor(&mut rng, 1, 8, 1.0);
        let (out, _) = attention_values(&q, &k, &v, &[Segment { q: 0..5, k: 0..1 }], &shape(2, 2, 4)).unwrap();
        for row in out.data().chunks(8) {
            for (a, b) in row.iter().zip(v.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = rand_tensor(&mut rng, 3, 4, 1.0);
        let row = rand_tensor(&mut rng, 1, 4, 1.0);
        let k = Tensor::from_vec(&[6, 4], row.data().repeat(6)).unwrap();
        let v = rand_tensor(&mut rng, 6, 4, 1.0);
        let seg = Segment { q: 0..3, k: 0..6 };
        let (_, lse) = attention_values(&q, &k, &v, std::slice::from_ref(&seg), &shape(1, 2, 4)).unwrap();
        for &w in attention_weights(&q, &k, &lse, &seg, 1, 0).data() {
            assert!((w - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blockwise_matches_dense_with_ragged_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_tensor(&mut rng, 11, 8, 2.0);
        let k = rand_tensor(&mut rng, 9, 8, 2.0);
        let v = rand_tensor(&mut rng, 9, 8, 1.0);
        let segs = [Segment { q: 0..7, k: 0..5 }, Segment { q: 7..11, k: 5..9 }];
        let (out, lse) = attention_values(&q, &k, &v, &segs, &shape(2, 3, 2)).unwrap();
        let want = dense(&q, &k, &v, &segs, 2);
        assert!(out.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
        for seg in &segs {
            for h in 0..2 {
                for row in attention_weights(&q, &k, &lse, seg, 2, h).data().chunks(seg.k.len()) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_reference_segment_is_an_error() {
        let q = Tensor::<f64>::zeros(&[2, 4]);
        let k = Tensor::<f64>::zeros(&[3, 4]);
        let err = attention_values(&q, &k, &k, &[Segment { q: 0..2, k: 1..1 }], &shape(1, 4, 4)).unwrap_err();
        assert!(err.to_string().contains("instance has no references"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let point = vec![rand_tensor(&mut rng, 6, 4, 1.0), rand_tensor(&mut rng, 5, 4, 1.0), rand_tensor(&mut rng, 5, 4, 1.0)];
        let w = rand_tensor(&mut rng, 6, 4, 1.0);
        let segs = [Segment { q: 0..4, k: 0..3 }, Segment { q: 4..6, k: 2..5 }];
        let report = crate::diffcore::grad_check(
            |tape: &Tape<f64>, x: &[Var]| -> Result<Var, DiffError> {
                let a = multihead_attention(tape, x[0], x[1], x[2], &segs, shape(2, 3, 2))?;
                let wv = tape.constant(w.clone());
                let y = tape.mul(a, wv)?;
                tape.sum(y)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }
}
