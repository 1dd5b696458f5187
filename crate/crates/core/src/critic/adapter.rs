use serde::{Deserialize, Serialize};

use super::CriticError;
use crate::diffcore::{CustomOp, Scalar, Tape, Tensor, Var};

/// Linear map from rendered RGB to the space the critic works in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CriticSpaceAdapter {
    #[default]
    Identity,
    /// Mean over `k×k` windows; trailing partial windows average the
    /// pixels they contain.
    AvgPool { k: usize },
}

impl CriticSpaceAdapter {
    pub fn validate(&self) -> Result<(), CriticError> {
        match self {
            Self::AvgPool { k: 0 } => Err(CriticError::Config("pool factor must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Output `[h, w]` for an input of `[h, w]`.
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        match *self {
            Self::Identity => (h, w),
            Self::AvgPool { k } => (h.div_ceil(k), w.div_ceil(k)),
        }
    }

    /// Apply to an `[h, w, c]` tensor.
    pub fn apply<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>, CriticError> {
        let (h, w, c) = dims(x)?;
        match *self {
            Self::Identity => Ok(x.clone()),
            Self::AvgPool { k } => Ok(pool_forward(x.data(), h, w, c, k)),
        }
    }

    /// Tape-recorded [`apply`](Self::apply).
    pub fn record<S: Scalar>(&self, tape: &Tape<S>, x: Var) -> Result<Var, CriticError> {
        match *self {
            Self::Identity => Ok(x),
            Self::AvgPool { k } => {
                let value = tape.value(x);
                let (h, w, c) = dims(&value)?;
                let out = pool_forward(value.data(), h, w, c, k);
                Ok(tape.custom(&[x], out, Box::new(PoolOp { h, w, c, k }))?)
            }
        }
    }

    /// Pool a single-channel `[h, w]` map such as depth.
    pub fn apply_map<S: Scalar>(&self, map: &[S], h: usize, w: usize) -> Tensor<S> {
        match *self {
            Self::Identity => Tensor::from_vec(&[h, w], map.to_vec()).expect("map shape"),
            Self::AvgPool { k } => pool_forward(map, h, w, 1, k).reshaped(&[h.div_ceil(k), w.div_ceil(k)]).expect("map shape"),
        }
    }
}

fn dims<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize), CriticError> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(CriticError::Shape { what: "adapter input [h,w,c]", lhs: x.shape().to_vec(), rhs: vec![] }),
    }
}

fn window(i: usize, k: usize, n: usize) -> std::ops::Range<usize> {
    i * k..((i + 1) * k).min(n)
}

fn pool_forward<S: Scalar>(x: &[S], h: usize, w: usize, c: usize, k: usize) -> Tensor<S> {
    let (oh, ow) = (h.div_ceil(k), w.div_ceil(k));
    let mut out = vec![S::zero(); oh * ow * c];
    for oi in 0..oh {
        for oj in 0..ow {
            let (ri, rj) = (window(oi, k, h), window(oj, k, w));
            let inv = S::one() / S::c((ri.len() * rj.len()) as f64);
            for i in ri {
                for j in rj.clone() {
                    for ch in 0..c {
                        let o = &mut out[(oi * ow + oj) * c + ch];
                        *o = *o + x[(i * w + j) * c + ch];
                    }
                }
            }
            for ch in 0..c {
                let o = &mut out[(oi * ow + oj) * c + ch];
                *o = *o * inv;
            }
        }
    }
    Tensor::from_vec(&[oh, ow, c], out).expect("pool shape")
}

struct PoolOp {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
}

impl<S: Scalar> CustomOp<S> for PoolOp {
    fn name(&self) -> &'static str {
        "avg_pool"
    }

    fn backward(&self, grad_out: &Tensor<S>, _inputs: &[&Tensor<S>], _output: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (h, w, c, k) = (self.h, self.w, self.c, self.k);
        let ow = w.div_ceil(k);
        let mut g = vec![S::zero(); h * w * c];
        for i in 0..h {
            for j in 0..w {
                let (oi, oj) = (i / k, j / k);
                let n = window(oi, k, h).len() * window(oj, k, w).len();
                let inv = S::one() / S::c(n as f64);
                for ch in 0..c {
                    g[(i * w + j) * c + ch] = grad_out.data()[(oi * ow + oj) * c + ch] * inv;
                }
            }
        }
        vec![Some(Tensor::from_vec(&[h, w, c], g).expect("pool grad shape"))]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&[h, w, c], data).unwrap()
    }

    #[test]
    fn partial_windows_use_ceil_dims() {
        let a = CriticSpaceAdapter::AvgPool { k: 2 };
        let x = img(3, 3, 1, (0..9).map(f64::from).collect());
        let y = a.apply(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert_eq!(y.data(), &[2.0, 3.5, 6.5, 8.0]);
    }

    #[test]
    fn backward_spreads_uniformly() {
        let a = CriticSpaceAdapter::AvgPool { k: 2 };
        let tape = Tape::<f64>::new();
        let x = tape.leaf(img(4, 4, 2, vec![0.0; 32])).unwrap();
        let y = a.record(&tape, x).unwrap();
        let mut up = vec![0.0; 8];
        up[0] = 1.0;
        let g = tape.backward_with(y, img(2, 2, 2, up)).unwrap();
        let gx = g.get(x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i < 2 && j < 2 { 0.25 } else { 0.0 };
                assert_eq!(gx.data()[(i * 4 + j) * 2], want);
                assert_eq!(gx.data()[(i * 4 + j) * 2 + 1], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn pooling_is_linear(
            xs in proptest::collection::vec(-1.0f64..1.0, 5 * 7 * 3),
            ys in proptest::collection::vec(-1.0f64..1.0, 5 * 7 * 3),
            a in -2.0f64..2.0, b in -2.0f64..2.0, k in 1usize..5,
        ) {
            let ad = CriticSpaceAdapter::AvgPool { k };
            let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
            let lhs = ad.apply(&img(5, 7, 3, combo)).unwrap();
            let (px, py) = (ad.apply(&img(5, 7, 3, xs)).unwrap(), ad.apply(&img(5, 7, 3, ys)).unwrap());
            for ((l, x), y) in lhs.data().iter().zip(px.data()).zip(py.data()) {
                prop_assert!((l - (a * x + b * y)).abs() <= 1e-12);
            }
        }
    }
}
