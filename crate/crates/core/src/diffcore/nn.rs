//! Fully connected layers on top of the tape.

use rand::Rng;

use super::{Bound, DiffError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform,
    Zero,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = match init {
            Init::Zero => vec![S::zero(); fan_in * fan_out],
            Init::KaimingUniform => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..fan_in * fan_out).map(|_| S::c(rng.random_range(-bound..bound))).collect()
            }
        };
        let weight = store.add(format!("{name}.weight"), Tensor::from_vec(&[fan_in, fan_out], w).unwrap());
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, x: Var) -> Result<Var, DiffError> {
        let h = tape.matmul(x, p.get(self.weight))?;
        tape.add(h, p.get(self.bias))
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary, input first: `[in, h1, ..., out]`.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        widths: &[usize],
        last_init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2);
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last_init } else { Init::KaimingUniform };
                Linear::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], init, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<S: Scalar>(&self, tape: &Tape<S>, p: &Bound, mut x: Var) -> Result<Var, DiffError> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, p, x)?;
            if i + 1 < n {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }
}
