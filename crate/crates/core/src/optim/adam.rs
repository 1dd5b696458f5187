use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::diffcore::{MomentPair, OptimizerSection, ParamStore, RawTensor, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments for every tensor of one store, plus the step
/// counter used for bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    /// Tensor updates skipped because of a non-finite gradient.
    pub skipped: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<S>> = store.iter().map(|(_, t)| Tensor::zeros_like(t)).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros, skipped: 0 }
    }

    /// One bias-corrected Adam update of every tensor in `store`. A tensor
    /// whose gradient holds a NaN or infinity keeps its value and moments.
    /// Returns the number of tensors skipped this call.
    pub fn update(&mut self, store: &mut ParamStore<S>, grads: &[Tensor<S>], lr: f64) -> Result<usize, OptimError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(OptimError::Shape(format!(
                "adam: {} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        for ((id, g), m) in store.ids().zip(grads).zip(&self.m) {
            if g.shape() != store.get(id).shape() || m.shape() != g.shape() {
                return Err(OptimError::Shape(format!(
                    "adam: gradient {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    store.name(id),
                    store.get(id).shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let mut skipped = 0;
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = &grads[k];
            if !g.all_finite() {
                log::warn!("adam: non-finite gradient for {}, update skipped", store.name(id));
                skipped += 1;
                continue;
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i].f64();
                let mi = beta1 * m[i].f64() + (1.0 - beta1) * gi;
                let vi = beta2 * v[i].f64() + (1.0 - beta2) * gi * gi;
                m[i] = S::c(mi);
                v[i] = S::c(vi);
                let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p[i] = S::c(p[i].f64() - step);
            }
        }
        self.skipped += skipped as u64;
        Ok(skipped)
    }

    /// Moments keyed by the parameter names of `store`.
    pub fn to_section(&self, store: &ParamStore<S>) -> OptimizerSection {
        let moments = store
            .iter()
            .zip(self.m.iter().zip(&self.v))
            .map(|((name, _), (m, v))| MomentPair {
                name: name.to_string(),
                m: RawTensor::from_tensor(m),
                v: RawTensor::from_tensor(v),
            })
            .collect();
        OptimizerSection { step: self.step, moments }
    }

    /// Restore moments for every parameter of `store` from `section`.
    pub fn from_section(store: &ParamStore<S>, section: &OptimizerSection, config: AdamConfig) -> Result<Self, OptimError> {
        let mut state = Self::new(store, config);
        state.step = section.step;
        for (k, (name, t)) in store.iter().enumerate() {
            let pair = section
                .moments
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| OptimError::Shape(format!("optimizer section has no moments for {name}")))?;
            let (m, v) = (pair.m.to_tensor::<S>()?, pair.v.to_tensor::<S>()?);
            if m.shape() != t.shape() || v.shape() != t.shape() {
                return Err(OptimError::Shape(format!("moments for {name} have the wrong shape")));
            }
            state.m[k] = m;
            state.v[k] = v;
        }
        Ok(state)
    }
}
