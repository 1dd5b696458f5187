use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, OptimError};
use crate::diffcore::nn::{Init, Linear};
use crate::diffcore::{ParamStore, Scalar, Tape, Tensor};
use crate::texfield::{GridConfig, HashGridTexture};

/// Direct regression of a UV function by a grid plus a linear readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UvFitConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// The evaluation lattice is `eval_resolution²` texel centres.
    pub eval_resolution: usize,
    pub adam: AdamConfig,
}

impl Default for UvFitConfig {
    fn default() -> Self {
        Self { steps: 1000, batch: 1024, lr: 1e-2, eval_resolution: 128, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UvFitReport {
    pub parameters: usize,
    /// Batch loss per step.
    pub losses: Vec<f64>,
    /// MSE over the evaluation lattice after the last step.
    pub final_mse: f64,
}

/// A target with a smooth large-scale component plus fine stripes, in
/// `[0, 1]` per channel.
pub fn mixed_frequency_target(uv: [f64; 2]) -> [f64; 3] {
    use std::f64::consts::TAU;
    let [u, v] = uv;
    let low = 0.2 * (TAU * (1.5 * u + 0.5 * v)).sin() * (TAU * v).cos();
    let high = 0.12 * (TAU * 48.0 * u).sin() + 0.08 * (TAU * (31.0 * v + 17.0 * u)).sin();
    [0.5 + low + high, 0.5 - low + 0.5 * high, 0.5 + 0.6 * low - high]
}

/// Fit `target` on uniformly drawn batches and report the lattice MSE.
/// The readout is one linear layer from the grid embedding to RGB.
pub fn fit_uv_function<S: Scalar>(
    grid: GridConfig,
    target: impl Fn([f64; 2]) -> [f64; 3],
    config: &UvFitConfig,
    rng: &mut impl Rng,
) -> Result<UvFitReport, OptimError> {
    let mut store = ParamStore::<S>::new();
    let field = HashGridTexture::new(grid, &mut store, rng)?;
    let readout = Linear::new(&mut store, "readout", field.embed_width(), 3, Init::KaimingUniform, rng);
    let mut adam = AdamState::new(&store, config.adam);

    let predict = |store: &ParamStore<S>, uvs: &[[f64; 2]]| -> Result<Tensor<S>, OptimError> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let out = readout.forward(&tape, &p, field.encode(&tape, &p, uvs)?)?;
        Ok((*tape.value(out)).clone())
    };
    let colors = |uvs: &[[f64; 2]]| -> Tensor<S> {
        let data = uvs.iter().flat_map(|&uv| target(uv)).map(S::c).collect();
        Tensor::from_vec(&[uvs.len(), 3], data).expect("target shape")
    };

    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let uvs: Vec<[f64; 2]> = (0..config.batch).map(|_| [rng.random(), rng.random()]).collect();
        let tape = Tape::new();
        let p = store.bind(&tape)?;
        let out = readout.forward(&tape, &p, field.encode(&tape, &p, &uvs)?)?;
        let d = tape.sub(out, tape.constant(colors(&uvs)))?;
        let loss = tape.mean(tape.mul(d, d)?)?;
        losses.push(tape.value(loss).item().f64());
        let mut g = tape.backward(loss)?;
        let grads = store.collect_grads(&p, &mut g);
        adam.update(&mut store, &grads, config.lr)?;
    }

    let r = config.eval_resolution;
    let lattice: Vec<[f64; 2]> =
        (0..r * r).map(|k| [((k % r) as f64 + 0.5) / r as f64, ((k / r) as f64 + 0.5) / r as f64]).collect();
    let (pred, want) = (predict(&store, &lattice)?, colors(&lattice));
    let se: f64 = pred.data().iter().zip(want.data()).map(|(a, b)| (a.f64() - b.f64()).powi(2)).sum();
    Ok(UvFitReport { parameters: store.scalar_count(), losses, final_mse: se / want.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn target_stays_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10_000 {
            let c = mixed_frequency_target([rng.random(), rng.random()]);
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)), "{c:?}");
        }
    }

    #[test]
    fn constant_target_is_fit_quickly() {
        let grid = GridConfig { levels: 2, table_size: 1 << 8, features: 2, min_resolution: 4, max_resolution: 8 };
        let config = UvFitConfig { steps: 200, batch: 64, eval_resolution: 16, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = fit_uv_function::<f32>(grid, |_| [0.25, 0.5, 0.75], &config, &mut rng).unwrap();
        assert!(report.final_mse < 1e-4, "{}", report.final_mse);
        assert_eq!(report.losses.len(), 200);
    }
}
