use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_timestep, AdamConfig, AdamState, OptimError, TimestepSchedule};
use crate::critic::{
    lora_loss, sample_noise, sds_grad, vsd_grad, Adapted, Conditioning, DeltaDenoiser, LoraConfig, LoraDenoiser,
    LoraMode, NoiseSchedule, ScheduleKind,
};
use crate::diffcore::{ParamStore, Scalar, Tape, Tensor};

/// Score distillation straight onto image pixels against a delta prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageDistillConfig {
    pub steps: usize,
    pub lr_image: f64,
    pub lr_lora: f64,
    pub timesteps: TimestepSchedule,
    pub schedule_steps: usize,
    pub lora: LoraConfig,
    /// `false` distills with SDS and trains no lora.
    pub vsd: bool,
    pub lora_mode: LoraMode,
    pub adam: AdamConfig,
}

impl Default for ImageDistillConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr_image: 1e-3,
            lr_lora: 3e-3,
            timesteps: TimestepSchedule { anneal_at: 333, before: [0.02, 0.98], after: [0.02, 0.50] },
            schedule_steps: 1000,
            lora: LoraConfig::default(),
            vsd: true,
            lora_mode: LoraMode::Sample,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ImageDistillReport<S> {
    /// L2 distance to the target before the first step and after each step.
    pub distances: Vec<f64>,
    pub lora_losses: Vec<f64>,
    pub image: Tensor<S>,
}

impl<S> ImageDistillReport<S> {
    pub fn relative_distance(&self) -> f64 {
        self.distances.last().copied().unwrap_or(f64::NAN) / self.distances[0]
    }
}

fn l2<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum::<f64>().sqrt()
}

/// Distill `target` into a raw `[h, w, c]` image starting from `init`.
/// Each step draws `t` and noise once and uses them for both the image
/// update and the lora update.
pub fn distill_image<S: Scalar>(
    init: Tensor<S>,
    target: &Tensor<S>,
    cond: &Conditioning<S>,
    config: &ImageDistillConfig,
    rng: &mut impl Rng,
) -> Result<ImageDistillReport<S>, OptimError> {
    if init.shape() != target.shape() || init.shape().len() != 3 {
        return Err(OptimError::Shape(format!("image {:?} vs target {:?}", init.shape(), target.shape())));
    }
    config.timesteps.validate()?;
    let schedule = NoiseSchedule::new(ScheduleKind::Linear, config.schedule_steps)?;
    let prior = DeltaDenoiser::new(target.clone(), schedule.clone());
    let mut lora = config
        .vsd
        .then(|| LoraDenoiser::<S>::new(LoraConfig { channels: init.shape()[2], ..config.lora.clone() }, rng))
        .transpose()?;
    let mut lora_adam = lora.as_ref().map(|l| AdamState::new(&l.store, config.adam));

    let mut store = ParamStore::new();
    let id = store.add("image", init);
    let mut adam = AdamState::new(&store, config.adam);
    let mut distances = vec![l2(store.get(id), target)];
    let mut lora_losses = Vec::new();

    for step in 0..config.steps {
        let t = sample_timestep(step as u64, &config.timesteps, rng);
        let image = store.get(id).clone();
        let eps = sample_noise::<S>(image.shape(), rng);
        let pair = |net| Adapted { base: &prior, net, mode: config.lora_mode, schedule: &schedule };
        let grad = match &lora {
            Some(l) => vsd_grad(&image, &prior, &pair(l), cond, t, &eps, &schedule)?,
            None => sds_grad(&image, &prior, cond, t, &eps, &schedule)?,
        };
        adam.update(&mut store, &[grad], config.lr_image)?;
        if let (Some(l), Some(la)) = (lora.as_mut(), lora_adam.as_mut()) {
            let tape = Tape::new();
            let pair = Adapted { base: &prior, net: &*l, mode: config.lora_mode, schedule: &schedule };
            let (loss, p) = lora_loss(&tape, &pair, &image, cond, t, &eps, &schedule)?;
            lora_losses.push(tape.value(loss).item().f64());
            let mut g = tape.backward(loss)?;
            let grads = l.store.collect_grads(&p, &mut g);
            la.update(&mut l.store, &grads, config.lr_lora)?;
        }
        distances.push(l2(store.get(id), target));
    }
    Ok(ImageDistillReport { distances, lora_losses, image: store.get(id).clone() })
}
