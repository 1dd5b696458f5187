//! Adam, timestep annealing, viewpoint sampling and the alternating
//! texture-field / LoRA training loop, plus direct UV regression.

mod adam;
mod image;
mod train;
mod uvfit;

pub use adam::{AdamConfig, AdamState};
pub use image::{distill_image, ImageDistillConfig, ImageDistillReport};
pub use train::{
    reference_view, CriticKind, FieldPhase, IterRecord, Model, Prior, ReferenceView, ScoreCritic, TrainConfig,
    TrainReport, Trainer, METRICS_HEADER,
};
pub use uvfit::{fit_uv_function, mixed_frequency_target, UvFitConfig, UvFitReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::CriticError;
use crate::diffcore::DiffError;
use crate::scene::{Camera, SceneError};
use crate::texfield::TexError;
use crate::xattn::XattnError;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("train config: {0}")]
    Config(String),
    #[error("{0}")]
    Shape(String),
    #[error("camera rig is empty")]
    EmptyRig,
    #[error("aborted after {0} consecutive non-finite iterations")]
    Diverged(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tex(#[from] TexError),
    #[error(transparent)]
    Xattn(#[from] XattnError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Diffusion-time sampling: `before` until iteration `anneal_at`, `after`
/// from then on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestepSchedule {
    pub anneal_at: u64,
    pub before: [f64; 2],
    pub after: [f64; 2],
}

impl TimestepSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        for r in [self.before, self.after] {
            if !(0.0 <= r[0] && r[0] < r[1] && r[1] <= 1.0) {
                return Err(OptimError::Config(format!("timestep range {r:?} is not a subrange of [0,1]")));
            }
        }
        Ok(())
    }

    pub fn range(&self, iteration: u64) -> [f64; 2] {
        if iteration < self.anneal_at {
            self.before
        } else {
            self.after
        }
    }
}

pub fn sample_timestep(iteration: u64, schedule: &TimestepSchedule, rng: &mut impl Rng) -> f64 {
    let [lo, hi] = schedule.range(iteration);
    lo + (hi - lo) * rng.random::<f64>()
}

/// Uniform choice of a rig camera; returns its index too.
pub fn sample_viewpoint<'a>(rig: &'a [Camera], rng: &mut impl Rng) -> Result<(usize, &'a Camera), OptimError> {
    if rig.is_empty() {
        return Err(OptimError::EmptyRig);
    }
    let k = rng.random_range(0..rig.len());
    Ok((k, &rig[k]))
}
