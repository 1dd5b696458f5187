use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::critic::{CriticSpaceAdapter, LoraConfig, LoraMode, ScheduleKind};
use crate::optim::TrainConfig;
use crate::texfield::GridConfig;
use crate::xattn::DecoderConfig;

use super::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

/// Where the score critic's pretrained side comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    /// Delta denoiser at the ground-truth view of each sampled camera.
    GroundTruthViews,
    /// Predicts zero noise everywhere.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub prior: PriorKind,
    pub schedule: ScheduleKind,
    pub schedule_steps: usize,
    pub adapter: CriticSpaceAdapter,
    pub lora: LoraConfig,
    pub lora_mode: LoraMode,
    pub prompt: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BakeConfig {
    pub resolution: usize,
    pub background: [f64; 3],
}

/// Everything a run needs, as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Directory written by `gen-scene`.
    pub scene: Option<PathBuf>,
    /// Rig JSON replacing the scene's own rig.
    pub rig: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Cameras generated by `gen-scene`.
    pub rig_count: usize,
    pub grid: GridConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub critic: CriticConfig,
    pub bake: BakeConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                preset,
                seed: 0,
                scene: None,
                rig: None,
                out: None,
                rig_count: 64,
                grid: GridConfig::desk(),
                decoder: DecoderConfig::desk(),
                train: TrainConfig::desk(),
                critic: CriticConfig {
                    prior: PriorKind::GroundTruthViews,
                    schedule: ScheduleKind::Linear,
                    schedule_steps: 1000,
                    adapter: CriticSpaceAdapter::AvgPool { k: 2 },
                    lora: LoraConfig::default(),
                    lora_mode: LoraMode::Sample,
                    prompt: Vec::new(),
                },
                bake: BakeConfig { resolution: 1024, background: [0.0; 3] },
            },
            Preset::Paper => {
                let desk = Self::preset(Preset::Desk);
                Self {
                    preset,
                    rig_count: 5000,
                    grid: GridConfig::paper(),
                    decoder: DecoderConfig::paper(),
                    train: TrainConfig::paper(),
                    critic: CriticConfig { adapter: CriticSpaceAdapter::AvgPool { k: 8 }, ..desk.critic },
                    bake: BakeConfig { resolution: 4096, ..desk.bake },
                    ..desk
                }
            }
        }
    }

    /// Overlay a JSON document on a preset. The preset is `preset` when
    /// given, else the document's `preset` field, else desk. Unknown keys
    /// anywhere are rejected.
    pub fn from_json(doc: &Value, preset: Option<Preset>) -> Result<Self, CliError> {
        let Value::Object(map) = doc else {
            return Err(CliError::Config("run config must be a JSON object".into()));
        };
        let preset = match (preset, map.get("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            (None, None) => Preset::Desk,
        };
        let mut base = serde_json::to_value(Self::preset(preset)).expect("config serializes");
        merge(&mut base, doc);
        base["preset"] = serde_json::to_value(preset).expect("preset serializes");
        serde_json::from_value(base).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.grid.validate().map_err(|e| config(&e))?;
        self.decoder.validate(self.grid.embed_width()).map_err(|e| config(&e))?;
        self.train.validate().map_err(|e| config(&e))?;
        self.critic.adapter.validate().map_err(|e| config(&e))?;
        if self.rig_count == 0 || self.bake.resolution == 0 {
            return Err(CliError::Config("rig_count and bake.resolution must be at least 1".into()));
        }
        Ok(())
    }
}

/// Recursive object merge of `over` into `base`. Objects carrying a `mode`
/// or `kind` tag are tagged enums and replace the base value whole.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) if !(o.contains_key("mode") || o.contains_key("kind")) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
