use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_timestep, sample_viewpoint, AdamConfig, AdamState, OptimError, TimestepSchedule};
use crate::bake::psnr;
use crate::critic::{
    lora_loss, photometric_grad, sample_noise, sds_grad, vsd_grad, Adapted, Conditioning, CriticSpaceAdapter,
    DeltaDenoiser, Denoiser, LoraDenoiser, LoraMode, NoiseSchedule,
};
use crate::diffcore::{Checkpoint, OptimizerSection, ParamStore, Scalar, Tape, Tensor};
use crate::scene::{rasterize, Camera, RasterFrame, ReferenceSet, Scene, TextureImage};
use crate::texfield::{GridConfig, HashGridTexture};
use crate::xattn::{decode_frame_with, Decoder, DecoderConfig, FrameLayout};

pub const METRICS_HEADER: &str = "iter,loss,grad_norm_field,grad_norm_lora,psnr,t,camera_idx";

/// Consecutive non-finite iterations tolerated before a run aborts.
const MAX_CONSECUTIVE_SKIPS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    /// Squared error against ground-truth reference views.
    Photometric,
    Sds,
    Vsd,
}

impl std::str::FromStr for CriticKind {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "photometric" => Ok(Self::Photometric),
            "sds" => Ok(Self::Sds),
            "vsd" => Ok(Self::Vsd),
            _ => Err(OptimError::Config(format!("unknown critic {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr_field: f64,
    pub lr_lora: f64,
    pub timesteps: TimestepSchedule,
    /// Square render size in pixels.
    pub resolution: usize,
    pub critic: CriticKind,
    /// Write `ckpt_{iter}.bin` every this many iterations; 0 writes only the
    /// final checkpoint.
    pub checkpoint_every: u64,
    /// Views whose gradients are averaged per iteration.
    pub views_per_step: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            iterations: 2000,
            lr_field: 1e-3,
            lr_lora: 3e-3,
            timesteps: TimestepSchedule { anneal_at: 333, before: [0.02, 0.98], after: [0.02, 0.50] },
            resolution: 128,
            critic: CriticKind::Vsd,
            checkpoint_every: 500,
            views_per_step: 1,
            adam: AdamConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            iterations: 30_000,
            lr_lora: 1e-4,
            timesteps: TimestepSchedule { anneal_at: 5000, before: [0.02, 0.98], after: [0.02, 0.50] },
            resolution: 768,
            checkpoint_every: 5000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let err = |m: String| Err(OptimError::Config(m));
        if self.timesteps.anneal_at > self.iterations {
            return err(format!("anneal boundary {} exceeds {} iterations", self.timesteps.anneal_at, self.iterations));
        }
        if !(self.lr_field > 0.0 && self.lr_lora > 0.0) {
            return err(format!("learning rates must be positive, got {} and {}", self.lr_field, self.lr_lora));
        }
        if self.resolution == 0 || self.views_per_step == 0 {
            return err("resolution and views_per_step must be at least 1".into());
        }
        self.timesteps.validate()
    }
}

/// Texture field plus decoder, sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub store: ParamStore<S>,
    pub grid: HashGridTexture,
    pub decoder: Decoder,
}

impl<S: Scalar> Model<S> {
    pub fn new(grid: GridConfig, decoder: DecoderConfig, rng: &mut impl Rng) -> Result<Self, OptimError> {
        let mut store = ParamStore::new();
        let grid = HashGridTexture::new(grid, &mut store, rng)?;
        let decoder = Decoder::new(&mut store, decoder, grid.embed_width(), rng)?;
        Ok(Self { store, grid, decoder })
    }

    /// Every parameter zero: decodes to mid-gray everywhere.
    pub fn zeros(grid: GridConfig, decoder: DecoderConfig) -> Result<Self, OptimError> {
        let mut model = Self::new(grid, decoder, &mut <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        for t in model.store.values_mut() {
            t.data_mut().fill(S::zero());
        }
        Ok(model)
    }

    /// Replace the parameters with a checkpoint's; names and shapes must match.
    pub fn load(&mut self, ckpt: &Checkpoint) -> Result<(), OptimError> {
        Ok(ckpt.load_into(&mut self.store)?)
    }

    /// Forward pass with frozen parameters: `[H, W, 3]`.
    pub fn render(&self, layout: &FrameLayout, refs: Option<&ReferenceSet>) -> Result<Tensor<S>, OptimError> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let refs = refs.filter(|_| self.decoder.config.cross_attention);
        let img = decode_frame_with(&tape, &p, &self.grid, &self.decoder, layout, refs)?;
        Ok((*tape.value(img)).clone())
    }
}

/// Ground-truth texture seen from one camera: `[H, W, 3]`, uncovered
/// pixels set to `background`.
#[derive(Clone, Debug)]
pub struct ReferenceView {
    pub frame: RasterFrame,
    pub image: Tensor<f32>,
}

pub fn reference_view(
    scene: &Scene,
    camera: &Camera,
    texture: &TextureImage,
    resolution: usize,
    background: [f64; 3],
) -> Result<ReferenceView, OptimError> {
    let frame = rasterize(scene, camera, resolution, resolution)?;
    let mut data = Vec::with_capacity(frame.pixel_count() * 3);
    for (uv, &covered) in frame.uv.iter().zip(&frame.coverage) {
        if covered {
            data.extend(texture.sample_bilinear(*uv));
        } else {
            data.extend(background.map(|c| c as f32));
        }
    }
    let image = Tensor::from_vec(&[resolution, resolution, 3], data)?;
    Ok(ReferenceView { frame, image })
}

/// The pretrained-side denoiser of a score critic.
pub enum Prior {
    Fixed(Box<dyn Denoiser<f32>>),
    /// Delta prior concentrated at the ground-truth view of the sampled
    /// camera, in critic space.
    GroundTruthViews,
}

impl Prior {
    /// The denoiser to query, given the current view's delta prior if any.
    fn resolve<'a>(&'a self, delta: Option<&'a DeltaDenoiser<f32>>) -> Result<&'a dyn Denoiser<f32>, OptimError> {
        match (self, delta) {
            (Prior::Fixed(d), _) => Ok(d.as_ref()),
            (Prior::GroundTruthViews, Some(d)) => Ok(d),
            (Prior::GroundTruthViews, None) => Err(OptimError::Config("delta prior without a reference view".into())),
        }
    }
}

/// Score-distillation critic. With `lora` set the field gradient is VSD,
/// otherwise SDS.
pub struct ScoreCritic {
    pub prior: Prior,
    pub lora: Option<LoraDenoiser<f32>>,
    pub lora_mode: LoraMode,
    pub schedule: NoiseSchedule,
    pub adapter: CriticSpaceAdapter,
    pub prompt: Vec<f32>,
}

/// One rendered view of a field step, kept for the LoRA step.
#[derive(Clone, Debug)]
pub struct ViewSample {
    pub camera_idx: usize,
    pub t: Option<f64>,
    pub eps: Option<Tensor<f32>>,
    /// The render in critic space.
    pub render: Tensor<f32>,
    pub cond: Option<Conditioning<f32>>,
    /// Critic-space target of a ground-truth delta prior.
    pub prior_target: Option<Tensor<f32>>,
    pub loss: f64,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FieldPhase {
    pub iter: u64,
    pub views: Vec<ViewSample>,
    pub grad_norm_field: f64,
    /// Non-finite loss or gradient: nothing was updated.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: u64,
    pub loss: f64,
    pub grad_norm_field: f64,
    pub grad_norm_lora: Option<f64>,
    pub psnr: Option<f64>,
    pub t: Option<f64>,
    pub camera_idx: usize,
    pub skipped: bool,
}

impl IterRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.iter,
            self.loss,
            self.grad_norm_field,
            opt(self.grad_norm_lora),
            opt(self.psnr),
            opt(self.t),
            self.camera_idx
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<IterRecord>,
    pub skipped: usize,
    pub checkpoints: Vec<std::path::PathBuf>,
}

impl TrainReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }
}

/// Alternating optimizer: each iteration updates the field and decoder
/// with the critic gradient, then (VSD only) takes one LoRA step on the
/// same `t` and noise with the field frozen.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub score: Option<ScoreCritic>,
    scene: &'a Scene,
    rig: &'a [Camera],
    refs: &'a ReferenceSet,
    ground_truth: Option<&'a TextureImage>,
    field_adam: AdamState<f32>,
    lora_adam: Option<AdamState<f32>>,
    rng: ChaCha8Rng,
    iter: u64,
    consecutive_skips: usize,
    skipped: usize,
}

impl<'a> Trainer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        config: TrainConfig,
        scene: &'a Scene,
        rig: &'a [Camera],
        refs: &'a ReferenceSet,
        model: Model<f32>,
        score: Option<ScoreCritic>,
        ground_truth: Option<&'a TextureImage>,
        rng: ChaCha8Rng,
    ) -> Result<Self, OptimError> {
        config.validate()?;
        if rig.is_empty() {
            return Err(OptimError::EmptyRig);
        }
        let needs = |what: &str| Err(OptimError::Config(format!("{:?} critic needs {what}", config.critic)));
        match (config.critic, &score) {
            (super::CriticKind::Photometric, _) if ground_truth.is_none() => return needs("a ground-truth texture"),
            (super::CriticKind::Sds, None) => return needs("a prior denoiser"),
            (super::CriticKind::Sds, Some(s)) if s.lora.is_some() => return needs("no lora denoiser"),
            (super::CriticKind::Vsd, s) if s.as_ref().is_none_or(|s| s.lora.is_none()) => return needs("a lora denoiser"),
            _ => {}
        }
        if let Some(s) = &score {
            s.adapter.validate()?;
            if matches!(s.prior, Prior::GroundTruthViews) && ground_truth.is_none() {
                return needs("a ground-truth texture for its delta prior");
            }
        }
        let field_adam = AdamState::new(&model.store, config.adam);
        let lora_adam = score.as_ref().and_then(|s| s.lora.as_ref()).map(|l| AdamState::new(&l.store, config.adam));
        Ok(Self {
            config,
            model,
            score,
            scene,
            rig,
            refs,
            ground_truth,
            field_adam,
            lora_adam,
            rng,
            iter: 0,
            consecutive_skips: 0,
            skipped: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn lora(&self) -> Option<&LoraDenoiser<f32>> {
        self.score.as_ref().and_then(|s| s.lora.as_ref())
    }

    /// Update the field and decoder from one critic evaluation per view.
    /// The lora and prior are read but never written.
    pub fn field_phase(&mut self) -> Result<FieldPhase, OptimError> {
        let n_views = self.config.views_per_step;
        let mut views = Vec::with_capacity(n_views);
        let mut total: Option<Vec<Tensor<f32>>> = None;
        let mut finite = true;
        for _ in 0..n_views {
            let (view, grads) = self.view_gradient()?;
            finite &= view.loss.is_finite() && grads.iter().all(Tensor::all_finite);
            match &mut total {
                None => total = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
            views.push(view);
        }
        let mut grads = total.expect("at least one view");
        if n_views > 1 {
            let inv = 1.0 / n_views as f32;
            grads = grads.iter().map(|g| g.map(|x| x * inv)).collect();
        }
        let grad_norm_field = grads.iter().map(|g| g.norm().f64().powi(2)).sum::<f64>().sqrt();
        let skipped = !finite || !grad_norm_field.is_finite();
        if skipped {
            self.skipped += 1;
            self.consecutive_skips += 1;
            log::warn!("iteration {}: non-finite loss or gradient, skipped", self.iter);
            if self.consecutive_skips >= MAX_CONSECUTIVE_SKIPS {
                return Err(OptimError::Diverged(self.consecutive_skips));
            }
        } else {
            self.consecutive_skips = 0;
            self.field_adam.update(&mut self.model.store, &grads, self.config.lr_field)?;
        }
        Ok(FieldPhase { iter: self.iter, views, grad_norm_field, skipped })
    }

    fn view_gradient(&mut self) -> Result<(ViewSample, Vec<Tensor<f32>>), OptimError> {
        let (camera_idx, camera) = sample_viewpoint(self.rig, &mut self.rng)?;
        let res = self.config.resolution;
        let frame = rasterize(self.scene, camera, res, res)?;
        let layout = FrameLayout::new(&frame);
        let background = self.model.decoder.config.background;
        let reference = match self.ground_truth {
            Some(gt) => Some(reference_view(self.scene, camera, gt, res, background)?.image),
            None => None,
        };

        let tape = Tape::new();
        let p = self.model.store.bind(&tape)?;
        let refs = self.model.decoder.config.cross_attention.then_some(self.refs);
        let img = decode_frame_with(&tape, &p, &self.model.grid, &self.model.decoder, &layout, refs)?;
        let rendered = tape.value(img);
        let psnr = match &reference {
            Some(r) => Some(psnr(rendered.data(), r.data(), Some(&frame.coverage), 3).unwrap_or(f64::NAN)),
            None => None,
        };

        let (root, upstream, sample) = match self.config.critic {
            super::CriticKind::Photometric => {
                let reference = reference.expect("checked in new");
                let (loss, grad) = photometric_grad(&rendered, &reference, &frame.coverage)?;
                let sample = ViewSample {
                    camera_idx,
                    t: None,
                    eps: None,
                    render: (*rendered).clone(),
                    cond: None,
                    prior_target: None,
                    loss,
                    psnr,
                };
                (img, grad, sample)
            }
            super::CriticKind::Sds | super::CriticKind::Vsd => {
                let score = self.score.as_ref().expect("checked in new");
                let crit = score.adapter.record(&tape, img)?;
                let render = (*tape.value(crit)).clone();
                let depth: Vec<f32> = frame.normalized_depth().iter().map(|&d| d as f32).collect();
                let cond = Conditioning::new(score.adapter.apply_map(&depth, res, res), score.prompt.clone());
                let t = sample_timestep(self.iter, &self.config.timesteps, &mut self.rng);
                let eps = sample_noise::<f32>(render.shape(), &mut self.rng);
                let prior_target = match &score.prior {
                    Prior::Fixed(_) => None,
                    Prior::GroundTruthViews => Some(score.adapter.apply(&reference.expect("checked in new"))?),
                };
                let delta = prior_target.clone().map(|x| DeltaDenoiser::new(x, score.schedule.clone()));
                let prior = score.prior.resolve(delta.as_ref())?;
                let grad = match &score.lora {
                    Some(net) => {
                        let pair = Adapted { base: prior, net, mode: score.lora_mode, schedule: &score.schedule };
                        vsd_grad(&render, prior, &pair, &cond, t, &eps, &score.schedule)?
                    }
                    None => sds_grad(&render, prior, &cond, t, &eps, &score.schedule)?,
                };
                let loss = grad.data().iter().map(|g| g.f64().powi(2)).sum::<f64>() / grad.len() as f64;
                let sample = ViewSample {
                    camera_idx,
                    t: Some(t),
                    eps: Some(eps),
                    render,
                    cond: Some(cond),
                    prior_target,
                    loss,
                    psnr,
                };
                (crit, grad, sample)
            }
        };
        let mut g = tape.backward_with(root, upstream)?;
        let grads = self.model.store.collect_grads(&p, &mut g);
        Ok((sample, grads))
    }

    /// One LoRA update on the renders of `phase`, reusing their `t` and
    /// noise. The field and decoder are constants here. Returns the mean
    /// lora loss and gradient norm, or `None` without a lora.
    pub fn lora_phase(&mut self, phase: &FieldPhase) -> Result<Option<(f64, f64)>, OptimError> {
        let lr = self.config.lr_lora;
        let (Some(score), Some(adam)) = (self.score.as_mut(), self.lora_adam.as_mut()) else {
            return Ok(None);
        };
        let Some(lora) = score.lora.as_mut() else {
            return Ok(None);
        };
        if phase.skipped {
            return Ok(None);
        }
        let mut total: Option<Vec<Tensor<f32>>> = None;
        let mut loss_sum = 0.0;
        for view in &phase.views {
            let (Some(t), Some(eps), Some(cond)) = (view.t, &view.eps, &view.cond) else {
                return Err(OptimError::Config("lora step needs a score-critic field phase".into()));
            };
            let delta = view.prior_target.clone().map(|x| DeltaDenoiser::new(x, score.schedule.clone()));
            let prior = score.prior.resolve(delta.as_ref())?;
            let pair = Adapted { base: prior, net: &*lora, mode: score.lora_mode, schedule: &score.schedule };
            let tape = Tape::new();
            let (loss, p) = lora_loss(&tape, &pair, &view.render, cond, t, eps, &score.schedule)?;
            loss_sum += tape.value(loss).item().f64();
            let mut g = tape.backward(loss)?;
            let grads = lora.store.collect_grads(&p, &mut g);
            match &mut total {
                None => total = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
            }
        }
        let n = phase.views.len();
        let mut grads = total.expect("at least one view");
        if n > 1 {
            let inv = 1.0 / n as f32;
            grads = grads.iter().map(|g| g.map(|x| x * inv)).collect();
        }
        let norm = grads.iter().map(|g| g.norm().f64().powi(2)).sum::<f64>().sqrt();
        let loss = loss_sum / n as f64;
        if loss.is_finite() && norm.is_finite() {
            adam.update(&mut lora.store, &grads, lr)?;
        } else {
            log::warn!("iteration {}: non-finite lora loss, lora step skipped", phase.iter);
        }
        Ok(Some((loss, norm)))
    }

    /// Field phase then LoRA phase.
    pub fn step(&mut self) -> Result<IterRecord, OptimError> {
        let phase = self.field_phase()?;
        let lora = self.lora_phase(&phase)?;
        self.iter += 1;
        let first = &phase.views[0];
        let n = phase.views.len() as f64;
        let psnrs: Vec<f64> = phase.views.iter().filter_map(|v| v.psnr).collect();
        Ok(IterRecord {
            iter: phase.iter,
            loss: phase.views.iter().map(|v| v.loss).sum::<f64>() / n,
            grad_norm_field: phase.grad_norm_field,
            grad_norm_lora: lora.map(|(_, g)| g),
            psnr: (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64),
            t: first.t,
            camera_idx: first.camera_idx,
            skipped: phase.skipped,
        })
    }

    /// Parameters of the field, decoder and lora with their Adam moments.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.push_store(&self.model.store);
        let mut section = self.field_adam.to_section(&self.model.store);
        if let (Some(lora), Some(adam)) = (self.lora(), &self.lora_adam) {
            ckpt.push_store(&lora.store);
            section.moments.extend(adam.to_section(&lora.store).moments);
        }
        ckpt.optimizer = Some(OptimizerSection { step: section.step, moments: section.moments });
        ckpt
    }

    /// Run the remaining iterations. With `out`, writes `metrics.csv` and
    /// `ckpt_{iter}.bin` files there.
    pub fn run(&mut self, out: Option<&Path>) -> Result<TrainReport, OptimError> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
        }
        let mut report = TrainReport { records: Vec::new(), skipped: 0, checkpoints: Vec::new() };
        let every = self.config.checkpoint_every;
        let result = (|| {
            while self.iter < self.config.iterations {
                let rec = self.step()?;
                if rec.iter % 100 == 0 {
                    log::info!(
                        "iter {} loss {:.6} grad {:.4e} psnr {}",
                        rec.iter,
                        rec.loss,
                        rec.grad_norm_field,
                        rec.psnr.map(|p| format!("{p:.2}")).unwrap_or_else(|| "-".into())
                    );
                }
                report.records.push(rec);
                let done = self.iter;
                if let Some(dir) = out {
                    if (every > 0 && done.is_multiple_of(every)) || done == self.config.iterations {
                        let path = dir.join(format!("ckpt_{done}.bin"));
                        self.checkpoint().save(&path)?;
                        report.checkpoints.push(path);
                    }
                }
            }
            Ok(())
        })();
        report.skipped = self.skipped;
        if let Some(dir) = out {
            std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
        }
        result.map(|()| report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{LoraConfig, ScheduleKind};
    use crate::scene::{sample_reference_uvs, synth};
    use rand::SeedableRng;

    fn small_configs() -> (GridConfig, DecoderConfig) {
        let grid = GridConfig { levels: 4, table_size: 1 << 10, features: 2, min_resolution: 4, max_resolution: 32 };
        let dec = DecoderConfig { heads: 2, head_hidden: 16, head_layers: 2, n_ref: 16, ..DecoderConfig::desk() };
        (grid, dec)
    }

    fn small_model(rng: &mut ChaCha8Rng) -> Model<f32> {
        let (grid, dec) = small_configs();
        Model::new(grid, dec, rng).unwrap()
    }

    fn config(critic: CriticKind, iterations: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            resolution: 16,
            critic,
            checkpoint_every: 0,
            timesteps: TimestepSchedule { anneal_at: iterations / 2, before: [0.02, 0.98], after: [0.02, 0.5] },
            ..TrainConfig::desk()
        }
    }

    fn score(lora: bool, rng: &mut ChaCha8Rng) -> ScoreCritic {
        ScoreCritic {
            prior: Prior::GroundTruthViews,
            lora: lora.then(|| LoraDenoiser::new(LoraConfig { width: 8, ..LoraConfig::default() }, rng).unwrap()),
            lora_mode: LoraMode::Sample,
            schedule: NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap(),
            adapter: CriticSpaceAdapter::AvgPool { k: 2 },
            prompt: Vec::new(),
        }
    }

    fn snapshot(store: &ParamStore<f32>) -> Vec<Vec<u32>> {
        store.iter().map(|(_, t)| t.data().iter().map(|x| x.to_bits()).collect()).collect()
    }

    struct NanPrior;

    impl Denoiser<f32> for NanPrior {
        fn predict(&self, x_t: &Tensor<f32>, _: &Conditioning<f32>, _: f64) -> Result<Tensor<f32>, crate::critic::CriticError> {
            Ok(Tensor::full(x_t.shape(), f32::NAN))
        }
    }

    #[test]
    fn photometric_at_optimum_changes_nothing() {
        let fx = synth::Fixture::generate(synth::FixtureKind::Quad, 0, 16, 4, None).unwrap();
        let gray = TextureImage::from_fn(16, 16, |_, _| [0.5; 3]);
        let refs = sample_reference_uvs(&fx.scene, 16, 0).unwrap();
        let (grid, dec) = small_configs();
        let model = Model::<f32>::zeros(grid, dec).unwrap();
        let before = snapshot(&model.store);
        let mut tr = Trainer::new(
            config(CriticKind::Photometric, 5),
            &fx.scene,
            &fx.rig,
            &refs,
            model,
            None,
            Some(&gray),
            ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let report = tr.run(None).unwrap();
        assert_eq!(snapshot(&tr.model.store), before);
        for r in &report.records {
            assert_eq!(r.loss, 0.0);
            assert_eq!(r.grad_norm_field, 0.0);
            assert_eq!(r.psnr, Some(f64::INFINITY));
        }
    }

    #[test]
    fn freeze_discipline_holds_in_both_phases() {
        let fx = synth::Fixture::generate(synth::FixtureKind::Quad, 0, 32, 4, None).unwrap();
        let refs = sample_reference_uvs(&fx.scene, 16, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = small_model(&mut rng);
        let critic = score(true, &mut rng);
        let mut tr =
            Trainer::new(config(CriticKind::Vsd, 4), &fx.scene, &fx.rig, &refs, model, Some(critic), Some(&fx.texture), rng)
                .unwrap();
        // an adapted lora starts equal to the prior, so the first field
        // gradient is exactly zero
        let mut field_moved = 0;
        for _ in 0..3 {
            let (field0, lora0) = (snapshot(&tr.model.store), snapshot(&tr.lora().unwrap().store));
            let phase = tr.field_phase().unwrap();
            let (field1, lora1) = (snapshot(&tr.model.store), snapshot(&tr.lora().unwrap().store));
            assert_eq!(lora1, lora0, "field step touched the lora");
            assert_eq!(field1 != field0, phase.grad_norm_field > 0.0);
            field_moved += usize::from(field1 != field0);
            tr.lora_phase(&phase).unwrap().unwrap();
            assert_eq!(snapshot(&tr.model.store), field1, "lora step touched the field");
            assert_ne!(snapshot(&tr.lora().unwrap().store), lora1);
        }
        assert_eq!(field_moved, 2);
    }

    #[test]
    fn fixed_seed_runs_are_identical() {
        let fx = synth::Fixture::generate(synth::FixtureKind::Quad, 0, 32, 4, None).unwrap();
        let refs = sample_reference_uvs(&fx.scene, 16, 0).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let model = small_model(&mut rng);
            let critic = score(true, &mut rng);
            let mut tr = Trainer::new(
                config(CriticKind::Vsd, 6),
                &fx.scene,
                &fx.rig,
                &refs,
                model,
                Some(critic),
                Some(&fx.texture),
                rng,
            )
            .unwrap();
            let report = tr.run(None).unwrap();
            (tr.checkpoint().to_bytes(), report.metrics_csv())
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(a.1.starts_with(METRICS_HEADER));
        assert_eq!(a.1.lines().count(), 7);
    }

    #[test]
    fn non_finite_critic_aborts_after_ten_skips() {
        let fx = synth::Fixture::generate(synth::FixtureKind::Quad, 0, 16, 2, None).unwrap();
        let refs = sample_reference_uvs(&fx.scene, 16, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = small_model(&mut rng);
        let before = snapshot(&model.store);
        let critic = ScoreCritic { prior: Prior::Fixed(Box::new(NanPrior)), ..score(false, &mut rng) };
        let mut tr =
            Trainer::new(config(CriticKind::Sds, 50), &fx.scene, &fx.rig, &refs, model, Some(critic), None, rng).unwrap();
        for _ in 0..9 {
            assert!(tr.step().unwrap().skipped);
        }
        assert!(matches!(tr.step(), Err(OptimError::Diverged(10))));
        assert_eq!(snapshot(&tr.model.store), before);
    }

    #[test]
    fn configuration_errors() {
        let fx = synth::Fixture::generate(synth::FixtureKind::Quad, 0, 16, 2, None).unwrap();
        let refs = sample_reference_uvs(&fx.scene, 16, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |c: TrainConfig, rig: &[Camera], s: Option<ScoreCritic>, gt: Option<&TextureImage>| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Trainer::new(c, &fx.scene, rig, &refs, small_model(&mut rng), s, gt, rng).err()
        };
        assert!(matches!(mk(config(CriticKind::Photometric, 2), &[], None, Some(&fx.texture)), Some(OptimError::EmptyRig)));
        assert!(mk(config(CriticKind::Photometric, 2), &fx.rig, None, None).is_some());
        assert!(mk(config(CriticKind::Vsd, 2), &fx.rig, Some(score(false, &mut rng)), Some(&fx.texture)).is_some());
        assert!(mk(config(CriticKind::Sds, 2), &fx.rig, Some(score(true, &mut rng)), Some(&fx.texture)).is_some());
        let mut c = config(CriticKind::Photometric, 2);
        c.timesteps.anneal_at = 3;
        assert!(mk(c, &fx.rig, None, Some(&fx.texture)).is_some());
        let mut c = config(CriticKind::Photometric, 2);
        c.lr_field = 0.0;
        assert!(mk(c, &fx.rig, None, Some(&fx.texture)).is_some());
    }
}
