//! The `scenetex` command line: scene generation, training, baking and
//! verification, wired to one JSON run config.
//!
//! Configuration precedence is command-line flag, then the `--config`
//! document, then the preset. All randomness comes from `--seed` through
//! the named streams in [`crate::seeds`].

mod config;

pub use config::{BakeConfig, CriticConfig, Preset, PriorKind, RunConfig};

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::bake::{bake, psnr, psnr_by_instance, BakeError};
use crate::critic::{LoraConfig, LoraDenoiser, LoraMode, NoiseSchedule, ZeroDenoiser};
use crate::diffcore::{Checkpoint, DiffError};
use crate::optim::{CriticKind, Model, OptimError, Prior, ScoreCritic, Trainer};
use crate::scene::synth::{load_manifest, Fixture, FixtureKind, Manifest};
use crate::scene::{
    chart_texels, load_mask_png, load_rig, load_scene, sample_reference_uvs, save_mask_png, Camera, ReferenceSet, Scene,
    SceneError, TextureImage,
};
use crate::seeds::{stream_rng, stream_seed, Stream};
use crate::verify::{gradcheck_suite, Component};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "SCENETEX_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Bake(#[from] BakeError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for usage and configuration errors, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "scenetex", version, about = "Texture-field optimization over UV-mapped scenes")]
pub struct Cli {
    /// Worker threads for data-parallel stages; 1 is the reference for
    /// bit-exact comparisons across machines.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural scene: mesh, instance map, texture, rig, manifest.
    GenScene(GenSceneArgs),
    /// Reconstruct a scene's texture from ground-truth views.
    Fit(TrainArgs),
    /// Optimize a texture by score distillation against a prior.
    Distill(DistillArgs),
    /// Evaluate a checkpoint over an R×R texel lattice.
    Bake(BakeArgs),
    /// Finite-difference gradient checks per component.
    Gradcheck(GradcheckArgs),
    /// PSNR of a baked texture against ground truth, overall and per instance.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    /// quad, box-room, multi-object or multi-object:K
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub cameras: usize,
    #[arg(long, default_value_t = 512)]
    pub texture_res: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Run config JSON, overlaid on the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Directory written by gen-scene.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rig JSON replacing the scene's rig.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub lr_field: Option<f64>,
    #[arg(long)]
    pub lr_lora: Option<f64>,
    #[arg(long)]
    pub anneal_at: Option<u64>,
    /// Timestep range before annealing, as `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    pub t_before: Option<[f64; 2]>,
    /// Timestep range after annealing, as `lo,hi`.
    #[arg(long, value_parser = parse_range)]
    pub t_after: Option<[f64; 2]>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub views_per_step: Option<usize>,
    #[arg(long)]
    pub n_ref: Option<usize>,
    /// Decode without reference attention.
    #[arg(long)]
    pub no_cross_attn: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// sds or vsd
    #[arg(long)]
    pub critic: Option<String>,
    /// ground-truth-views or zero
    #[arg(long)]
    pub prior: Option<String>,
    /// standalone, noise or sample
    #[arg(long)]
    pub lora_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct BakeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config; defaults to config.json next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Coverage mask path; defaults to `<out stem>_mask.png`.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Write 16-bit PNG instead of 8-bit.
    #[arg(long)]
    pub png16: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// diffcore, texfield, xattn, critic or all
    #[arg(long, default_value = "all")]
    pub component: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub baked: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Coverage mask PNG; texels outside it are ignored.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Scene directory, for the per-instance table.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Write the table as CSV here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Binary entry point.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenScene(a) => gen_scene(&a),
        Command::Fit(a) => {
            let config = resolve_config(&a, None)?;
            train(&config).map(drop)
        }
        Command::Distill(a) => {
            let config = resolve_config(&a.train, Some(&a))?;
            train(&config).map(drop)
        }
        Command::Bake(a) => bake_cmd(&a),
        Command::Gradcheck(a) => gradcheck_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
    }
}

fn gen_scene(a: &GenSceneArgs) -> Result<(), CliError> {
    let kind: FixtureKind = a.kind.parse().map_err(|e: SceneError| CliError::Usage(e.to_string()))?;
    let fixture = Fixture::generate(kind, a.seed, a.texture_res, a.cameras, None)?;
    let manifest = fixture.write(&a.out)?;
    println!(
        "{}: {} triangles, {} instances, {} cameras, atlas occupancy {:.3}",
        a.out.display(),
        manifest.triangles,
        manifest.instances,
        manifest.rig_count,
        manifest.atlas_occupancy
    );
    Ok(())
}

fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [lo, hi] => Ok([lo.trim().parse().map_err(|e| format!("{e}"))?, hi.trim().parse().map_err(|e| format!("{e}"))?]),
        _ => Err(format!("expected lo,hi, got {s:?}")),
    }
}

fn parse_flag<T: serde::de::DeserializeOwned>(flag: &str, v: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(v.into()))
        .map_err(|_| CliError::Usage(format!("--{flag}: unrecognized value {v:?}")))
}

/// Preset, then config document, then flags. `distill` is `None` for `fit`,
/// which always uses the photometric critic.
pub fn resolve_config(a: &TrainArgs, distill: Option<&DistillArgs>) -> Result<RunConfig, CliError> {
    let doc = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    let mut c = RunConfig::from_json(&doc, a.preset)?;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = &a.scene {
        c.scene = Some(v.clone());
    }
    if let Some(v) = &a.out {
        c.out = Some(v.clone());
    }
    if let Some(v) = &a.rig {
        c.rig = Some(v.clone());
    }
    let t = &mut c.train;
    if let Some(v) = a.iterations {
        t.iterations = v;
    }
    if let Some(v) = a.lr_field {
        t.lr_field = v;
    }
    if let Some(v) = a.lr_lora {
        t.lr_lora = v;
    }
    if let Some(v) = a.anneal_at {
        t.timesteps.anneal_at = v;
    }
    if let Some(v) = a.t_before {
        t.timesteps.before = v;
    }
    if let Some(v) = a.t_after {
        t.timesteps.after = v;
    }
    if let Some(v) = a.resolution {
        t.resolution = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(v) = a.views_per_step {
        t.views_per_step = v;
    }
    if let Some(v) = a.n_ref {
        c.decoder.n_ref = v;
    }
    if a.no_cross_attn {
        c.decoder.cross_attention = false;
    }
    match distill {
        None => c.train.critic = CriticKind::Photometric,
        Some(d) => {
            if let Some(v) = &d.critic {
                c.train.critic = parse_flag("critic", v)?;
            }
            if let Some(v) = &d.prior {
                c.critic.prior = parse_flag("prior", v)?;
            }
            if let Some(v) = &d.lora_mode {
                c.critic.lora_mode = parse_flag::<LoraMode>("lora-mode", v)?;
            }
            if c.train.critic == CriticKind::Photometric {
                return Err(CliError::Config("distill needs the sds or vsd critic; use fit for photometric".into()));
            }
        }
    }
    c.validate()?;
    Ok(c)
}

/// A scene directory written by `gen-scene`, loaded back.
pub struct SceneDir {
    pub manifest: Manifest,
    pub scene: Scene,
    pub rig: Vec<Camera>,
    pub texture: TextureImage,
}

impl SceneDir {
    pub fn load(dir: &Path, rig: Option<&Path>) -> Result<Self, CliError> {
        let manifest = load_manifest(dir)?;
        let (scene, _) = load_scene(&dir.join(&manifest.mesh), &dir.join(&manifest.instance_map))?;
        let rig = load_rig(&rig.map(Path::to_path_buf).unwrap_or_else(|| dir.join(&manifest.rig)))?;
        let texture = TextureImage::load_png(&dir.join(&manifest.texture))?;
        Ok(Self { manifest, scene, rig, texture })
    }
}

fn scene_dir(c: &RunConfig) -> Result<&Path, CliError> {
    c.scene.as_deref().ok_or_else(|| CliError::Config("no scene directory (set `scene` or pass --scene)".into()))
}

/// Reference UVs of a run, drawn from its refs stream.
pub fn run_references(c: &RunConfig, scene: &Scene) -> Result<ReferenceSet, CliError> {
    Ok(sample_reference_uvs(scene, c.decoder.n_ref, stream_seed(c.seed, Stream::Refs))?)
}

/// Train per `c`, writing `config.json`, `metrics.csv` and checkpoints to
/// `c.out`. Returns the final checkpoint path.
pub fn train(c: &RunConfig) -> Result<PathBuf, CliError> {
    let out = c.out.clone().ok_or_else(|| CliError::Config("no output directory (set `out` or pass --out)".into()))?;
    let data = SceneDir::load(scene_dir(c)?, c.rig.as_deref())?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(c)?)?;

    let refs = run_references(c, &data.scene)?;
    let mut init = stream_rng(c.seed, Stream::Init);
    let model = Model::new(c.grid.clone(), c.decoder.clone(), &mut init)?;
    let score = match c.train.critic {
        CriticKind::Photometric => None,
        kind => {
            let cc = &c.critic;
            let schedule = NoiseSchedule::new(cc.schedule, cc.schedule_steps).map_err(OptimError::from)?;
            let prior = match cc.prior {
                PriorKind::GroundTruthViews => Prior::GroundTruthViews,
                PriorKind::Zero => Prior::Fixed(Box::new(ZeroDenoiser)),
            };
            let lora = match kind {
                CriticKind::Vsd => {
                    let config = LoraConfig { channels: 3, prompt_dim: cc.prompt.len(), ..cc.lora.clone() };
                    Some(LoraDenoiser::new(config, &mut init).map_err(OptimError::from)?)
                }
                _ => None,
            };
            Some(ScoreCritic {
                prior,
                lora,
                lora_mode: cc.lora_mode,
                schedule,
                adapter: cc.adapter,
                prompt: cc.prompt.clone(),
            })
        }
    };
    let rng = stream_rng(c.seed, Stream::Train);
    let mut trainer =
        Trainer::new(c.train.clone(), &data.scene, &data.rig, &refs, model, score, Some(&data.texture), rng)?;
    let report = trainer.run(Some(&out))?;
    let last = report.checkpoints.last().cloned().expect("run writes a final checkpoint");
    let tail: Vec<f64> = report.records.iter().rev().take(100).filter_map(|r| r.psnr).collect();
    if !tail.is_empty() {
        log::info!("mean training-view PSNR over the last {} iterations: {:.2} dB", tail.len(), tail.iter().sum::<f64>() / tail.len() as f64);
    }
    println!("{} iterations, {} skipped, final checkpoint {}", report.records.len(), report.skipped, last.display());
    Ok(last)
}

/// Load the model a run config describes from `checkpoint`.
pub fn load_model(c: &RunConfig, checkpoint: &Path) -> Result<Model<f32>, CliError> {
    let mut model = Model::<f32>::zeros(c.grid.clone(), c.decoder.clone())?;
    model.load(&Checkpoint::load(checkpoint)?)?;
    Ok(model)
}

fn mask_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "texture".into());
    out.with_file_name(format!("{stem}_mask.png"))
}

fn bake_cmd(a: &BakeArgs) -> Result<(), CliError> {
    let config_path = match &a.config {
        Some(p) => p.clone(),
        None => a.checkpoint.parent().unwrap_or(Path::new(".")).join("config.json"),
    };
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let mut c = RunConfig::from_json(&doc, None)?;
    if let Some(s) = &a.scene {
        c.scene = Some(s.clone());
    }
    let resolution = a.resolution.unwrap_or(c.bake.resolution);
    let manifest = load_manifest(scene_dir(&c)?)?;
    let dir = scene_dir(&c)?;
    let (scene, _) = load_scene(&dir.join(&manifest.mesh), &dir.join(&manifest.instance_map))?;
    let refs = run_references(&c, &scene)?;
    let model = load_model(&c, &a.checkpoint)?;
    let baked = bake(&model, &scene, &refs, resolution, c.bake.background)?;
    if a.png16 {
        baked.texture.save_png16(&a.out)?;
    } else {
        baked.texture.save_png(&a.out)?;
    }
    let mask = a.mask.clone().unwrap_or_else(|| mask_path(&a.out));
    save_mask_png(&baked.coverage, resolution, resolution, &mask)?;
    println!("baked {resolution}x{resolution} to {} (mask {})", a.out.display(), mask.display());
    Ok(())
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<(), CliError> {
    let component: Component = a.component.parse().map_err(CliError::Usage)?;
    let results = gradcheck_suite(component, a.seed)?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    for r in &results {
        println!("{r}");
    }
    println!("{} cases, {failed} failed", results.len());
    if failed > 0 {
        return Err(CliError::Check(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

/// CSV table of overall and per-instance PSNR.
pub fn eval_table(
    baked: &TextureImage,
    truth: &TextureImage,
    mask: Option<&[bool]>,
    scene: Option<&Scene>,
) -> Result<String, CliError> {
    if (baked.width, baked.height) != (truth.width, truth.height) {
        return Err(CliError::Usage(format!(
            "baked texture is {}x{} but ground truth is {}x{}",
            baked.width, baked.height, truth.width, truth.height
        )));
    }
    let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.4}") };
    let mut table = String::from("instance,name,texels,psnr\n");
    let texels = mask.map_or(baked.width * baked.height, |m| m.iter().filter(|&&b| b).count());
    table += &format!("all,,{texels},{}\n", fmt(psnr(&baked.data, &truth.data, mask, 3)?));
    if let Some(scene) = scene {
        let mut owner = chart_texels(scene, baked.width);
        if let Some(m) = mask {
            for (o, &keep) in owner.iter_mut().zip(m) {
                if !keep {
                    *o = crate::scene::BACKGROUND;
                }
            }
        }
        let per = psnr_by_instance(baked, truth, &owner, scene.instance_count());
        for (id, p) in per.iter().enumerate() {
            let n = owner.iter().filter(|&&o| o == id as u32).count();
            let name = &scene.instance_names[id];
            table += &format!("{id},{name},{n},{}\n", p.map(fmt).unwrap_or_default());
        }
    }
    Ok(table)
}

fn eval_cmd(a: &EvalArgs) -> Result<(), CliError> {
    let baked = TextureImage::load_png(&a.baked)?;
    let truth = TextureImage::load_png(&a.ground_truth)?;
    let mask = match &a.mask {
        Some(p) => {
            let (m, w, h) = load_mask_png(p)?;
            if (w, h) != (baked.width, baked.height) {
                return Err(CliError::Usage(format!("mask is {w}x{h}, texture is {}x{}", baked.width, baked.height)));
            }
            Some(m)
        }
        None => None,
    };
    let scene = match &a.scene {
        Some(dir) => {
            let manifest = load_manifest(dir)?;
            Some(load_scene(&dir.join(&manifest.mesh), &dir.join(&manifest.instance_map))?.0)
        }
        None => None,
    };
    let table = eval_table(&baked, &truth, mask.as_deref(), scene.as_ref())?;
    print!("{table}");
    if let Some(out) = &a.out {
        std::fs::write(out, &table)?;
    }
    Ok(())
}
