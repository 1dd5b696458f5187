//! Config-driven VSD run on the box room: the prior is a delta at each
//! sampled camera's ground-truth view, the lora adapts alongside the field.
//! Writes the fixture, config.json, metrics.csv, checkpoints and a bake.
//!
//!     cargo run --release --example distill_scene -- [out_dir] [iterations]

use std::path::PathBuf;

use scenetex::bake::bake;
use scenetex::cli::{load_model, run_references, train, RunConfig, SceneDir};
use scenetex::optim::CriticKind;
use scenetex::scene::synth::{Fixture, FixtureKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "distill_scene".into()));
    let iterations: u64 = args.next().map_or(Ok(300), |s| s.parse())?;

    Fixture::generate(FixtureKind::BoxRoom, 0, 256, 32, None)?.write(&out.join("scene"))?;

    let mut config = RunConfig::from_json(
        &serde_json::json!({
            "seed": 3,
            "train": { "critic": "vsd", "resolution": 64, "checkpoint_every": 100 },
            "decoder": { "n_ref": 128 },
        }),
        None,
    )?;
    config.scene = Some(out.join("scene"));
    config.out = Some(out.join("run"));
    config.train.iterations = iterations;
    config.train.timesteps.anneal_at = iterations / 3;
    assert_eq!(config.train.critic, CriticKind::Vsd);

    let checkpoint = train(&config)?;
    let data = SceneDir::load(&out.join("scene"), None)?;
    let refs = run_references(&config, &data.scene)?;
    let model = load_model(&config, &checkpoint)?;
    let baked = bake(&model, &data.scene, &refs, 256, [0.0; 3])?;
    baked.texture.save_png(&out.join("baked.png"))?;
    println!("baked texture written to {}", out.join("baked.png").display());
    Ok(())
}
