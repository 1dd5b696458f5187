//! Reconstruct the quad fixture's texture from 16 ground-truth views with
//! the photometric critic, then bake it and compare with the original.
//!
//!     cargo run --release --example fit_quad -- [iterations]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenetex::bake::{bake, psnr};
use scenetex::optim::{reference_view, CriticKind, Model, TrainConfig, Trainer};
use scenetex::scene::sample_reference_uvs;
use scenetex::scene::synth::{Fixture, FixtureKind};
use scenetex::texfield::GridConfig;
use scenetex::xattn::{DecoderConfig, FrameLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map_or(Ok(2000), |s| s.parse())?;
    let fixture = Fixture::generate(FixtureKind::Quad, 0, 256, 16, None)?;
    let (grid, decoder) = (GridConfig::desk(), DecoderConfig::desk());
    let refs = sample_reference_uvs(&fixture.scene, decoder.n_ref, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::<f32>::new(grid, decoder, &mut rng)?;

    let config = TrainConfig { iterations, critic: CriticKind::Photometric, checkpoint_every: 0, ..TrainConfig::desk() };
    let resolution = config.resolution;
    let mut trainer =
        Trainer::new(config, &fixture.scene, &fixture.rig, &refs, model, None, Some(&fixture.texture), rng)?;
    let report = trainer.run(None)?;
    for r in report.records.iter().step_by((iterations as usize / 10).max(1)) {
        println!("iter {:>5}  loss {:.5}  psnr {:.2}", r.iter, r.loss, r.psnr.unwrap_or(f64::NAN));
    }

    let mut total = 0.0;
    for camera in &fixture.rig {
        let view = reference_view(&fixture.scene, camera, &fixture.texture, resolution, [0.0; 3])?;
        let image = trainer.model.render(&FrameLayout::new(&view.frame), Some(&refs))?;
        total += psnr(image.data(), view.image.data(), Some(&view.frame.coverage), 3)?;
    }
    println!("mean training-view PSNR {:.2} dB", total / fixture.rig.len() as f64);

    let baked = bake(&trainer.model, &fixture.scene, &refs, 256, [0.0; 3])?;
    let p = psnr(&baked.texture.data, &fixture.texture.data, Some(&baked.coverage), 3)?;
    println!("baked texture PSNR {p:.2} dB");
    baked.texture.save_png(std::path::Path::new("fit_quad.png"))?;
    Ok(())
}
