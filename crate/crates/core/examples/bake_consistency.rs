//! Bake one model at two resolutions and compare the finer bake, box
//! downsampled, with the coarser one. Also bakes an all-zero model.
//!
//!     cargo run --release --example bake_consistency

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenetex::bake::bake;
use scenetex::optim::Model;
use scenetex::scene::{quantize8, sample_reference_uvs, synth};
use scenetex::texfield::GridConfig;
use scenetex::xattn::DecoderConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth::box_room();
    let grid = GridConfig { levels: 4, table_size: 1 << 12, features: 2, min_resolution: 4, max_resolution: 32 };
    let decoder = DecoderConfig { n_ref: 64, ..DecoderConfig::desk() };
    let refs = sample_reference_uvs(&scene, decoder.n_ref, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::<f32>::new(grid.clone(), decoder.clone(), &mut rng)?;
    // stand-in for training: spread the grid features so the bake has detail
    for t in model.store.values_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += 0.2 * rand::Rng::random_range(&mut rng, -1.0..1.0));
    }

    let coarse = bake(&model, &scene, &refs, 256, [0.0; 3])?;
    let fine = bake(&model, &scene, &refs, 512, [0.0; 3])?;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..256 {
        for j in 0..256 {
            let k = i * 256 + j;
            let block = [(2 * i) * 512 + 2 * j, (2 * i) * 512 + 2 * j + 1, (2 * i + 1) * 512 + 2 * j, (2 * i + 1) * 512 + 2 * j + 1];
            if !coarse.coverage[k] || !block.iter().all(|&b| fine.coverage[b]) {
                continue;
            }
            for c in 0..3 {
                let down: f32 = block.iter().map(|&b| fine.texture.data[b * 3 + c]).sum::<f32>() / 4.0;
                sum += (down - coarse.texture.data[k * 3 + c]).abs() as f64;
                count += 1;
            }
        }
    }
    println!("256 vs downsampled 512: mean abs diff {:.3}/255 over {} charted texels", 255.0 * sum / count as f64, count / 3);

    let zero = Model::<f32>::zeros(grid, decoder)?;
    let baked = bake(&zero, &scene, &refs, 256, [0.0; 3])?;
    let gray = baked.coverage.iter().enumerate().filter(|(_, &c)| c).all(|(k, _)| {
        baked.texture.data[k * 3..k * 3 + 3].iter().all(|&v| quantize8(v) == 128)
    });
    println!("zero model bakes mid-gray on every charted texel: {gray}");
    Ok(())
}
