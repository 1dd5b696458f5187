//! Multi-level grid against a single level at the same finest resolution
//! with at least as many parameters, both regressing one mixed-frequency
//! UV function under the same optimizer budget.
//!
//!     cargo run --release --example multires_ablation -- [steps] [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenetex::optim::{fit_uv_function, mixed_frequency_target, UvFitConfig, UvFitReport};
use scenetex::texfield::GridConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(1000, |s| s.parse().expect("steps"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let config = UvFitConfig { steps, ..Default::default() };

    let multi = GridConfig { levels: 8, table_size: 1 << 12, features: 2, min_resolution: 16, max_resolution: 512 };
    let single = GridConfig { levels: 1, table_size: 1 << 15, min_resolution: 512, ..multi.clone() };

    let m = fit("multi", &multi, &config, seed);
    let s = fit("single", &single, &config, seed);
    println!("MSE ratio multi/single: {:.3}", m.final_mse / s.final_mse);
}

fn fit(label: &str, grid: &GridConfig, config: &UvFitConfig, seed: u64) -> UvFitReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = fit_uv_function::<f32>(grid.clone(), mixed_frequency_target, config, &mut rng).expect("fit");
    println!(
        "{label:>6}: {} levels {}..{}, {} parameters, final MSE {:.3e}",
        grid.levels, grid.min_resolution, grid.max_resolution, r.parameters, r.final_mse
    );
    r
}
