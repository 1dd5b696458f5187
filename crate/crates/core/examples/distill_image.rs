//! VSD straight onto a 32×32 image against a delta prior. The image
//! starts at zero and closes in on the target.
//!
//!     cargo run --release --example distill_image -- [steps] [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenetex::critic::Conditioning;
use scenetex::diffcore::Tensor;
use scenetex::optim::{distill_image, ImageDistillConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed = args.next().map_or(Ok(0), |s| s.parse())?;
    let n = 32;

    // the target is a function of depth, which the lora sees
    let depth = Tensor::<f32>::from_fn(&[n, n], |i| (i[0] + i[1] + 1) as f32 / (2 * n) as f32);
    let target = Tensor::<f32>::from_fn(&[n, n, 3], |i| {
        let d = (i[0] + i[1] + 1) as f32 / (2 * n) as f32;
        0.5 + 0.4 * (6.0 * d + 2.0 * i[2] as f32).sin()
    });
    let cond = Conditioning::new(depth, vec![]);
    let config = ImageDistillConfig { steps, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = distill_image(Tensor::zeros(&[n, n, 3]), &target, &cond, &config, &mut rng)?;

    for (step, d) in report.distances.iter().enumerate().step_by((steps / 10).max(1)) {
        // lora_losses[k] belongs to step k + 1
        match step.checked_sub(1).and_then(|k| report.lora_losses.get(k)) {
            Some(loss) => println!("step {step:>5}  distance {d:.4}  lora loss {loss:.4}"),
            None => println!("step {step:>5}  distance {d:.4}"),
        }
    }
    println!("relative distance after {steps} steps: {:.4}", report.relative_distance());
    Ok(())
}
