//! Train the toy lora denoiser alone on noised samples of a fixed image.
//! Predicting zero noise scores about 1.0; a useful denoiser lands far
//! below that.
//!
//!     cargo run --release --example lora_toy -- [steps] [lr]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenetex::critic::{lora_loss, sample_noise, Conditioning, LoraConfig, LoraDenoiser, NoiseSchedule, ScheduleKind};
use scenetex::diffcore::{Tape, Tensor};
use scenetex::optim::{AdamConfig, AdamState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(500), |s| s.parse())?;
    let lr: f64 = args.next().map_or(Ok(1e-3), |s| s.parse())?;
    let n = 32;

    let depth = Tensor::<f32>::from_fn(&[n, n], |i| (i[0] + i[1]) as f32 / (2 * n) as f32);
    let target = Tensor::<f32>::from_fn(&[n, n, 3], |i| {
        0.5 + 0.4 * (6.0 * (i[0] + i[1]) as f32 / (2 * n) as f32 + 2.0 * i[2] as f32).sin()
    });
    let cond = Conditioning::new(depth, vec![]);
    let schedule = NoiseSchedule::new(ScheduleKind::Linear, 1000)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut lora = LoraDenoiser::<f32>::new(LoraConfig::default(), &mut rng)?;
    let mut adam = AdamState::new(&lora.store, AdamConfig::default());

    // fixed evaluation draws, separate from the training stream
    let mut eval_rng = ChaCha8Rng::seed_from_u64(1);
    let evals: Vec<(f64, Tensor<f32>)> =
        (0..64).map(|_| (0.02 + 0.96 * rand::Rng::random::<f64>(&mut eval_rng), sample_noise(&[n, n, 3], &mut eval_rng))).collect();
    let eval = |lora: &LoraDenoiser<f32>| -> Result<f64, Box<dyn std::error::Error>> {
        let mut sum = 0.0;
        for (t, eps) in &evals {
            let tape = Tape::new();
            let (loss, _) = lora_loss(&tape, lora, &target, &cond, *t, eps, &schedule)?;
            sum += tape.value(loss).item() as f64;
        }
        Ok(sum / evals.len() as f64)
    };

    println!("step     0  held-out loss {:.4}", eval(&lora)?);
    for step in 1..=steps {
        let t = 0.02 + 0.96 * rand::Rng::random::<f64>(&mut rng);
        let eps = sample_noise::<f32>(&[n, n, 3], &mut rng);
        let tape = Tape::new();
        let (loss, p) = lora_loss(&tape, &lora, &target, &cond, t, &eps, &schedule)?;
        let mut grads = tape.backward(loss)?;
        let grads = lora.store.collect_grads(&p, &mut grads);
        adam.update(&mut lora.store, &grads, lr)?;
        if step % 100 == 0 {
            println!("step {step:>5}  held-out loss {:.4}", eval(&lora)?);
        }
    }
    Ok(())
}
