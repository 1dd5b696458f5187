//! Optimization critics: diffusion schedule, denoisers, score-distillation
//! gradients (SDS and VSD), the LoRA-style denoiser loss and a photometric
//! critic for ground-truth reconstruction.
//!
//! Score-distillation gradients are not losses. They are returned as
//! images and injected as the upstream gradient of the rendered tensor.

mod adapter;
mod denoisers;
mod schedule;

pub use adapter::CriticSpaceAdapter;
pub use denoisers::{Adapted, DeltaDenoiser, Denoiser, FixedNoise, LoraConfig, LoraDenoiser, LoraMode, ZeroDenoiser};
pub use schedule::{add_noise, weight_from_alpha_bar, NoiseSchedule, ScheduleKind, BETA_END, BETA_START};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Bound, DiffError, Scalar, Tape, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum CriticError {
    #[error("critic config: {0}")]
    Config(String),
    #[error("{what}: shape {lhs:?} does not match {rhs:?}")]
    Shape { what: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("denoiser is not trainable")]
    NotTrainable,
    #[error("t = {t} maps to a clean step (alpha_bar = 1)")]
    CleanStep { t: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Denoiser conditioning: normalized depth `[h, w]` in critic space and an
/// opaque prompt embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<S: Scalar> {
    pub depth: Tensor<S>,
    pub prompt: Vec<S>,
}

impl<S: Scalar> Conditioning<S> {
    pub fn new(depth: Tensor<S>, prompt: Vec<S>) -> Self {
        Self { depth, prompt }
    }

    /// Flat depth map and empty prompt.
    pub fn flat(h: usize, w: usize) -> Self {
        Self { depth: Tensor::zeros(&[h, w]), prompt: Vec::new() }
    }

    fn check(&self, h: usize, w: usize) -> Result<(), CriticError> {
        if self.depth.shape() != [h, w] {
            return Err(CriticError::Shape { what: "depth conditioning", lhs: self.depth.shape().to_vec(), rhs: vec![h, w] });
        }
        Ok(())
    }
}

/// Unit gaussian sample with the given shape.
pub fn sample_noise<S: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::c(StandardNormal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("noise shape")
}

fn weighted_difference<S: Scalar>(w: f64, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, CriticError> {
    if a.shape() != b.shape() {
        return Err(CriticError::Shape { what: "denoiser outputs", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
    }
    let w = S::c(w);
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| w * (x - y)).collect();
    Ok(Tensor::from_vec(a.shape(), data)?)
}

/// `w(t)·(ε_pre(x_t) − eps)` with `x_t = add_noise(render, t, eps)`.
pub fn sds_grad<S: Scalar>(
    render: &Tensor<S>,
    denoiser: &dyn Denoiser<S>,
    cond: &Conditioning<S>,
    t: f64,
    eps: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>, CriticError> {
    let x_t = add_noise(render, schedule.alpha_bar_at(t), eps)?;
    let pred = denoiser.predict(&x_t, cond, t)?;
    weighted_difference(schedule.weight(t), &pred, eps)
}

/// `w(t)·(ε_prior(x_t) − ε_lora(x_t))` with both denoisers on the same `x_t`.
pub fn vsd_grad<S: Scalar>(
    render: &Tensor<S>,
    prior: &dyn Denoiser<S>,
    lora: &dyn Denoiser<S>,
    cond: &Conditioning<S>,
    t: f64,
    eps: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<S>, CriticError> {
    let x_t = add_noise(render, schedule.alpha_bar_at(t), eps)?;
    let a = prior.predict(&x_t, cond, t)?;
    let b = lora.predict(&x_t, cond, t)?;
    weighted_difference(schedule.weight(t), &a, &b)
}

/// `mean(‖ε_lora(x_t) − eps‖²)` recorded on `tape` over the lora's
/// parameters only; the render is a constant. Returns the loss and the
/// binding needed to collect gradients from the lora's store.
pub fn lora_loss<S: Scalar>(
    tape: &Tape<S>,
    lora: &dyn Denoiser<S>,
    render: &Tensor<S>,
    cond: &Conditioning<S>,
    t: f64,
    eps: &Tensor<S>,
    schedule: &NoiseSchedule,
) -> Result<(Var, Bound), CriticError> {
    let x_t = add_noise(render, schedule.alpha_bar_at(t), eps)?;
    let (pred, p) = lora.record(tape, &x_t, cond, t)?.ok_or(CriticError::NotTrainable)?;
    let d = tape.sub(pred, tape.constant(eps.clone()))?;
    let loss = tape.mean(tape.mul(d, d)?)?;
    Ok((loss, p))
}

/// Mean over covered pixels of the squared RGB distance, and its gradient
/// (zero on uncovered pixels).
pub fn photometric_grad<S: Scalar>(
    render: &Tensor<S>,
    reference: &Tensor<S>,
    coverage: &[bool],
) -> Result<(f64, Tensor<S>), CriticError> {
    if render.shape() != reference.shape() {
        return Err(CriticError::Shape { what: "photometric", lhs: render.shape().to_vec(), rhs: reference.shape().to_vec() });
    }
    let c = render.last_dim();
    if coverage.len() * c != render.len() {
        return Err(CriticError::Shape { what: "coverage mask", lhs: vec![coverage.len()], rhs: render.shape().to_vec() });
    }
    let count = coverage.iter().filter(|&&m| m).count();
    let mut grad = Tensor::zeros(render.shape());
    if count == 0 {
        log::warn!("photometric critic: no covered pixels");
        return Ok((0.0, grad));
    }
    let scale = 2.0 / count as f64;
    let mut total = 0.0;
    let (r, t) = (render.data(), reference.data());
    let g = grad.data_mut();
    for (p, _) in coverage.iter().enumerate().filter(|(_, &m)| m) {
        for k in p * c..(p + 1) * c {
            let d = r[k].f64() - t[k].f64();
            total += d * d;
            g[k] = S::c(scale * d);
        }
    }
    Ok((total / count as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap()
    }

    fn rand_img(rng: &mut impl Rng, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(&[h, w, 3], (0..h * w * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn delta_denoiser_inverts_add_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = schedule();
        let target = rand_img(&mut rng, 4, 5);
        let d = DeltaDenoiser::new(target.clone(), s.clone());
        let cond = Conditioning::flat(4, 5);
        for t in [0.02, 0.3, 0.98] {
            let eps = sample_noise(&[4, 5, 3], &mut rng);
            let x_t = add_noise(&target, s.alpha_bar_at(t), &eps).unwrap();
            assert!(d.predict(&x_t, &cond, t).unwrap().max_abs_diff(&eps) <= 1e-12);
            let clean = target.map(|v| v * s.alpha_bar_at(t).sqrt());
            assert!(d.predict(&clean, &cond, t).unwrap().data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn delta_denoiser_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = schedule();
        let target = rand_img(&mut rng, 3, 3);
        let x_t = rand_img(&mut rng, 3, 3);
        let t = 0.61;
        let got = DeltaDenoiser::new(target.clone(), s.clone()).predict(&x_t, &Conditioning::flat(3, 3), t).unwrap();
        let ab: f64 = s.alpha_bar[(t * 999.0f64).round() as usize];
        for ((g, x), y) in got.data().iter().zip(x_t.data()).zip(target.data()) {
            assert!((g - (x - ab.sqrt() * y) / (1.0 - ab).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn sds_closed_form_and_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = schedule();
        let (x, target) = (rand_img(&mut rng, 4, 4), rand_img(&mut rng, 4, 4));
        let cond = Conditioning::flat(4, 4);
        let eps = sample_noise(&[4, 4, 3], &mut rng);
        let t = 0.45;
        let at_target = sds_grad(&x, &DeltaDenoiser::new(x.clone(), s.clone()), &cond, t, &eps, &s).unwrap();
        assert!(at_target.data().iter().all(|v| v.abs() < 1e-12));
        let g = sds_grad(&x, &DeltaDenoiser::new(target.clone(), s.clone()), &cond, t, &eps, &s).unwrap();
        let ab = s.alpha_bar_at(t);
        let k = s.weight(t) * ab.sqrt() / (1.0 - ab).sqrt();
        for ((g, a), b) in g.data().iter().zip(x.data()).zip(target.data()) {
            assert!((g - k * (a - b)).abs() < 1e-9);
        }
    }

    #[test]
    fn vsd_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = schedule();
        let (x, target) = (rand_img(&mut rng, 5, 3), rand_img(&mut rng, 5, 3));
        let cond = Conditioning::flat(5, 3);
        let eps = sample_noise(&[5, 3, 3], &mut rng);
        let prior = DeltaDenoiser::new(target.clone(), s.clone());
        let t = 0.7;
        let same = vsd_grad(&x, &prior, &prior, &cond, t, &eps, &s).unwrap();
        assert!(same.data().iter().all(|&v| v == 0.0));
        let echo = FixedNoise { eps: eps.clone() };
        assert_eq!(vsd_grad(&x, &prior, &echo, &cond, t, &eps, &s).unwrap(), sds_grad(&x, &prior, &cond, t, &eps, &s).unwrap());
        let current = DeltaDenoiser::new(x.clone(), s.clone());
        let g = vsd_grad(&x, &prior, &current, &cond, t, &eps, &s).unwrap();
        let swapped = vsd_grad(&x, &current, &prior, &cond, t, &eps, &s).unwrap();
        assert_eq!(g, swapped.map(|v| -v));
        let ab = s.alpha_bar_at(t);
        let k = s.weight(t) * ab.sqrt() / (1.0 - ab).sqrt();
        for ((g, a), b) in g.data().iter().zip(x.data()).zip(target.data()) {
            assert!((g - k * (a - b)).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_denoiser_outputs_are_rejected() {
        let s = schedule();
        let x = Tensor::<f64>::zeros(&[2, 2, 3]);
        let wrong = FixedNoise { eps: Tensor::zeros(&[2, 3, 3]) };
        let err = vsd_grad(&x, &ZeroDenoiser, &wrong, &Conditioning::flat(2, 2), 0.5, &x, &s);
        assert!(matches!(err, Err(CriticError::Shape { .. })));
    }

    #[test]
    fn photometric_arithmetic() {
        let r = Tensor::<f64>::full(&[2, 2, 3], 0.7);
        let mut reference = Tensor::<f64>::full(&[2, 2, 3], 0.5);
        let mask = [true, false, true, true];
        let (loss, g) = photometric_grad(&r, &reference, &mask).unwrap();
        assert!((loss - 3.0 * 0.04).abs() < 1e-12);
        assert_eq!(&g.data()[3..6], &[0.0; 3]);
        assert!((g.data()[0] - 2.0 * 0.2 / 3.0).abs() < 1e-12);
        reference = r.clone();
        let (loss, g) = photometric_grad(&r, &reference, &mask).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let (loss, _) = photometric_grad(&r, &reference, &[false; 4]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn photometric_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (rand_img(&mut rng, 6, 7), rand_img(&mut rng, 6, 7));
        let mask: Vec<bool> = (0..42).map(|_| rng.random_bool(0.6)).collect();
        let (loss, _) = photometric_grad(&a, &b, &mask).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for p in 0..42 {
            if mask[p] {
                n += 1;
                for c in 0..3 {
                    sum += (a.data()[p * 3 + c] - b.data()[p * 3 + c]).powi(2);
                }
            }
        }
        assert!((loss - sum / n as f64).abs() < 1e-10);
    }

    #[test]
    fn lora_starts_at_zero_and_loss_is_noise_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = schedule();
        let lora = LoraDenoiser::<f64>::new(LoraConfig::default(), &mut rng).unwrap();
        let x = rand_img(&mut rng, 16, 16);
        let cond = Conditioning::flat(16, 16);
        assert!(lora.predict(&x, &cond, 0.5).unwrap().data().iter().all(|&v| v == 0.0));
        let eps = sample_noise(&[16, 16, 3], &mut rng);
        let tape = Tape::new();
        let (loss, _) = lora_loss(&tape, &lora, &x, &cond, 0.5, &eps, &s).unwrap();
        let want = eps.data().iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
        assert!((tape.value(loss).item() - want).abs() < 1e-12);
        assert!((want - 1.0).abs() < 0.15);
        let echo = FixedNoise { eps: eps.clone() };
        assert!(matches!(lora_loss(&Tape::new(), &echo, &x, &cond, 0.5, &eps, &s), Err(CriticError::NotTrainable)));
        assert!(LoraDenoiser::<f64>::new(LoraConfig { width: 0, ..LoraConfig::default() }, &mut rng).is_err());
    }

    #[test]
    fn linear_lora_descends_on_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = schedule();
        let mut lora = LoraDenoiser::<f64>::new(LoraConfig { width: 8, ..LoraConfig::default() }, &mut rng).unwrap();
        let x = rand_img(&mut rng, 4, 4);
        let cond = Conditioning::flat(4, 4);
        let eps = sample_noise(&[4, 4, 3], &mut rng);
        let eval = |l: &LoraDenoiser<f64>| {
            let tape = Tape::new();
            let (loss, p) = lora_loss(&tape, l, &x, &cond, 0.8, &eps, &s).unwrap();
            let v = tape.value(loss).item();
            let mut g = tape.backward(loss).unwrap();
            (v, l.store.collect_grads(&p, &mut g))
        };
        let (before, grads) = eval(&lora);
        for (v, g) in lora.store.values_mut().zip(&grads) {
            for (a, b) in v.data_mut().iter_mut().zip(g.data()) {
                *a -= 1e-2 * b;
            }
        }
        assert!(eval(&lora).0 < before);
    }
}
