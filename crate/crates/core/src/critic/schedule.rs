use serde::{Deserialize, Serialize};

use super::CriticError;
use crate::diffcore::{Scalar, Tensor};

pub const BETA_START: f64 = 8.5e-4;
pub const BETA_END: f64 = 1.2e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = CriticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            _ => Err(CriticError::Config(format!("unknown schedule kind {s:?}"))),
        }
    }
}

/// Discrete diffusion schedule. `alpha_bar[0] = 1` and
/// `alpha_bar[s] = ∏_{r ≤ s} (1 − β_r)` for `s = 1..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self, CriticError> {
        if steps < 2 {
            return Err(CriticError::Config(format!("schedule needs at least 2 steps, got {steps}")));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|s| BETA_START + (BETA_END - BETA_START) * s as f64 / (steps - 1) as f64)
                .collect(),
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { kind, betas, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Continuous `t ∈ [0,1]` to a step index: `round(t·(steps−1))`, at least 1.
    pub fn step_index(&self, t: f64) -> usize {
        ((t.clamp(0.0, 1.0) * (self.steps() - 1) as f64).round() as usize).max(1)
    }

    pub fn alpha_bar_at(&self, t: f64) -> f64 {
        self.alpha_bar[self.step_index(t)]
    }

    /// Score-distillation weight `sqrt(1 − ᾱ_t)`.
    pub fn weight(&self, t: f64) -> f64 {
        weight_from_alpha_bar(self.alpha_bar_at(t))
    }
}

pub fn weight_from_alpha_bar(alpha_bar: f64) -> f64 {
    (1.0 - alpha_bar).max(0.0).sqrt()
}

/// Forward diffusion `sqrt(ᾱ)·x0 + sqrt(1−ᾱ)·eps`.
pub fn add_noise<S: Scalar>(x0: &Tensor<S>, alpha_bar: f64, eps: &Tensor<S>) -> Result<Tensor<S>, CriticError> {
    if x0.shape() != eps.shape() {
        return Err(CriticError::Shape { what: "add_noise", lhs: x0.shape().to_vec(), rhs: eps.shape().to_vec() });
    }
    let (a, b) = (S::c(alpha_bar.sqrt()), S::c((1.0 - alpha_bar).max(0.0).sqrt()));
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + b * e).collect();
    Ok(Tensor::from_vec(x0.shape(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn alpha_bar_starts_at_one_and_decreases() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        assert_eq!(s.alpha_bar[0], 1.0);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar.iter().all(|&a| a > 0.0 && a <= 1.0));
        assert_eq!(weight_from_alpha_bar(1.0), 0.0);
        assert_eq!(weight_from_alpha_bar(0.75), 0.5);
    }

    #[test]
    fn matches_product_oracle() {
        // values from a direct float64 evaluation of the product in a scripting language
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        let last = 0.0015789629305514416;
        assert!((s.alpha_bar[1000] - last).abs() <= 1e-12 * last);
        assert_eq!(s.step_index(0.98), 979);
        assert!((s.alpha_bar_at(0.98) - 0.0020297656355230814).abs() < 1e-15);
        assert!((s.weight(0.98) - 0.9989846016653495).abs() < 1e-12);
    }

    #[test]
    fn time_mapping_never_reaches_clean_step() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        assert_eq!(s.step_index(0.0), 1);
        assert!(s.weight(0.0) > 0.0);
        let ws: Vec<f64> = (0..=100).map(|i| s.weight(i as f64 / 100.0)).collect();
        assert!(ws.windows(2).all(|w| w[1] >= w[0]));
        assert!(NoiseSchedule::new(ScheduleKind::Linear, 1).is_err());
        assert!("cosine".parse::<ScheduleKind>().is_err());
    }

    #[test]
    fn add_noise_edge_cases() {
        let x0 = Tensor::<f64>::from_vec(&[2, 1, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let eps = Tensor::<f64>::from_vec(&[2, 1, 3], vec![1.0, -1.0, 0.5, 0.0, 2.0, -0.5]).unwrap();
        assert_eq!(add_noise(&x0, 1.0, &eps).unwrap(), x0);
        let zero = Tensor::<f64>::zeros(&[2, 1, 3]);
        let xt = add_noise(&zero, 0.36, &eps).unwrap();
        for (a, b) in xt.data().iter().zip(eps.data()) {
            assert!((a - 0.8 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn noised_variance_matches_schedule() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        let ab = s.alpha_bar_at(0.4);
        let x0 = Tensor::<f64>::from_vec(&[1, 1, 3], vec![0.2, 0.5, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let eps = Tensor::from_vec(&[1, 1, 3], (0..3).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
            let xt = add_noise(&x0, ab, &eps).unwrap();
            for c in 0..3 {
                sum[c] += xt.data()[c];
                sq[c] += xt.data()[c] * xt.data()[c];
            }
        }
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let var = (sq[c] - n as f64 * mean * mean) / (n - 1) as f64;
            assert!((var / (1.0 - ab) - 1.0).abs() < 0.05, "channel {c}: {var} vs {}", 1.0 - ab);
        }
    }
}
