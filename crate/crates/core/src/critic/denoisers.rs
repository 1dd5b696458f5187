use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Conditioning, CriticError, NoiseSchedule};
use crate::diffcore::nn::{Init, Linear};
use crate::diffcore::{Bound, ParamStore, Scalar, Tape, Tensor, Var};

/// Noise predictor `ε(x_t, cond, t)`; output has the shape of `x_t`.
pub trait Denoiser<S: Scalar> {
    fn predict(&self, x_t: &Tensor<S>, cond: &Conditioning<S>, t: f64) -> Result<Tensor<S>, CriticError>;

    /// Tape-recorded prediction over the trainable parameters, with the
    /// binding that collects their gradients. `None` for frozen denoisers.
    fn record(
        &self,
        _tape: &Tape<S>,
        _x_t: &Tensor<S>,
        _cond: &Conditioning<S>,
        _t: f64,
    ) -> Result<Option<(Var, Bound)>, CriticError> {
        Ok(None)
    }
}

/// Exact noise predictor for data concentrated at one image `x*`:
/// `ε̂ = (x_t − sqrt(ᾱ)·x*) / sqrt(1 − ᾱ)`.
#[derive(Clone, Debug)]
pub struct DeltaDenoiser<S: Scalar> {
    pub target: Tensor<S>,
    pub schedule: NoiseSchedule,
}

impl<S: Scalar> DeltaDenoiser<S> {
    pub fn new(target: Tensor<S>, schedule: NoiseSchedule) -> Self {
        Self { target, schedule }
    }
}

impl<S: Scalar> Denoiser<S> for DeltaDenoiser<S> {
    fn predict(&self, x_t: &Tensor<S>, _cond: &Conditioning<S>, t: f64) -> Result<Tensor<S>, CriticError> {
        if x_t.shape() != self.target.shape() {
            return Err(CriticError::Shape {
                what: "delta denoiser",
                lhs: x_t.shape().to_vec(),
                rhs: self.target.shape().to_vec(),
            });
        }
        let ab = self.schedule.alpha_bar_at(t);
        if ab >= 1.0 {
            return Err(CriticError::CleanStep { t });
        }
        let (a, inv) = (S::c(ab.sqrt()), S::c(1.0 / (1.0 - ab).sqrt()));
        let data = x_t.data().iter().zip(self.target.data()).map(|(&x, &y)| (x - a * y) * inv).collect();
        Ok(Tensor::from_vec(x_t.shape(), data)?)
    }
}

/// Always returns the stored noise; stands in for "predicts the injected noise".
#[derive(Clone, Debug)]
pub struct FixedNoise<S: Scalar> {
    pub eps: Tensor<S>,
}

impl<S: Scalar> Denoiser<S> for FixedNoise<S> {
    fn predict(&self, x_t: &Tensor<S>, _cond: &Conditioning<S>, _t: f64) -> Result<Tensor<S>, CriticError> {
        if x_t.shape() != self.eps.shape() {
            return Err(CriticError::Shape { what: "fixed noise", lhs: x_t.shape().to_vec(), rhs: self.eps.shape().to_vec() });
        }
        Ok(self.eps.clone())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl<S: Scalar> Denoiser<S> for ZeroDenoiser {
    fn predict(&self, x_t: &Tensor<S>, _cond: &Conditioning<S>, _t: f64) -> Result<Tensor<S>, CriticError> {
        Ok(Tensor::zeros(x_t.shape()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    /// Width of both hidden layers.
    pub width: usize,
    /// Sinusoid pairs in the time embedding.
    pub time_freqs: usize,
    /// Image channels in critic space.
    pub channels: usize,
    /// Length of the prompt embedding.
    pub prompt_dim: usize,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { width: 64, time_freqs: 4, channels: 3, prompt_dim: 0 }
    }
}

impl LoraConfig {
    pub fn input_width(&self) -> usize {
        self.channels + 1 + 2 * self.time_freqs + self.prompt_dim
    }
}

/// Small trainable noise predictor. Per pixel it sees `x_t`, depth, a
/// sinusoidal embedding of `t` and the prompt vector:
///
/// ```text
/// h1  = relu(W1·in)
/// h2  = relu(W2·h1 + Wc·mean(h1))
/// out = W3·h2                      (W3 starts at zero)
/// ```
///
/// Parameters are registered under `lora.*` in its own store.
#[derive(Clone, Debug)]
pub struct LoraDenoiser<S: Scalar> {
    pub config: LoraConfig,
    pub store: ParamStore<S>,
    input: Linear,
    hidden: Linear,
    context: Linear,
    output: Linear,
}

impl<S: Scalar> LoraDenoiser<S> {
    pub fn new(config: LoraConfig, rng: &mut impl Rng) -> Result<Self, CriticError> {
        if config.width < 1 || config.channels < 1 {
            return Err(CriticError::Config(format!("lora width and channels must be at least 1, got {config:?}")));
        }
        let mut store = ParamStore::new();
        let w = config.width;
        let input = Linear::new(&mut store, "lora.input", config.input_width(), w, Init::KaimingUniform, rng);
        let hidden = Linear::new(&mut store, "lora.hidden", w, w, Init::KaimingUniform, rng);
        let context = Linear::new(&mut store, "lora.context", w, w, Init::KaimingUniform, rng);
        let output = Linear::new(&mut store, "lora.output", w, config.channels, Init::Zero, rng);
        Ok(Self { config, store, input, hidden, context, output })
    }

    fn features(&self, x_t: &Tensor<S>, cond: &Conditioning<S>, t: f64) -> Result<Tensor<S>, CriticError> {
        let (h, w, c) = match *x_t.shape() {
            [h, w, c] if c == self.config.channels => (h, w, c),
            _ => {
                return Err(CriticError::Shape {
                    what: "lora input [h,w,channels]",
                    lhs: x_t.shape().to_vec(),
                    rhs: vec![self.config.channels],
                })
            }
        };
        cond.check(h, w)?;
        if cond.prompt.len() != self.config.prompt_dim {
            return Err(CriticError::Shape {
                what: "prompt embedding",
                lhs: vec![cond.prompt.len()],
                rhs: vec![self.config.prompt_dim],
            });
        }
        let mut tail: Vec<S> = Vec::with_capacity(2 * self.config.time_freqs + self.config.prompt_dim);
        for k in 0..self.config.time_freqs {
            let a = t * std::f64::consts::PI * (1u64 << k) as f64;
            tail.push(S::c(a.sin()));
            tail.push(S::c(a.cos()));
        }
        tail.extend_from_slice(&cond.prompt);
        let width = self.config.input_width();
        let mut out = Vec::with_capacity(h * w * width);
        for p in 0..h * w {
            out.extend_from_slice(&x_t.data()[p * c..(p + 1) * c]);
            out.push(cond.depth.data()[p]);
            out.extend_from_slice(&tail);
        }
        Ok(Tensor::from_vec(&[h * w, width], out)?)
    }

    /// Tape-recorded prediction with parameters from `p`.
    pub fn forward(
        &self,
        tape: &Tape<S>,
        p: &Bound,
        x_t: &Tensor<S>,
        cond: &Conditioning<S>,
        t: f64,
    ) -> Result<Var, CriticError> {
        let x = tape.constant(self.features(x_t, cond, t)?);
        let h1 = tape.relu(self.input.forward(tape, p, x)?)?;
        let pooled = tape.reshape(tape.mean_rows(h1)?, &[1, self.config.width])?;
        let ctx = tape.reshape(self.context.forward(tape, p, pooled)?, &[self.config.width])?;
        let h2 = tape.add(self.hidden.forward(tape, p, h1)?, ctx)?;
        let out = self.output.forward(tape, p, tape.relu(h2)?)?;
        Ok(tape.reshape(out, x_t.shape())?)
    }
}

impl<S: Scalar> Denoiser<S> for LoraDenoiser<S> {
    fn predict(&self, x_t: &Tensor<S>, cond: &Conditioning<S>, t: f64) -> Result<Tensor<S>, CriticError> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let out = self.forward(&tape, &p, x_t, cond, t)?;
        Ok((*tape.value(out)).clone())
    }

    fn record(
        &self,
        tape: &Tape<S>,
        x_t: &Tensor<S>,
        cond: &Conditioning<S>,
        t: f64,
    ) -> Result<Option<(Var, Bound)>, CriticError> {
        let p = self.store.bind(tape)?;
        Ok(Some((self.forward(tape, &p, x_t, cond, t)?, p)))
    }
}

/// How a trainable lora relates to the prior it is paired with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoraMode {
    /// The lora is a complete noise predictor on its own.
    Standalone,
    /// `ε = ε_prior + net`.
    Noise,
    /// The net shifts the prior's clean-image estimate:
    /// `ε = ε_prior − sqrt(ᾱ/(1−ᾱ))·net`.
    #[default]
    Sample,
}

/// Trainable network paired with a frozen base according to `mode`. The
/// net's output layer starts at zero, so an adapted pair starts equal to
/// the base the way a LoRA starts equal to the model it adapts.
#[derive(Clone, Copy)]
pub struct Adapted<'a, S: Scalar> {
    pub base: &'a dyn Denoiser<S>,
    pub net: &'a LoraDenoiser<S>,
    pub mode: LoraMode,
    pub schedule: &'a NoiseSchedule,
}

impl<S: Scalar> Adapted<'_, S> {
    fn scale(&self, t: f64) -> f64 {
        match self.mode {
            LoraMode::Sample => {
                let ab = self.schedule.alpha_bar_at(t);
                -(ab / (1.0 - ab)).sqrt()
            }
            _ => 1.0,
        }
    }
}

impl<S: Scalar> Denoiser<S> for Adapted<'_, S> {
    fn predict(&self, x_t: &Tensor<S>, cond: &Conditioning<S>, t: f64) -> Result<Tensor<S>, CriticError> {
        if self.mode == LoraMode::Standalone {
            return self.net.predict(x_t, cond, t);
        }
        let mut out = self.base.predict(x_t, cond, t)?;
        let k = S::c(self.scale(t));
        out.add_assign(&self.net.predict(x_t, cond, t)?.map(|v| v * k));
        Ok(out)
    }

    fn record(
        &self,
        tape: &Tape<S>,
        x_t: &Tensor<S>,
        cond: &Conditioning<S>,
        t: f64,
    ) -> Result<Option<(Var, Bound)>, CriticError> {
        if self.mode == LoraMode::Standalone {
            return self.net.record(tape, x_t, cond, t);
        }
        let base = self.base.predict(x_t, cond, t)?;
        let p = self.net.store.bind(tape)?;
        let delta = tape.scale(self.net.forward(tape, &p, x_t, cond, t)?, S::c(self.scale(t)))?;
        Ok(Some((tape.offset(delta, &base)?, p)))
    }
}
