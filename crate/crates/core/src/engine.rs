//! Noise schedules, the weighted denoising objective with self-conditioning, and the
//! deterministic Euler sampler.

use hmpdm_tensor::{no_grad, AdamW, AdamWConfig, Scalar, Tensor, TensorError};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{LossWeighting, RunConfig, SigmaDistribution, WindowOffset};
use crate::error::{Error, Result};
use crate::model::{Denoiser, Hmpdm};
use crate::nn::dims5;
use crate::talc::{add_noise, make_joint, precondition_coeffs, JointLatent, NoiseLevel};

/// Decreasing noise levels `sigma_n > .. > sigma_1`, with an implicit `sigma_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl NoiseSchedule {
    /// `sigma_i = (max^(1/rho) + (1 - (i-1)/(n-1)) (min^(1/rho) - max^(1/rho)))^rho`, endpoints
    /// pinned to the bounds. `n = 1` yields `[sigma_max]`.
    pub fn karras(n: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("noise schedule needs at least one step".into()));
        }
        if !(rho > 0.0) || !(sigma_min > 0.0 && sigma_min <= sigma_max) {
            return Err(Error::Invalid(format!(
                "invalid schedule parameters rho={rho}, bounds [{sigma_min}, {sigma_max}]"
            )));
        }
        let (lo, hi) = (sigma_min.powf(1.0 / rho), sigma_max.powf(1.0 / rho));
        let mut sigmas: Vec<f64> = (1..=n)
            .rev()
            .map(|i| {
                if n == 1 || i == n {
                    sigma_max
                } else if i == 1 {
                    sigma_min
                } else {
                    let frac = (i - 1) as f64 / (n - 1) as f64;
                    (hi + (1.0 - frac) * (lo - hi)).powf(rho)
                }
            })
            .collect();
        sigmas.dedup();
        if sigmas.len() != n {
            return Err(Error::Invalid(format!("schedule with n={n} is not strictly decreasing")));
        }
        Ok(NoiseSchedule {
            sigmas,
            sigma_min,
            sigma_max,
            rho,
        })
    }

    /// Levels in sampling order: `sigmas()[0] == sigma_max`.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn level(&self, sigma: f64) -> Result<NoiseLevel> {
        NoiseLevel::new(sigma, self.sigma_min, self.sigma_max)
    }
}

/// Draws a training noise level: uniform over `grid`, or log-uniform over its bounds.
pub fn sample_sigma<R: Rng + ?Sized>(rng: &mut R, dist: SigmaDistribution, grid: &NoiseSchedule) -> NoiseLevel {
    let sigma = match dist {
        SigmaDistribution::KarrasGrid => grid.sigmas[rng.random_range(0..grid.sigmas.len())],
        SigmaDistribution::LogUniform => {
            let (a, b) = (grid.sigma_min.ln(), grid.sigma_max.ln());
            (a + rng.random::<f64>() * (b - a)).exp().clamp(grid.sigma_min, grid.sigma_max)
        }
    };
    NoiseLevel::new(sigma, grid.sigma_min, grid.sigma_max).expect("grid levels lie within bounds")
}

/// `lambda = 1 / c_out^2` (or 1 when uniform); rejects `c_out == 0`.
pub fn loss_weight(sigma: f64, rule: LossWeighting, canonical_cin: bool) -> Result<f64> {
    match rule {
        LossWeighting::Uniform => Ok(1.0),
        LossWeighting::InverseCout => {
            let c_out = precondition_coeffs(sigma, canonical_cin).c_out;
            if c_out == 0.0 {
                return Err(Error::Invalid(format!("loss weight undefined at sigma = {sigma}")));
            }
            Ok(1.0 / (c_out * c_out))
        }
    }
}

/// `(B, P, ...) -> (B, frames, ...)` filled with the last history frame.
pub fn replicate_last<S: Scalar>(h: &Tensor<S>, frames: usize) -> Result<Tensor<S>> {
    let p = h.dim(1);
    Ok(h.gather_frames(&vec![p - 1; frames])?.detach())
}

/// History slots carry `h`, future slots the detached estimate.
pub fn self_condition_input<S: Scalar>(h: &Tensor<S>, future_estimate: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(Tensor::concat(&[h.detach(), future_estimate.detach()], 1)?)
}

/// Stateless per-step RNG: resuming at any step reproduces the same stream.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub p_sc: f64,
    pub loss_weighting: LossWeighting,
    pub sigma_dist: SigmaDistribution,
    pub n_train: usize,
    pub rho: f64,
    pub adam: AdamWConfig,
}

impl TrainSettings {
    pub fn from_run(cfg: &RunConfig) -> Self {
        TrainSettings {
            p_sc: cfg.p_sc,
            loss_weighting: cfg.loss_weighting,
            sigma_dist: cfg.sigma_dist,
            n_train: cfg.n_train,
            rho: cfg.rho,
            adam: AdamWConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            },
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub sigmas: Vec<f64>,
    pub self_conditioned: bool,
    pub forwards: usize,
}

/// Weighted loss value and the graph it was computed on.
#[derive(Debug, Clone)]
pub struct LossTerms<S: Scalar> {
    pub loss: Tensor<S>,
    pub output: Tensor<S>,
    pub self_conditioned: bool,
}

#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    pub model: Hmpdm<S>,
    pub opt: AdamW<S>,
    pub settings: TrainSettings,
    grid: NoiseSchedule,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: Hmpdm<S>, settings: TrainSettings) -> Result<Self> {
        if !(0.0..=1.0).contains(&settings.p_sc) {
            return Err(Error::Config(format!("p_sc {} outside [0, 1]", settings.p_sc)));
        }
        let grid = NoiseSchedule::karras(
            settings.n_train,
            model.config.sigma_min,
            model.config.sigma_max,
            settings.rho,
        )?;
        let opt = AdamW::new(settings.adam, &model.params)?;
        Ok(Trainer {
            model,
            opt,
            settings,
            grid,
        })
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.opt.steps_taken()
    }

    pub fn grid(&self) -> &NoiseSchedule {
        &self.grid
    }

    /// Weighted squared error over the future slots for a fixed noisy joint latent.
    pub fn loss_terms(&self, joint: &JointLatent<S>, x: &Tensor<S>, self_conditioned: bool) -> Result<LossTerms<S>> {
        let model = &self.model;
        let p = joint.mask.history();
        let f = joint.mask.future();
        let h = joint.data.narrow(1, 0, p)?.detach();
        let sc = if self_conditioned {
            let first = no_grad(|| model.denoise(joint, &replicate_last(&h, p + f)?))?;
            self_condition_input(&h, &first.narrow(1, p, f)?)?
        } else {
            replicate_last(&h, p + f)?
        };
        let output = model.denoise(joint, &sc)?;
        let loss = self.weighted_loss(&output, x, joint)?;
        Ok(LossTerms {
            loss,
            output,
            self_conditioned,
        })
    }

    /// `mean_b lambda_b * mean((D_future - x)^2)`.
    pub fn weighted_loss(&self, output: &Tensor<S>, x: &Tensor<S>, joint: &JointLatent<S>) -> Result<Tensor<S>> {
        let (p, f) = (joint.mask.history(), joint.mask.future());
        let b = x.dim(0);
        let err = output.narrow(1, p, f)?.sub(x)?.square()?;
        let per = err.reshape(&[b, err.numel() / b])?.mean_axis(1)?;
        let weights: Vec<f64> = joint
            .sigmas
            .iter()
            .map(|s| loss_weight(s.sigma(), self.settings.loss_weighting, self.model.config.canonical_cin))
            .collect::<Result<_>>()?;
        Ok(per.scale_leading(&weights)?.mean()?)
    }

    /// One step on history `h` (B, P, ...) and clean future `x` (B, F, ...).
    pub fn training_step<R: Rng + ?Sized>(&mut self, h: &Tensor<S>, x: &Tensor<S>, rng: &mut R) -> Result<StepReport> {
        let step = self.step() + 1;
        let b = dims5(h)?[0];
        let sigmas: Vec<NoiseLevel> = (0..b)
            .map(|_| sample_sigma(rng, self.settings.sigma_dist, &self.grid))
            .collect();
        let first_sigma = sigmas[0].sigma();
        let self_conditioned = rng.random::<f64>() < self.settings.p_sc;
        let before = self.model.forward_count();
        let nonfinite = |e: Error| match e {
            Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss {
                step,
                sigma: first_sigma,
            },
            other => other,
        };
        let z = add_noise(x, &sigmas, rng)?;
        let joint = make_joint(h, &z, &sigmas)?;
        let terms = self.loss_terms(&joint, x, self_conditioned).map_err(nonfinite)?;
        let loss = terms.loss.item().as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                sigma: first_sigma,
            });
        }
        let grads = terms.loss.backward().map_err(Error::from).map_err(nonfinite)?;
        self.opt.step(&mut self.model.params, &grads).map_err(Error::from).map_err(nonfinite)?;
        Ok(StepReport {
            step,
            loss,
            sigmas: sigmas.iter().map(|s| s.sigma()).collect(),
            self_conditioned,
            forwards: self.model.forward_count() - before,
        })
    }
}

/// Normalized training latents, one `(T, C', H', W')` tensor per clip.
#[derive(Debug, Clone)]
pub struct TrainData<S: Scalar> {
    pub clips: Vec<Tensor<S>>,
    pub history: usize,
    pub future: usize,
    pub offset: WindowOffset,
}

impl<S: Scalar> TrainData<S> {
    pub fn new(clips: Vec<Tensor<S>>, history: usize, future: usize, offset: WindowOffset) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Dataset("no training clips".into()));
        }
        for (i, c) in clips.iter().enumerate() {
            if c.rank() != 4 || c.shape()[1..] != clips[0].shape()[1..] {
                return Err(Error::Dataset(format!("clip {i} latent {:?} has inconsistent shape", c.shape())));
            }
            if c.dim(0) < history + future {
                return Err(Error::Dataset(format!(
                    "clip {i} has {} frames, P+F = {} required",
                    c.dim(0),
                    history + future
                )));
            }
        }
        Ok(TrainData {
            clips,
            history,
            future,
            offset,
        })
    }

    /// Draws `batch` distinct clips (with replacement once the set is exhausted) and a
    /// window per clip; returns `(h, x)`.
    pub fn draw<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<(Tensor<S>, Tensor<S>)> {
        let n = self.clips.len();
        let mut picks = Vec::with_capacity(batch);
        while picks.len() < batch {
            let take = (batch - picks.len()).min(n);
            picks.extend(index::sample(rng, n, take).into_iter());
        }
        let (p, f) = (self.history, self.future);
        let mut hs = Vec::with_capacity(batch);
        let mut xs = Vec::with_capacity(batch);
        for i in picks {
            let clip = &self.clips[i];
            let start = match self.offset {
                WindowOffset::Zero => 0,
                WindowOffset::Random => rng.random_range(0..=clip.dim(0) - p - f),
            };
            let win = clip.narrow(0, start, p + f)?;
            let s = win.shape().to_vec();
            let win = win.reshape(&[1, s[0], s[1], s[2], s[3]])?;
            hs.push(win.narrow(1, 0, p)?);
            xs.push(win.narrow(1, p, f)?);
        }
        Ok((Tensor::concat(&hs, 0)?, Tensor::concat(&xs, 0)?))
    }
}

/// Self-conditioning policy during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScMode {
    /// First step uses the replicated history frame, later steps the previous estimate.
    Previous,
    /// Every step uses the replicated history frame.
    Replicate,
}

/// Deterministic Euler sampling of `future` frames given history `h` (B, P, C', H', W').
pub fn sample<S, D, R>(
    model: &D,
    h: &Tensor<S>,
    future: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
    sc_mode: ScMode,
) -> Result<Tensor<S>>
where
    S: Scalar,
    D: Denoiser<S> + ?Sized,
    R: Rng + ?Sized,
{
    let [b, p, c, hh, ww] = dims5(h)?;
    let shape = [b, future, c, hh, ww];
    let n: usize = shape.iter().product();
    no_grad(|| {
        let sigmas = schedule.sigmas();
        let noise: Vec<S> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                S::from_f64(sigmas[0] * e)
            })
            .collect();
        let mut z = Tensor::new(&shape, noise)?;
        let h = h.detach();
        let mut sc = replicate_last(&h, p + future)?;
        for (k, &sigma) in sigmas.iter().enumerate() {
            let level = schedule.level(sigma)?;
            let joint = make_joint(&h, &z, &vec![level; b])?;
            let x0 = model.denoise(&joint, &sc)?.narrow(1, p, future)?;
            let Some(&next) = sigmas.get(k + 1) else {
                return Ok(x0);
            };
            let d = z.sub(&x0)?.scale(1.0 / sigma)?;
            z = z.add(&d.scale(next - sigma)?)?;
            if sc_mode == ScMode::Previous {
                sc = self_condition_input(&h, &x0)?;
            }
        }
        unreachable!("schedules are non-empty")
    })
}
