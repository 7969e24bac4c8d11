//! Temporal-aware latent conditioning: forward noising, clean/noisy frame
//! concatenation, masked dual time embeddings and the preconditioned denoiser.

use hmpdm_tensor::{ParamStore, Scalar, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{dims5, Linear};

/// Default noise bounds (EDM convention).
pub const SIGMA_MIN: f64 = 0.002;
pub const SIGMA_MAX: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    sigma: f64,
    bounds: (f64, f64),
}

impl NoiseLevel {
    pub fn new(sigma: f64, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min <= sigma_max) {
            return Err(Error::Invalid(format!("invalid noise bounds [{sigma_min}, {sigma_max}]")));
        }
        if !(sigma_min..=sigma_max).contains(&sigma) {
            return Err(Error::Invalid(format!(
                "sigma {sigma} outside [{sigma_min}, {sigma_max}]"
            )));
        }
        Ok(NoiseLevel {
            sigma,
            bounds: (sigma_min, sigma_max),
        })
    }

    /// The noise-free boundary `sigma = 0`, used to probe preconditioning limits.
    pub fn clean(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let bounds = Self::new(sigma_min, sigma_min, sigma_max)?.bounds;
        Ok(NoiseLevel { sigma: 0.0, bounds })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma_min(&self) -> f64 {
        self.bounds.0
    }

    pub fn sigma_max(&self) -> f64 {
        self.bounds.1
    }
}

/// Binary frame mask: 1 for the `P` history frames, 0 for the `F` future frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    values: Vec<u8>,
    history: usize,
}

impl FrameMask {
    pub fn new(history: usize, future: usize) -> Result<Self> {
        if history == 0 {
            return Err(Error::Invalid("at least one history frame is required".into()));
        }
        let mut values = vec![1u8; history];
        values.resize(history + future, 0);
        Ok(FrameMask { values, history })
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn future(&self) -> usize {
        self.values.len() - self.history
    }
}

/// `(B, P+F, C', H', W')`: clean history frames followed by noisy future frames.
#[derive(Debug, Clone)]
pub struct JointLatent<S: Scalar> {
    pub data: Tensor<S>,
    pub mask: FrameMask,
    /// One noise level per batch element.
    pub sigmas: Vec<NoiseLevel>,
}

impl<S: Scalar> JointLatent<S> {
    pub fn batch(&self) -> usize {
        self.data.dim(0)
    }

    pub fn sigma_values(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s.sigma()).collect()
    }
}

/// `z + sigma * n` with `n ~ N(0, I)`; `sigmas` gives one level per batch element.
pub fn add_noise<S: Scalar, R: Rng + ?Sized>(z: &Tensor<S>, sigmas: &[NoiseLevel], rng: &mut R) -> Result<Tensor<S>> {
    if z.rank() == 0 || z.dim(0) != sigmas.len() {
        return Err(Error::Geometry(format!(
            "{} noise levels for latent batch {:?}",
            sigmas.len(),
            z.shape()
        )));
    }
    let per = z.numel() / sigmas.len();
    let mut out = Vec::with_capacity(z.numel());
    for (chunk, level) in z.data().chunks(per.max(1)).zip(sigmas) {
        for &v in chunk {
            let n: f64 = StandardNormal.sample(rng);
            out.push(v + S::from_f64(level.sigma() * n));
        }
    }
    Ok(Tensor::new(z.shape(), out)?)
}

/// Concatenates `h` (P frames) and `z_sigma` (F frames) along the frame axis.
pub fn make_joint<S: Scalar>(h: &Tensor<S>, z_sigma: &Tensor<S>, sigmas: &[NoiseLevel]) -> Result<JointLatent<S>> {
    let [b, p, c, hh, ww] = dims5(h)?;
    let [b2, f, c2, hh2, ww2] = dims5(z_sigma)?;
    if (b, c, hh, ww) != (b2, c2, hh2, ww2) {
        return Err(Error::Geometry(format!(
            "history {:?} and noisy future {:?} disagree outside the frame axis",
            h.shape(),
            z_sigma.shape()
        )));
    }
    if sigmas.len() != b {
        return Err(Error::Geometry(format!("{} noise levels for batch {b}", sigmas.len())));
    }
    let mask = FrameMask::new(p, f)?;
    Ok(JointLatent {
        data: Tensor::concat(&[h.clone(), z_sigma.clone()], 1)?,
        mask,
        sigmas: sigmas.to_vec(),
    })
}

/// Sinusoidal features `[sin(s / 10000^(2i/dim)) .., cos(s / 10000^(2i/dim)) ..]`.
pub fn sinusoidal(s: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Invalid(format!("embedding dim must be even, got {dim}")));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| s / 10000f64.powf(2.0 * i as f64 / dim as f64))
        .collect();
    Ok(freqs.iter().map(|a| a.sin()).chain(freqs.iter().map(|a| a.cos())).collect())
}

/// Sinusoidal features followed by a SiLU MLP.
#[derive(Debug, Clone)]
pub struct TimeEmbedder {
    fc1: Linear,
    fc2: Linear,
    pub dim: usize,
}

impl TimeEmbedder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Invalid(format!("embedding dim must be even, got {dim}")));
        }
        Ok(TimeEmbedder {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, dim, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), dim, dim, rng)?,
            dim,
        })
    }

    /// Embeds each scalar argument; returns `(args.len(), dim)`.
    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, args: &[f64]) -> Result<Tensor<S>> {
        let mut feats = Vec::with_capacity(args.len() * self.dim);
        for &a in args {
            feats.extend(sinusoidal(a, self.dim)?);
        }
        let x = Tensor::from_f64(&[args.len(), self.dim], &feats)?;
        self.fc2.forward(p, &self.fc1.forward(p, &x)?.silu()?)
    }
}

/// The clean/noise embedder pair sharing architecture and initialization.
#[derive(Debug, Clone)]
pub struct DualTimeEmbedding {
    pub clean: TimeEmbedder,
    pub noise: TimeEmbedder,
    sigma_min: f64,
}

impl DualTimeEmbedding {
    /// Both embedders are initialized from the same `seed`.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, dim: usize, sigma_min: f64, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let clean = TimeEmbedder::new(store, "embed_clean", dim, &mut rng)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = TimeEmbedder::new(store, "embed_noise", dim, &mut rng)?;
        Ok(DualTimeEmbedding { clean, noise, sigma_min })
    }

    pub fn dim(&self) -> usize {
        self.clean.dim
    }

    /// Frame-wise embedding `(B, P+F, dim)`: rows with mask 1 use the clean embedder at
    /// `0.25 ln sigma_min`, rows with mask 0 use the noise embedder at `0.25 ln sigma_b`.
    pub fn frame_embeddings<S: Scalar>(&self, p: &ParamStore<S>, sigmas: &[f64], mask: &FrameMask) -> Result<Tensor<S>> {
        let b = sigmas.len();
        let clean = self.clean.forward(p, &[0.25 * self.sigma_min.ln()])?;
        let noise_args: Vec<f64> = sigmas.iter().map(|s| 0.25 * s.ln()).collect();
        let noise = self.noise.forward(p, &noise_args)?;
        let d = self.dim();
        // (B, 2, dim): slot 0 clean, slot 1 noisy, then pick per frame from the mask
        let clean = clean.reshape(&[1, 1, d])?.expand(0, b)?;
        let noise = noise.reshape(&[b, 1, d])?;
        let slots = Tensor::concat(&[clean, noise], 1)?;
        let pick: Vec<usize> = mask.values().iter().map(|&m| if m == 1 { 0 } else { 1 }).collect();
        Ok(slots.gather(1, &pick)?)
    }

    /// Single-level embedding `(P+F, dim)`.
    pub fn time_embedding<S: Scalar>(&self, p: &ParamStore<S>, sigma: &NoiseLevel, mask: &FrameMask) -> Result<Tensor<S>> {
        let e = self.frame_embeddings(p, &[sigma.sigma()], mask)?;
        Ok(e.reshape(&[mask.len(), self.dim()])?)
    }
}

/// Scale-dependent denoiser coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_in: f64,
    pub c_out: f64,
}

/// `c_skip = 1/(s^2+1)`, `c_in = sqrt(c_skip^2)`, `c_out = sqrt(1 - c_in^2)`.
///
/// With `canonical_cin` the input scale is `1/sqrt(s^2+1)` instead.
pub fn precondition_coeffs(sigma: f64, canonical_cin: bool) -> Preconditioning {
    let c_skip = 1.0 / (sigma * sigma + 1.0);
    let c_in = if canonical_cin {
        1.0 / (sigma * sigma + 1.0).sqrt()
    } else {
        (c_skip * c_skip).sqrt()
    };
    let c_out = (1.0 - c_in * c_in).sqrt();
    Preconditioning { c_skip, c_in, c_out }
}

/// `D = c_skip * j + c_out * net(c_in * j)` with per-batch coefficients.
///
/// When every `c_out` is zero the network term vanishes and `j` is returned as is.
pub fn denoise<S, F>(joint: &JointLatent<S>, canonical_cin: bool, net: F) -> Result<Tensor<S>>
where
    S: Scalar,
    F: FnOnce(&Tensor<S>) -> Result<Tensor<S>>,
{
    let coeffs: Vec<Preconditioning> = joint
        .sigmas
        .iter()
        .map(|s| precondition_coeffs(s.sigma(), canonical_cin))
        .collect();
    let c_skip: Vec<f64> = coeffs.iter().map(|c| c.c_skip).collect();
    let c_in: Vec<f64> = coeffs.iter().map(|c| c.c_in).collect();
    let c_out: Vec<f64> = coeffs.iter().map(|c| c.c_out).collect();
    let skip = joint.data.scale_leading(&c_skip)?;
    if c_out.iter().all(|&c| c == 0.0) {
        return Ok(skip);
    }
    let out = net(&joint.data.scale_leading(&c_in)?)?;
    if out.shape() != joint.data.shape() {
        return Err(Error::Geometry(format!(
            "network output {:?} does not match joint latent {:?}",
            out.shape(),
            joint.data.shape()
        )));
    }
    Ok(skip.add(&out.scale_leading(&c_out)?)?)
}
