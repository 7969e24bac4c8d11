//! The full denoiser: pyramid encoder, dual time embeddings and backbone behind the
//! preconditioned wrapper.

use std::sync::atomic::{AtomicUsize, Ordering};

use hmpdm_tensor::{ParamStore, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mape::{Mape, MapeConfig, StageConfig, TokenPyramid};
use crate::talc::{denoise, DualTimeEmbedding, JointLatent};

/// Architecture settings derived from a [`RunConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub mape: MapeConfig,
    pub backbone: BackboneConfig,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub canonical_cin: bool,
}

impl ModelConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        let (channels, height, width) = (cfg.codec_channels(), cfg.latent_height(), cfg.latent_width());
        let head_dim = cfg.embed_dim / cfg.mape_heads;
        ModelConfig {
            mape: MapeConfig {
                stage: StageConfig {
                    blocks_per_stage: cfg.mape_blocks,
                    heads: cfg.mape_heads,
                    head_dim,
                    mlp_ratio: cfg.mlp_ratio,
                },
                frames: cfg.history,
                channels,
                height,
                width,
                temporal: cfg.mape_temporal,
            },
            backbone: BackboneConfig {
                widths: cfg.widths,
                heads: cfg.backbone_heads,
                mlp_ratio: cfg.mlp_ratio,
                channels,
                frames: cfg.history + cfg.future,
                height,
                width,
                memory_dim: cfg.embed_dim,
                time_dim: cfg.time_dim,
            },
            sigma_min: cfg.sigma_min,
            sigma_max: cfg.sigma_max,
            canonical_cin: cfg.canonical_edm_cin,
        }
    }

    pub fn history(&self) -> usize {
        self.mape.frames
    }

    pub fn future(&self) -> usize {
        self.backbone.frames - self.mape.frames
    }
}

/// Anything that maps a joint latent plus self-conditioning input to a clean estimate
/// of the same shape.
pub trait Denoiser<S: Scalar> {
    fn denoise(&self, joint: &JointLatent<S>, sc: &Tensor<S>) -> Result<Tensor<S>>;
}

#[derive(Debug)]
pub struct Hmpdm<S: Scalar> {
    pub params: ParamStore<S>,
    pub config: ModelConfig,
    pub mape: Mape,
    pub backbone: Backbone,
    pub embed: DualTimeEmbedding,
    forwards: AtomicUsize,
}

impl<S: Scalar> Clone for Hmpdm<S> {
    fn clone(&self) -> Self {
        Hmpdm {
            params: self.params.clone(),
            config: self.config,
            mape: self.mape.clone(),
            backbone: self.backbone.clone(),
            embed: self.embed.clone(),
            forwards: AtomicUsize::new(self.forward_count()),
        }
    }
}

impl<S: Scalar> Hmpdm<S> {
    /// Builds all parameters deterministically from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.mape.stage.embed_dim() != config.backbone.memory_dim {
            return Err(Error::Config(format!(
                "pyramid width {} differs from cross-attention memory width {}",
                config.mape.stage.embed_dim(),
                config.backbone.memory_dim
            )));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = DualTimeEmbedding::new(&mut params, config.backbone.time_dim, config.sigma_min, seed ^ 0x7e3d)?;
        let mape = Mape::new(&mut params, config.mape, &mut rng)?;
        let backbone = Backbone::new(&mut params, config.backbone, &mut rng)?;
        Ok(Hmpdm {
            params,
            config,
            mape,
            backbone,
            embed,
            forwards: AtomicUsize::new(0),
        })
    }

    /// Number of network evaluations since construction.
    pub fn forward_count(&self) -> usize {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn pyramid(&self, h: &Tensor<S>) -> Result<TokenPyramid<S>> {
        self.mape.forward(&self.params, h)
    }

    /// `D(j; sigma, h)` where `h` is read from the clean history slots of `j`.
    pub fn denoise_with(&self, joint: &JointLatent<S>, sc: &Tensor<S>, pyramid: Option<&TokenPyramid<S>>) -> Result<Tensor<S>> {
        let p = joint.mask.history();
        if p != self.config.history() || joint.mask.future() != self.config.future() {
            return Err(Error::Geometry(format!(
                "joint latent has {p}+{} frames, model expects {}+{}",
                joint.mask.future(),
                self.config.history(),
                self.config.future()
            )));
        }
        self.forwards.fetch_add(1, Ordering::Relaxed);
        denoise(joint, self.config.canonical_cin, |scaled| {
            let owned;
            let pyramid = match pyramid {
                Some(pyr) => pyr,
                None => {
                    owned = self.pyramid(&joint.data.narrow(1, 0, p)?)?;
                    &owned
                }
            };
            let emb = self.embed.frame_embeddings(&self.params, &joint.sigma_values(), &joint.mask)?;
            self.backbone.forward(&self.params, scaled, &emb, pyramid, sc)
        })
    }
}

impl<S: Scalar> Denoiser<S> for Hmpdm<S> {
    fn denoise(&self, joint: &JointLatent<S>, sc: &Tensor<S>) -> Result<Tensor<S>> {
        self.denoise_with(joint, sc, None)
    }
}

/// Closed-form posterior mean `z / (sigma^2 + 1)` for unit-Gaussian data.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianOracle;

impl<S: Scalar> Denoiser<S> for GaussianOracle {
    fn denoise(&self, joint: &JointLatent<S>, _sc: &Tensor<S>) -> Result<Tensor<S>> {
        let c: Vec<f64> = joint.sigmas.iter().map(|s| 1.0 / (s.sigma() * s.sigma() + 1.0)).collect();
        Ok(joint.data.scale_leading(&c)?)
    }
}
