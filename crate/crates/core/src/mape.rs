//! Pyramid encoder over history latents: patch embedding, alternating temporal/spatial
//! transformer blocks and 2x2 patch merging, yielding three token memories.

use hmpdm_tensor::{init, ParamId, ParamStore, Scalar, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{dims5, merge_tokens, patchify_frames, Linear, Mixing, TokenGrid, TransformerBlock};

pub const STAGES: usize = 3;

/// Per-stage transformer settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub blocks_per_stage: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_ratio: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            blocks_per_stage: 3,
            heads: 4,
            head_dim: 16,
            mlp_ratio: 4,
        }
    }
}

impl StageConfig {
    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Encoder geometry and behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapeConfig {
    pub stage: StageConfig,
    /// History frame count `P`.
    pub frames: usize,
    /// Latent channels `C'`.
    pub channels: usize,
    /// Latent height and width `H'`, `W'`.
    pub height: usize,
    pub width: usize,
    /// When false, temporal blocks and the temporal positional embedding are omitted.
    pub temporal: bool,
}

impl MapeConfig {
    /// Token grids of the three stages.
    pub fn grids(&self) -> Result<[TokenGrid; STAGES]> {
        stage_grids(self.frames, self.height, self.width)
    }
}

/// Halves `H' x W'` once per stage; errors name the failing stage.
pub fn stage_grids(frames: usize, height: usize, width: usize) -> Result<[TokenGrid; STAGES]> {
    let mut grids = [TokenGrid::new(frames, height, width); STAGES];
    let mut g = TokenGrid::new(frames, height, width);
    for (s, slot) in grids.iter_mut().enumerate() {
        g = g.halved().map_err(|_| {
            Error::Geometry(format!(
                "stage {}: grid {}x{} is not divisible by 2 (latent {height}x{width} must be divisible by 8)",
                s + 1,
                g.height,
                g.width
            ))
        })?;
        *slot = g;
    }
    Ok(grids)
}

/// Multi-scale memories `M1..M3`, each `(B, N_s, D)` with `N_s = P * h_s * w_s`.
#[derive(Debug, Clone)]
pub struct TokenPyramid<S: Scalar> {
    pub m1: Tensor<S>,
    pub m2: Tensor<S>,
    pub m3: Tensor<S>,
    pub grids: [TokenGrid; STAGES],
    pub embed_dim: usize,
}

impl<S: Scalar> TokenPyramid<S> {
    pub fn memory(&self, stage: usize) -> &Tensor<S> {
        match stage {
            0 => &self.m1,
            1 => &self.m2,
            _ => &self.m3,
        }
    }

    pub fn token_counts(&self) -> [usize; STAGES] {
        [self.m1.dim(1), self.m2.dim(1), self.m3.dim(1)]
    }
}

/// `blocks_per_stage` x [temporal block, spatial block].
#[derive(Debug, Clone)]
pub struct Stage {
    blocks: Vec<TransformerBlock>,
}

impl Stage {
    fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cfg: &MapeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let st = cfg.stage;
        let d = st.embed_dim();
        let mut blocks = Vec::new();
        for i in 0..st.blocks_per_stage {
            if cfg.temporal {
                blocks.push(TransformerBlock::new(
                    store,
                    &format!("{name}.{i}.temporal"),
                    d,
                    st.heads,
                    st.mlp_ratio,
                    Mixing::Temporal,
                    rng,
                )?);
            }
            blocks.push(TransformerBlock::new(
                store,
                &format!("{name}.{i}.spatial"),
                d,
                st.heads,
                st.mlp_ratio,
                Mixing::Spatial,
                rng,
            )?);
        }
        Ok(Stage { blocks })
    }

    pub fn blocks(&self) -> &[TransformerBlock] {
        &self.blocks
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>, grid: TokenGrid) -> Result<Tensor<S>> {
        let mut x = x.clone();
        for b in &self.blocks {
            x = b.forward(p, &x, grid)?;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct Mape {
    pub config: MapeConfig,
    embed: Linear,
    pos_spatial: ParamId,
    pos_temporal: Option<ParamId>,
    merges: Vec<Linear>,
    stages: Vec<Stage>,
}

impl Mape {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, config: MapeConfig, rng: &mut R) -> Result<Self> {
        let st = config.stage;
        if st.heads == 0 || st.head_dim == 0 || st.blocks_per_stage == 0 || config.frames == 0 {
            return Err(Error::Config(format!("invalid pyramid encoder settings {config:?}")));
        }
        let grids = config.grids()?;
        let d = st.embed_dim();
        let embed = Linear::new(store, "mape.patch_embed", config.channels * 4, d, rng)?;
        let cells = grids[0].cells();
        let pos_spatial = store.add("mape.pos_spatial", &[1, cells, d], to_s(init::normal(rng, cells * d, 0.02)))?;
        let pos_temporal = if config.temporal {
            Some(store.add(
                "mape.pos_temporal",
                &[1, config.frames, d],
                to_s(init::normal(rng, config.frames * d, 0.02)),
            )?)
        } else {
            None
        };
        let mut merges = Vec::new();
        let mut stages = Vec::new();
        for s in 0..STAGES {
            if s > 0 {
                merges.push(Linear::new(store, &format!("mape.merge{s}"), 4 * d, d, rng)?);
            }
            stages.push(Stage::new(store, &format!("mape.stage{}", s + 1), &config, rng)?);
        }
        Ok(Mape {
            config,
            embed,
            pos_spatial,
            pos_temporal,
            merges,
            stages,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.stage.embed_dim()
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Non-overlapping 2x2 patches of each history frame projected to `D`, plus positional
    /// embeddings. `(B, P, C', H', W') -> (B, P*(H'/2)*(W'/2), D)`.
    pub fn patch_embed<S: Scalar>(&self, p: &ParamStore<S>, h: &Tensor<S>) -> Result<Tensor<S>> {
        let [b, frames, c, hh, ww] = dims5(h)?;
        let cfg = &self.config;
        if (frames, c, hh, ww) != (cfg.frames, cfg.channels, cfg.height, cfg.width) {
            return Err(Error::Geometry(format!(
                "history latent {:?} does not match encoder geometry P={} C'={} {}x{}",
                h.shape(),
                cfg.frames,
                cfg.channels,
                cfg.height,
                cfg.width
            )));
        }
        let tokens = self.embed.forward(p, &patchify_frames(h, 2)?)?;
        let d = self.embed_dim();
        let cells = (hh / 2) * (ww / 2);
        let tokens = tokens.reshape(&[b * frames, cells, d])?.add(&p.get(self.pos_spatial).expand(0, b * frames)?)?;
        let mut tokens = tokens.reshape(&[b, frames, cells, d])?;
        if let Some(pt) = self.pos_temporal {
            let pos = p.get(pt).reshape(&[1, frames, 1, d])?.expand(0, b)?.expand(2, cells)?;
            tokens = tokens.add(&pos)?;
        }
        Ok(tokens.reshape(&[b, frames * cells, d])?)
    }

    /// 2x2 neighborhood concatenation then projection back to `D` (stage index is 1 or 2).
    pub fn patch_merge<S: Scalar>(&self, p: &ParamStore<S>, stage: usize, x: &Tensor<S>, grid: TokenGrid) -> Result<Tensor<S>> {
        let merge = self
            .merges
            .get(stage.wrapping_sub(1))
            .ok_or_else(|| Error::Invalid(format!("no patch merge before stage {}", stage + 1)))?;
        let merged = merge_tokens(x, grid)
            .map_err(|e| Error::Geometry(format!("stage {}: {e}", stage + 1)))?;
        merge.forward(p, &merged)
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, h: &Tensor<S>) -> Result<TokenPyramid<S>> {
        let grids = self.config.grids()?;
        let mut x = self.patch_embed(p, h)?;
        let mut out = Vec::with_capacity(STAGES);
        for s in 0..STAGES {
            if s > 0 {
                x = self.patch_merge(p, s, &x, grids[s - 1])?;
            }
            x = self.stages[s].forward(p, &x, grids[s])?;
            out.push(x.clone());
        }
        let m3 = out.pop().expect("three stages");
        let m2 = out.pop().expect("three stages");
        let m1 = out.pop().expect("three stages");
        Ok(TokenPyramid {
            m1,
            m2,
            m3,
            grids,
            embed_dim: self.embed_dim(),
        })
    }
}

fn to_s<S: Scalar>(v: Vec<f64>) -> Vec<S> {
    v.into_iter().map(S::from_f64).collect()
}
