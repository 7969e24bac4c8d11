//! Three-level denoising transformer over the joint latent. Every level runs spatial,
//! temporal and cross attention to the pyramid memory of matching grid, then an MLP.

use hmpdm_tensor::{init, ParamId, ParamStore, Scalar, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mape::{TokenPyramid, STAGES};
use crate::nn::{
    dims5, merge_tokens, patchify_frames, unmerge_tokens, unpatchify_frames, Attention, FeedForwardLayer, LayerNorm,
    Linear, Mixing, SelfAttentionLayer, TokenGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    pub widths: [usize; STAGES],
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Latent channels `C'`; the stem sees `2C'` (joint plus self-conditioning).
    pub channels: usize,
    /// Joint frame count `P + F`.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Pyramid memory width `D`.
    pub memory_dim: usize,
    /// Frame-wise time embedding width.
    pub time_dim: usize,
}

/// Pre-norm residual cross-attention from backbone tokens to a pyramid memory.
#[derive(Debug, Clone)]
pub struct CrossAttentionLayer {
    norm: LayerNorm,
    attn: Attention,
}

impl CrossAttentionLayer {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        memory_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} is not divisible by {heads} heads")));
        }
        Ok(CrossAttentionLayer {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
            attn: Attention::new(store, &format!("{name}.attn"), dim, memory_dim, heads, dim / heads, true, rng)?,
        })
    }

    pub fn attention(&self) -> &Attention {
        &self.attn
    }

    /// `z + Attn(LN(z), M)`; `z`: (B, L, width), `memory`: (B, N, D).
    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, z: &Tensor<S>, memory: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(z.add(&self.attn.forward(p, &self.norm.forward(p, z)?, memory)?)?)
    }
}

/// One backbone level: time-embedding add, spatial, temporal and cross attention, MLP.
#[derive(Debug, Clone)]
pub struct LevelBlock {
    time_proj: Linear,
    spatial: SelfAttentionLayer,
    temporal: SelfAttentionLayer,
    cross: CrossAttentionLayer,
    ff: FeedForwardLayer,
    /// Pyramid stage (0-based) this level attends to.
    pub stage: usize,
    pub grid: TokenGrid,
}

impl LevelBlock {
    fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        cfg: &BackboneConfig,
        stage: usize,
        grid: TokenGrid,
        rng: &mut R,
    ) -> Result<Self> {
        let w = cfg.widths[stage];
        Ok(LevelBlock {
            time_proj: Linear::new(store, &format!("{name}.time"), cfg.time_dim, w, rng)?,
            spatial: SelfAttentionLayer::new(store, &format!("{name}.spatial"), w, cfg.heads, Mixing::Spatial, rng)?,
            temporal: SelfAttentionLayer::new(store, &format!("{name}.temporal"), w, cfg.heads, Mixing::Temporal, rng)?,
            cross: CrossAttentionLayer::new(store, &format!("{name}.cross"), w, cfg.memory_dim, cfg.heads, rng)?,
            ff: FeedForwardLayer::new(store, &format!("{name}.ff"), w, w * cfg.mlp_ratio, rng)?,
            stage,
            grid,
        })
    }

    pub fn cross(&self) -> &CrossAttentionLayer {
        &self.cross
    }

    fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        z: &Tensor<S>,
        emb: &Tensor<S>,
        pyramid: &TokenPyramid<S>,
    ) -> Result<Tensor<S>> {
        let (b, t, cells) = (z.dim(0), self.grid.frames, self.grid.cells());
        let w = z.dim(2);
        let e = self
            .time_proj
            .forward(p, emb)?
            .reshape(&[b, t, 1, w])?
            .expand(2, cells)?
            .reshape(&[b, t * cells, w])?;
        let z = z.add(&e)?;
        let z = self.spatial.forward(p, &z, self.grid)?;
        let z = self.temporal.forward(p, &z, self.grid)?;
        let z = self.cross.forward(p, &z, pyramid.memory(self.stage))?;
        self.ff.forward(p, &z)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    stem: Linear,
    /// Learned frame-index embedding added after the stem; without it future
    /// slots with identical inputs are indistinguishable to temporal attention.
    pos_frames: ParamId,
    down: Vec<LevelBlock>,
    downsample: Vec<Linear>,
    mid: LevelBlock,
    up: Vec<LevelBlock>,
    fuse: Vec<Linear>,
    upsample: Vec<Linear>,
    head_norm: LayerNorm,
    head: Linear,
    /// Linear path from the input patches to the output. The token widths are
    /// narrower than a patch, so without it the network cannot pass the noisy
    /// input through at full rank, which caps mid-sigma denoising.
    bypass: Linear,
}

impl Backbone {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, config: BackboneConfig, rng: &mut R) -> Result<Self> {
        let grids = crate::mape::stage_grids(config.frames, config.height, config.width)?;
        let w = config.widths;
        let stem = Linear::new(store, "backbone.stem", 2 * config.channels * 4, w[0], rng)?;
        let pos = init::normal(rng, config.frames * w[0], 0.02);
        let pos_frames = store.add("backbone.pos_frames", &[1, config.frames, 1, w[0]], pos)?;
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut up = Vec::new();
        let mut fuse = Vec::new();
        let mut upsample = Vec::new();
        for s in 0..STAGES {
            down.push(LevelBlock::new(store, &format!("backbone.down{}", s + 1), &config, s, grids[s], rng)?);
            if s + 1 < STAGES {
                downsample.push(Linear::new(store, &format!("backbone.downsample{}", s + 1), 4 * w[s], w[s + 1], rng)?);
            }
        }
        let last = STAGES - 1;
        let mid = LevelBlock::new(store, "backbone.mid", &config, last, grids[last], rng)?;
        for s in (0..STAGES).rev() {
            fuse.push(Linear::new(store, &format!("backbone.fuse{}", s + 1), 2 * w[s], w[s], rng)?);
            up.push(LevelBlock::new(store, &format!("backbone.up{}", s + 1), &config, s, grids[s], rng)?);
            if s > 0 {
                upsample.push(Linear::new(store, &format!("backbone.upsample{}", s + 1), w[s], 4 * w[s - 1], rng)?);
            }
        }
        let head_norm = LayerNorm::new(store, "backbone.head_norm", w[0])?;
        let head = Linear::zeros(store, "backbone.head", w[0], config.channels * 4)?;
        let bypass = Linear::zeros(store, "backbone.bypass", 2 * config.channels * 4, config.channels * 4)?;
        Ok(Backbone {
            config,
            stem,
            pos_frames,
            down,
            downsample,
            mid,
            up,
            fuse,
            upsample,
            head_norm,
            head,
            bypass,
        })
    }

    /// Down, mid and up levels in execution order.
    pub fn levels(&self) -> impl Iterator<Item = &LevelBlock> {
        self.down.iter().chain(std::iter::once(&self.mid)).chain(self.up.iter())
    }

    /// Fails unless every level grid matches the pyramid stage it attends to.
    pub fn check_alignment<S: Scalar>(&self, pyramid: &TokenPyramid<S>) -> Result<()> {
        for level in self.levels() {
            let g = pyramid.grids[level.stage];
            let mem = pyramid.memory(level.stage);
            if (g.height, g.width) != (level.grid.height, level.grid.width)
                || mem.dim(2) != self.config.memory_dim
                || mem.dim(1) != g.tokens()
            {
                return Err(Error::Geometry(format!(
                    "backbone level grid {}x{} does not align with pyramid stage {} grid {}x{} ({:?})",
                    level.grid.height,
                    level.grid.width,
                    level.stage + 1,
                    g.height,
                    g.width,
                    mem.shape()
                )));
            }
        }
        Ok(())
    }

    /// `j_scaled`, `sc`: (B, P+F, C', H', W'); `emb`: (B, P+F, time_dim).
    pub fn forward<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        j_scaled: &Tensor<S>,
        emb: &Tensor<S>,
        pyramid: &TokenPyramid<S>,
        sc: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let cfg = &self.config;
        let [b, t, c, hh, ww] = dims5(j_scaled)?;
        if (t, c, hh, ww) != (cfg.frames, cfg.channels, cfg.height, cfg.width) || sc.shape() != j_scaled.shape() {
            return Err(Error::Geometry(format!(
                "backbone input {:?} / self-conditioning {:?} do not match T={} C'={} {}x{}",
                j_scaled.shape(),
                sc.shape(),
                cfg.frames,
                cfg.channels,
                cfg.height,
                cfg.width
            )));
        }
        if emb.shape() != [b, t, cfg.time_dim] {
            return Err(Error::Geometry(format!("time embedding {:?} expected ({b}, {t}, {})", emb.shape(), cfg.time_dim)));
        }
        self.check_alignment(pyramid)?;

        let x = Tensor::concat(&[j_scaled.clone(), sc.clone()], 2)?;
        let patches = patchify_frames(&x, 2)?;
        let z = self.stem.forward(p, &patches)?;
        let cells = self.down[0].grid.cells();
        let pos = p.get(self.pos_frames).expand(0, b)?.expand(2, cells)?;
        let mut z = z.reshape(&[b, t, cells, cfg.widths[0]])?.add(&pos)?.reshape(&[b, t * cells, cfg.widths[0]])?;
        let mut skips = Vec::with_capacity(STAGES);
        for (s, level) in self.down.iter().enumerate() {
            z = level.forward(p, &z, emb, pyramid)?;
            skips.push(z.clone());
            if let Some(ds) = self.downsample.get(s) {
                z = ds.forward(p, &merge_tokens(&z, level.grid)?)?;
            }
        }
        z = self.mid.forward(p, &z, emb, pyramid)?;
        for (i, level) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            z = self.fuse[i].forward(p, &Tensor::concat(&[z, skip], 2)?)?;
            z = level.forward(p, &z, emb, pyramid)?;
            if let Some(us) = self.upsample.get(i) {
                z = unmerge_tokens(&us.forward(p, &z)?, level.grid)?;
            }
        }
        let out = self.head.forward(p, &self.head_norm.forward(p, &z)?)?.add(&self.bypass.forward(p, &patches)?)?;
        unpatchify_frames(&out, self.down[0].grid, cfg.channels, 2)
    }
}
