//! Layers shared by the pyramid encoder, the denoising backbone and the codec.

use hmpdm_tensor::{init, ParamId, ParamStore, Scalar, Tensor};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = init::xavier_uniform(rng, in_dim, out_dim);
        Self::with_weights(store, name, in_dim, out_dim, w)
    }

    /// All-zero weights and bias; the layer outputs exact zeros until trained.
    pub fn zeros<S: Scalar>(store: &mut ParamStore<S>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_weights(store, name, in_dim, out_dim, vec![S::zero(); in_dim * out_dim])
    }

    fn with_weights<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        w: Vec<S>,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), &[in_dim, out_dim], w)?;
        let bias = store.add(format!("{name}.bias"), &[out_dim], vec![S::zero(); out_dim])?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.matmul(p.get(self.weight))?.add_row(p.get(self.bias))?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(format!("{name}.gain"), &[dim], vec![S::one(); dim])?,
            bias: store.add(format!("{name}.bias"), &[dim], vec![S::zero(); dim])?,
        })
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.layernorm(p.get(self.gain), p.get(self.bias), Self::EPS)?)
    }
}

/// Two-layer GELU perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, rng)?,
        })
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.fc2.forward(p, &self.fc1.forward(p, x)?.gelu()?)
    }
}

/// Multi-head scaled dot-product attention with separate query and memory inputs.
#[derive(Debug, Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    head_dim: usize,
}

impl Attention {
    /// `inner = heads * head_dim`; queries come from `query_dim`, keys/values from `memory_dim`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        query_dim: usize,
        memory_dim: usize,
        heads: usize,
        head_dim: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let inner = heads * head_dim;
        let out = if zero_out {
            Linear::zeros(store, &format!("{name}.out"), inner, query_dim)?
        } else {
            Linear::new(store, &format!("{name}.out"), inner, query_dim, rng)?
        };
        Ok(Attention {
            q: Linear::new(store, &format!("{name}.q"), query_dim, inner, rng)?,
            k: Linear::new(store, &format!("{name}.k"), memory_dim, inner, rng)?,
            v: Linear::new(store, &format!("{name}.v"), memory_dim, inner, rng)?,
            out,
            heads,
            head_dim,
        })
    }

    pub fn out_layer(&self) -> &Linear {
        &self.out
    }

    /// (N, L, inner) -> (N * heads, L, head_dim)
    fn split_heads<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, l) = (x.dim(0), x.dim(1));
        Ok(x
            .reshape(&[n, l, self.heads, self.head_dim])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[n * self.heads, l, self.head_dim])?)
    }

    /// Row-stochastic attention weights, shape (N * heads, Lq, Lk).
    pub fn weights<S: Scalar>(&self, p: &ParamStore<S>, queries: &Tensor<S>, memory: &Tensor<S>) -> Result<Tensor<S>> {
        let q = self.split_heads(&self.q.forward(p, queries)?)?;
        let k = self.split_heads(&self.k.forward(p, memory)?)?;
        let scores = q.matmul(&k.transpose(1, 2)?)?.scale(1.0 / (self.head_dim as f64).sqrt())?;
        Ok(scores.softmax(2)?)
    }

    /// `queries`: (N, Lq, query_dim), `memory`: (N, Lk, memory_dim) -> (N, Lq, query_dim).
    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, queries: &Tensor<S>, memory: &Tensor<S>) -> Result<Tensor<S>> {
        if queries.rank() != 3 || memory.rank() != 3 || queries.dim(0) != memory.dim(0) {
            return Err(Error::Geometry(format!(
                "attention expects (N, L, D) inputs with equal N, got {:?} and {:?}",
                queries.shape(),
                memory.shape()
            )));
        }
        let (n, lq) = (queries.dim(0), queries.dim(1));
        let attn = self.weights(p, queries, memory)?;
        let v = self.split_heads(&self.v.forward(p, memory)?)?;
        let mixed = attn
            .matmul(&v)?
            .reshape(&[n, self.heads, lq, self.head_dim])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[n, lq, self.heads * self.head_dim])?;
        self.out.forward(p, &mixed)
    }
}

/// Frame count and spatial token grid of a token sequence laid out frame-major, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl TokenGrid {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        TokenGrid { frames, height, width }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.cells()
    }

    pub fn halved(&self) -> Result<TokenGrid> {
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::Geometry(format!(
                "token grid {}x{} is not divisible by 2",
                self.height, self.width
            )));
        }
        Ok(TokenGrid::new(self.frames, self.height / 2, self.width / 2))
    }

    pub fn doubled(&self) -> TokenGrid {
        TokenGrid::new(self.frames, self.height * 2, self.width * 2)
    }
}

/// Which tokens a self-attention sublayer lets interact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    /// Tokens of the same frame.
    Spatial,
    /// Tokens at the same grid cell across frames.
    Temporal,
}

/// Regroups (B, T*cells, D) tokens so attention runs inside each group.
pub fn group_tokens<S: Scalar>(x: &Tensor<S>, grid: TokenGrid, mixing: Mixing) -> Result<Tensor<S>> {
    let (b, d) = check_tokens(x, grid)?;
    Ok(match mixing {
        Mixing::Spatial => x.reshape(&[b * grid.frames, grid.cells(), d])?,
        Mixing::Temporal => x
            .reshape(&[b, grid.frames, grid.cells(), d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * grid.cells(), grid.frames, d])?,
    })
}

/// Inverse of [`group_tokens`].
pub fn ungroup_tokens<S: Scalar>(x: &Tensor<S>, batch: usize, grid: TokenGrid, mixing: Mixing) -> Result<Tensor<S>> {
    let d = x.dim(2);
    Ok(match mixing {
        Mixing::Spatial => x.reshape(&[batch, grid.tokens(), d])?,
        Mixing::Temporal => x
            .reshape(&[batch, grid.cells(), grid.frames, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch, grid.tokens(), d])?,
    })
}

fn check_tokens<S: Scalar>(x: &Tensor<S>, grid: TokenGrid) -> Result<(usize, usize)> {
    if x.rank() != 3 || x.dim(1) != grid.tokens() {
        return Err(Error::Geometry(format!(
            "tokens {:?} do not match grid {}x{}x{}",
            x.shape(),
            grid.frames,
            grid.height,
            grid.width
        )));
    }
    Ok((x.dim(0), x.dim(2)))
}

/// Pre-norm residual self-attention over spatial or temporal groups.
#[derive(Debug, Clone)]
pub struct SelfAttentionLayer {
    norm: LayerNorm,
    attn: Attention,
    pub mixing: Mixing,
}

impl SelfAttentionLayer {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        mixing: Mixing,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SelfAttentionLayer {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
            attn: Attention::new(store, &format!("{name}.attn"), dim, dim, heads, dim / heads, false, rng)?,
            mixing,
        })
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>, grid: TokenGrid) -> Result<Tensor<S>> {
        let batch = x.dim(0);
        let groups = group_tokens(&self.norm.forward(p, x)?, grid, self.mixing)?;
        let mixed = self.attn.forward(p, &groups, &groups)?;
        Ok(x.add(&ungroup_tokens(&mixed, batch, grid, self.mixing)?)?)
    }
}

/// Pre-norm residual MLP.
#[derive(Debug, Clone)]
pub struct FeedForwardLayer {
    norm: LayerNorm,
    mlp: Mlp,
}

impl FeedForwardLayer {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FeedForwardLayer {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, hidden, rng)?,
        })
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.add(&self.mlp.forward(p, &self.norm.forward(p, x)?)?)?)
    }
}

/// Transformer block: self-attention sublayer (spatial or temporal) then MLP sublayer.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    attn: SelfAttentionLayer,
    ff: FeedForwardLayer,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        mixing: Mixing,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            attn: SelfAttentionLayer::new(store, &format!("{name}.attn"), dim, heads, mixing, rng)?,
            ff: FeedForwardLayer::new(store, &format!("{name}.ff"), dim, dim * mlp_ratio, rng)?,
        })
    }

    pub fn mixing(&self) -> Mixing {
        self.attn.mixing
    }

    pub fn forward<S: Scalar>(&self, p: &ParamStore<S>, x: &Tensor<S>, grid: TokenGrid) -> Result<Tensor<S>> {
        self.ff.forward(p, &self.attn.forward(p, x, grid)?)
    }
}

/// (N, C, H, W) -> (N, (H/f)*(W/f), C*f*f); patch features ordered (C, dy, dx).
pub fn space_to_depth<S: Scalar>(x: &Tensor<S>, f: usize) -> Result<Tensor<S>> {
    let [n, c, h, w] = dims4(x)?;
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::Geometry(format!("{h}x{w} is not divisible by patch size {f}")));
    }
    let (gh, gw) = (h / f, w / f);
    Ok(x
        .reshape(&[n, c, gh, f, gw, f])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[n, gh * gw, c * f * f])?)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<S: Scalar>(tokens: &Tensor<S>, channels: usize, gh: usize, gw: usize, f: usize) -> Result<Tensor<S>> {
    let n = tokens.dim(0);
    if tokens.rank() != 3 || tokens.dim(1) != gh * gw || tokens.dim(2) != channels * f * f {
        return Err(Error::Geometry(format!(
            "tokens {:?} cannot form {channels} channels on a {gh}x{gw} grid with patch {f}",
            tokens.shape()
        )));
    }
    Ok(tokens
        .reshape(&[n, gh, gw, channels, f, f])?
        .permute(&[0, 3, 1, 4, 2, 5])?
        .reshape(&[n, channels, gh * f, gw * f])?)
}

/// (B, T*h*w, D) on `grid` -> (B, T*(h/2)*(w/2), 4D); neighborhood features ordered (dy, dx, D).
pub fn merge_tokens<S: Scalar>(x: &Tensor<S>, grid: TokenGrid) -> Result<Tensor<S>> {
    let (b, d) = check_tokens(x, grid)?;
    let half = grid.halved()?;
    Ok(x
        .reshape(&[b, grid.frames, half.height, 2, half.width, 2, d])?
        .permute(&[0, 1, 2, 4, 3, 5, 6])?
        .reshape(&[b, half.tokens(), 4 * d])?)
}

/// Inverse of [`merge_tokens`]: (B, T*h*w, 4D) on `grid` -> (B, T*(2h)*(2w), D).
pub fn unmerge_tokens<S: Scalar>(x: &Tensor<S>, grid: TokenGrid) -> Result<Tensor<S>> {
    let (b, d4) = check_tokens(x, grid)?;
    if d4 % 4 != 0 {
        return Err(Error::Geometry(format!("feature width {d4} is not divisible by 4")));
    }
    let d = d4 / 4;
    Ok(x
        .reshape(&[b, grid.frames, grid.height, grid.width, 2, 2, d])?
        .permute(&[0, 1, 2, 4, 3, 5, 6])?
        .reshape(&[b, grid.doubled().tokens(), d])?)
}

/// (B, T, C, H, W) -> (B, T*(H/f)*(W/f), C*f*f) frame-major tokens.
pub fn patchify_frames<S: Scalar>(x: &Tensor<S>, f: usize) -> Result<Tensor<S>> {
    let [b, t, c, h, w] = dims5(x)?;
    let tokens = space_to_depth(&x.reshape(&[b * t, c, h, w])?, f)?;
    Ok(tokens.reshape(&[b, t * (h / f) * (w / f), c * f * f])?)
}

/// Inverse of [`patchify_frames`].
pub fn unpatchify_frames<S: Scalar>(tokens: &Tensor<S>, grid: TokenGrid, channels: usize, f: usize) -> Result<Tensor<S>> {
    let b = tokens.dim(0);
    let per_frame = tokens.reshape(&[b * grid.frames, grid.cells(), tokens.dim(2)])?;
    let img = depth_to_space(&per_frame, channels, grid.height, grid.width, f)?;
    Ok(img.reshape(&[b, grid.frames, channels, grid.height * f, grid.width * f])?)
}

pub(crate) fn dims4<S: Scalar>(x: &Tensor<S>) -> Result<[usize; 4]> {
    x.shape()
        .try_into()
        .map_err(|_| Error::Geometry(format!("expected rank-4 tensor, got {:?}", x.shape())))
}

pub(crate) fn dims5<S: Scalar>(x: &Tensor<S>) -> Result<[usize; 5]> {
    x.shape()
        .try_into()
        .map_err(|_| Error::Geometry(format!("expected rank-5 tensor, got {:?}", x.shape())))
}
