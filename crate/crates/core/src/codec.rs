//! Per-frame latent autoencoders: an exact space-to-depth codec and a small learned one.

use hmpdm_tensor::{no_grad, AdamW, AdamWConfig, ParamStore, Tensor};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{depth_to_space, dims5, merge_tokens, space_to_depth, unmerge_tokens, Linear, TokenGrid};

/// Pixel-space clip `(B, T, 3, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub data: Tensor<f32>,
    pub frame_rate: f32,
}

impl VideoClip {
    pub const DEFAULT_FRAME_RATE: f32 = 10.0;

    /// Wraps pixel data, clamping every value into `[0, 1]`.
    pub fn new(data: Tensor<f32>) -> Result<Self> {
        let [_, _, c, _, _] = dims5(&data)?;
        if c != 3 {
            return Err(Error::Geometry(format!("clips need 3 channels, got {:?}", data.shape())));
        }
        let shape = data.shape().to_vec();
        let clamped: Vec<f32> = data.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(VideoClip {
            data: Tensor::new(&shape, clamped)?,
            frame_rate: Self::DEFAULT_FRAME_RATE,
        })
    }

    pub fn batch(&self) -> usize {
        self.data.dim(0)
    }

    pub fn frames(&self) -> usize {
        self.data.dim(1)
    }

    pub fn height(&self) -> usize {
        self.data.dim(3)
    }

    pub fn width(&self) -> usize {
        self.data.dim(4)
    }

    pub fn frame_len(&self) -> usize {
        3 * self.height() * self.width()
    }

    /// Channel-major RGB pixels of one frame.
    pub fn frame(&self, b: usize, t: usize) -> &[f32] {
        let n = self.frame_len();
        let start = (b * self.frames() + t) * n;
        &self.data.data()[start..start + n]
    }

    /// Frames `[start, start + len)` of every clip.
    pub fn narrow_frames(&self, start: usize, len: usize) -> Result<VideoClip> {
        Ok(VideoClip {
            data: self.data.narrow(1, start, len)?,
            frame_rate: self.frame_rate,
        })
    }

    /// Clip `b` as a batch of one.
    pub fn select(&self, b: usize) -> Result<VideoClip> {
        Ok(VideoClip {
            data: self.data.narrow(0, b, 1)?,
            frame_rate: self.frame_rate,
        })
    }

    /// Stacks clips of identical shape along the batch axis.
    pub fn stack(clips: &[VideoClip]) -> Result<VideoClip> {
        let parts: Vec<Tensor<f32>> = clips.iter().map(|c| c.data.clone()).collect();
        Ok(VideoClip {
            data: Tensor::concat(&parts, 0)?,
            frame_rate: clips.first().map_or(Self::DEFAULT_FRAME_RATE, |c| c.frame_rate),
        })
    }
}

/// Latent counterpart `(B, T, C', H', W')` of a [`VideoClip`].
#[derive(Debug, Clone)]
pub struct LatentSequence {
    pub data: Tensor<f32>,
    pub downsample_factor: usize,
    pub source_range: (f32, f32),
}

impl LatentSequence {
    pub fn new(data: Tensor<f32>, downsample_factor: usize) -> Result<Self> {
        dims5(&data)?;
        Ok(LatentSequence {
            data,
            downsample_factor,
            source_range: (0.0, 1.0),
        })
    }

    pub fn frames(&self) -> usize {
        self.data.dim(1)
    }

    pub fn channels(&self) -> usize {
        self.data.dim(2)
    }
}

/// Per-channel latent mean and standard deviation over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LatentStats {
    /// Smallest standard deviation used for scaling; guards constant channels.
    pub const MIN_STD: f32 = 1e-3;

    /// Unit statistics leave latents unchanged.
    pub fn identity(channels: usize) -> Self {
        LatentStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn compute(latents: &[LatentSequence]) -> Result<Self> {
        let first = latents
            .first()
            .ok_or_else(|| Error::Dataset("no latents for statistics".into()))?;
        let c = first.channels();
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        let mut count = 0usize;
        for l in latents {
            let [b, t, lc, h, w] = dims5(&l.data)?;
            if lc != c {
                return Err(Error::Geometry(format!("latent channels {lc} differ from {c}")));
            }
            let plane = h * w;
            for (i, chunk) in l.data.data().chunks(plane).enumerate() {
                let ch = i % c;
                for &v in chunk {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
            count += b * t * plane;
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0).sqrt() as f32).max(Self::MIN_STD))
            .collect();
        Ok(LatentStats {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    fn apply(&self, x: &Tensor<f32>, forward: bool) -> Result<Tensor<f32>> {
        let [_, _, c, h, w] = dims5(x)?;
        if c != self.mean.len() {
            return Err(Error::Geometry(format!(
                "latent has {c} channels, statistics cover {}",
                self.mean.len()
            )));
        }
        let plane = h * w;
        let mut out = x.to_vec();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[i % c], self.std[i % c]);
            for v in chunk {
                *v = if forward { (*v - m) / s } else { *v * s + m };
            }
        }
        Ok(Tensor::new(x.shape(), out)?)
    }

    /// `(z - mean) / std` per channel.
    pub fn normalize(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.apply(x, true)
    }

    /// Inverse of [`LatentStats::normalize`].
    pub fn denormalize(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.apply(x, false)
    }
}

fn check_divisible(clip: &VideoClip, f: usize) -> Result<()> {
    if clip.height() % f != 0 || clip.width() % f != 0 {
        return Err(Error::Geometry(format!(
            "frame size {}x{} is not divisible by the downsample factor {f}",
            clip.height(),
            clip.width()
        )));
    }
    Ok(())
}

/// (N, gh*gw, C) tokens -> (N, C, gh, gw)
fn tokens_to_map(t: &Tensor<f32>, gh: usize, gw: usize) -> Result<Tensor<f32>> {
    let (n, c) = (t.dim(0), t.dim(2));
    Ok(t.reshape(&[n, gh, gw, c])?.permute(&[0, 3, 1, 2])?)
}

/// (N, C, gh, gw) -> (N, gh*gw, C)
fn map_to_tokens(m: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = m.shape();
    let (n, c, gh, gw) = (s[0], s[1], s[2], s[3]);
    Ok(m.permute(&[0, 2, 3, 1])?.reshape(&[n, gh * gw, c])?)
}

/// Space-to-depth rearrangement: a fixed permutation (hence orthogonal) map with
/// `C' = 3 f^2`. Decoding inverts it bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityCodec {
    pub factor: usize,
}

impl IdentityCodec {
    pub fn latent_channels(&self) -> usize {
        3 * self.factor * self.factor
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<LatentSequence> {
        let f = self.factor;
        check_divisible(clip, f)?;
        let [b, t, c, h, w] = dims5(&clip.data)?;
        let tokens = space_to_depth(&clip.data.reshape(&[b * t, c, h, w])?, f)?;
        let map = tokens_to_map(&tokens, h / f, w / f)?;
        LatentSequence::new(map.reshape(&[b, t, c * f * f, h / f, w / f])?, f)
    }

    pub fn decode(&self, latent: &LatentSequence) -> Result<VideoClip> {
        let f = self.factor;
        let [b, t, c, gh, gw] = dims5(&latent.data)?;
        if c != self.latent_channels() {
            return Err(Error::Geometry(format!(
                "latent has {c} channels, identity codec at factor {f} expects {}",
                self.latent_channels()
            )));
        }
        let tokens = map_to_tokens(&latent.data.reshape(&[b * t, c, gh, gw])?)?;
        let img = depth_to_space(&tokens, 3, gh, gw, f)?;
        VideoClip::new(img.reshape(&[b, t, 3, gh * f, gw * f])?)
    }
}

/// Small per-frame autoencoder at factor 4: two non-overlapping 2x2 patch stages
/// (stride-2, kernel-2 convolutions written as space-to-depth + linear) each way.
#[derive(Debug, Clone)]
pub struct LearnedCodec {
    pub params: ParamStore<f32>,
    pub latent_channels: usize,
    enc1: Linear,
    enc2: Linear,
    enc3: Linear,
    dec1: Linear,
    dec2: Linear,
    dec3: Linear,
}

impl LearnedCodec {
    pub const FACTOR: usize = 4;
    const HIDDEN1: usize = 32;
    const HIDDEN2: usize = 96;

    pub fn new<R: Rng + ?Sized>(latent_channels: usize, rng: &mut R) -> Result<Self> {
        let mut p = ParamStore::new();
        let (h1, h2) = (Self::HIDDEN1, Self::HIDDEN2);
        Ok(LearnedCodec {
            enc1: Linear::new(&mut p, "codec.enc1", 12, h1, rng)?,
            enc2: Linear::new(&mut p, "codec.enc2", 4 * h1, h2, rng)?,
            enc3: Linear::new(&mut p, "codec.enc3", h2, latent_channels, rng)?,
            dec1: Linear::new(&mut p, "codec.dec1", latent_channels, h2, rng)?,
            dec2: Linear::new(&mut p, "codec.dec2", h2, 4 * h1, rng)?,
            dec3: Linear::new(&mut p, "codec.dec3", h1, 12, rng)?,
            params: p,
            latent_channels,
        })
    }

    /// (N, 3, H, W) -> (N, C', H/4, W/4), recording gradients when enabled.
    fn encode_frames(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let p = &self.params;
        let (n, h, w) = (x.dim(0), x.dim(2), x.dim(3));
        let grid = TokenGrid::new(1, h / 2, w / 2);
        let t1 = self.enc1.forward(p, &space_to_depth(x, 2)?)?.gelu()?;
        let t1 = t1.reshape(&[n, grid.tokens(), Self::HIDDEN1])?;
        let t2 = self.enc2.forward(p, &merge_tokens(&t1, grid)?)?.gelu()?;
        let z = self.enc3.forward(p, &t2)?;
        tokens_to_map(&z, h / 4, w / 4)
    }

    /// (N, C', g, g) -> unclamped (N, 3, 4g, 4g)
    fn decode_frames(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let p = &self.params;
        let (gh, gw) = (z.dim(2), z.dim(3));
        let t = self.dec1.forward(p, &map_to_tokens(z)?)?.gelu()?;
        let t = self.dec2.forward(p, &t)?.gelu()?;
        let t = unmerge_tokens(&t, TokenGrid::new(1, gh, gw))?;
        let px = self.dec3.forward(p, &t)?.add_scalar(0.5)?;
        Ok(depth_to_space(&px, 3, 2 * gh, 2 * gw, 2)?)
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<LatentSequence> {
        check_divisible(clip, Self::FACTOR)?;
        let [b, t, c, h, w] = dims5(&clip.data)?;
        let z = no_grad(|| self.encode_frames(&clip.data.reshape(&[b * t, c, h, w])?))?;
        let s = z.shape().to_vec();
        LatentSequence::new(z.reshape(&[b, t, s[1], s[2], s[3]])?, Self::FACTOR)
    }

    pub fn decode(&self, latent: &LatentSequence) -> Result<VideoClip> {
        let [b, t, c, gh, gw] = dims5(&latent.data)?;
        if c != self.latent_channels {
            return Err(Error::Geometry(format!(
                "latent has {c} channels, codec expects {}",
                self.latent_channels
            )));
        }
        let px = no_grad(|| self.decode_frames(&latent.data.reshape(&[b * t, c, gh, gw])?))?;
        VideoClip::new(px.reshape(&[b, t, 3, gh * 4, gw * 4])?)
    }

    /// Mean squared reconstruction error (before clamping) on a batch of frames.
    pub fn reconstruction_loss(&self, frames: &Tensor<f32>) -> Result<Tensor<f32>> {
        let recon = self.decode_frames(&self.encode_frames(frames)?)?;
        Ok(recon.sub(frames)?.square()?.mean()?)
    }
}

#[derive(Debug, Clone)]
pub enum Codec {
    Identity(IdentityCodec),
    Learned(LearnedCodec),
}

impl Codec {
    pub fn identity(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("downsample factor must be positive".into()));
        }
        Ok(Codec::Identity(IdentityCodec { factor }))
    }

    pub fn learned<R: Rng + ?Sized>(latent_channels: usize, rng: &mut R) -> Result<Self> {
        Ok(Codec::Learned(LearnedCodec::new(latent_channels, rng)?))
    }

    pub fn factor(&self) -> usize {
        match self {
            Codec::Identity(c) => c.factor,
            Codec::Learned(_) => LearnedCodec::FACTOR,
        }
    }

    pub fn latent_channels(&self) -> usize {
        match self {
            Codec::Identity(c) => c.latent_channels(),
            Codec::Learned(c) => c.latent_channels,
        }
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<LatentSequence> {
        match self {
            Codec::Identity(c) => c.encode(clip),
            Codec::Learned(c) => c.encode(clip),
        }
    }

    pub fn decode(&self, latent: &LatentSequence) -> Result<VideoClip> {
        match self {
            Codec::Identity(c) => c.decode(latent),
            Codec::Learned(c) => c.decode(latent),
        }
    }

    pub fn params(&self) -> Option<&ParamStore<f32>> {
        match self {
            Codec::Identity(_) => None,
            Codec::Learned(c) => Some(&c.params),
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamStore<f32>> {
        match self {
            Codec::Identity(_) => None,
            Codec::Learned(c) => Some(&mut c.params),
        }
    }

    /// Hash of the codec weights (constant for the identity codec).
    pub fn fingerprint(&self) -> u64 {
        match self {
            Codec::Identity(c) => c.factor as u64,
            Codec::Learned(c) => c.params.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecTrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

/// Frames drawn per codec optimization step.
const CODEC_BATCH: usize = 16;

/// Fits the learned codec to the frames of `clips` by per-pixel squared error.
/// The identity codec has nothing to fit and is returned unchanged.
pub fn train_codec<R: Rng + ?Sized>(
    codec: &mut Codec,
    clips: &[VideoClip],
    steps: usize,
    lr: f64,
    rng: &mut R,
) -> Result<CodecTrainReport> {
    if clips.is_empty() {
        return Err(Error::Dataset("codec training needs at least one clip".into()));
    }
    let Codec::Learned(model) = codec else {
        return Ok(CodecTrainReport {
            initial_loss: 0.0,
            final_loss: 0.0,
            steps: 0,
        });
    };
    let mut frames: Vec<&[f32]> = Vec::new();
    for clip in clips {
        check_divisible(clip, LearnedCodec::FACTOR)?;
        for b in 0..clip.batch() {
            for t in 0..clip.frames() {
                frames.push(clip.frame(b, t));
            }
        }
    }
    let (h, w) = (clips[0].height(), clips[0].width());
    let frame_len = 3 * h * w;
    if frames.iter().any(|f| f.len() != frame_len) {
        return Err(Error::Dataset("codec training clips must share a frame size".into()));
    }
    let gather = |idx: &[usize]| -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(idx.len() * frame_len);
        for &i in idx {
            data.extend_from_slice(frames[i]);
        }
        Ok(Tensor::new(&[idx.len(), 3, h, w], data)?)
    };
    let probe: Vec<usize> = (0..frames.len().min(64)).collect();
    let probe = gather(&probe)?;
    let initial_loss = no_grad(|| model.reconstruction_loss(&probe))?.item() as f64;

    let cfg = AdamWConfig {
        lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &model.params)?;
    let batch = CODEC_BATCH.min(frames.len());
    for _ in 0..steps {
        let idx = sample(rng, frames.len(), batch).into_vec();
        let loss = model.reconstruction_loss(&gather(&idx)?)?;
        let grads = loss.backward()?;
        opt.step(&mut model.params, &grads)?;
    }
    let final_loss = no_grad(|| model.reconstruction_loss(&probe))?.item() as f64;
    Ok(CodecTrainReport {
        initial_loss,
        final_loss,
        steps,
    })
}
