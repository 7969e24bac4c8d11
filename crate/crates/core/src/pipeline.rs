//! End-to-end glue: codec fitting, latent normalization, the training loop with
//! periodic checkpoints, trajectory sampling and best-of evaluation.

use std::path::{Path, PathBuf};

use hmpdm_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{checkpoint_name, Checkpoint, TrainingState};
use crate::codec::{train_codec, Codec, LatentSequence, LatentStats, VideoClip};
use crate::config::{CodecMode, RunConfig};
use crate::engine::{sample, step_rng, NoiseSchedule, ScMode, StepReport, TrainData, TrainSettings, Trainer};
use crate::error::{io_err, Error, Result};
use crate::metrics::{best_of_trajectories, frechet_distance, psnr_clip, ssim_clip, Better, ClipEval, EvalReport};
use crate::model::{Hmpdm, ModelConfig};

/// Loss log written next to the checkpoints.
pub const LOSS_LOG: &str = "train_log.tsv";

const CODEC_SEED: u64 = 0xc0de_c0de;
const SAMPLE_SEED: u64 = 0x5a3b_1e00;

/// Builds the configured codec and fits it when learned.
pub fn fit_codec(config: &RunConfig, clips: &[VideoClip]) -> Result<Codec> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ CODEC_SEED);
    let mut codec = match config.codec {
        CodecMode::Identity => Codec::identity(config.codec_factor)?,
        CodecMode::Learned => Codec::learned(config.latent_channels, &mut rng)?,
    };
    let report = train_codec(&mut codec, clips, config.codec_steps, config.codec_lr, &mut rng)?;
    if report.steps > 0 {
        log::info!(
            "codec: {} steps, reconstruction loss {:.5} -> {:.5}",
            report.steps,
            report.initial_loss,
            report.final_loss
        );
    }
    Ok(codec)
}

/// Encodes and normalizes clips into (T, C', H', W') latents.
pub fn encode_clips(codec: &Codec, stats: &LatentStats, clips: &[VideoClip]) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::new();
    for clip in clips {
        let z = stats.normalize(&codec.encode(clip)?.data)?;
        let s = z.shape().to_vec();
        for b in 0..s[0] {
            out.push(z.narrow(0, b, 1)?.reshape(&s[1..])?);
        }
    }
    Ok(out)
}

/// Normalized latent history `(B, P, C', H', W')` for conditioning clips.
pub fn encode_history(codec: &Codec, stats: &LatentStats, history: &VideoClip) -> Result<Tensor<f32>> {
    stats.normalize(&codec.encode(history)?.data)
}

/// Decodes normalized latents back to frames.
pub fn decode_latents(codec: &Codec, stats: &LatentStats, z: &Tensor<f32>) -> Result<VideoClip> {
    codec.decode(&LatentSequence::new(stats.denormalize(z)?, codec.factor())?)
}

/// Fresh training state: codec fitted on `clips`, statistics over their latents.
pub fn initial_state(config: &RunConfig, clips: &[VideoClip]) -> Result<TrainingState> {
    config.validate()?;
    let codec = fit_codec(config, clips)?;
    let latents: Vec<LatentSequence> = clips.iter().map(|c| codec.encode(c)).collect::<Result<_>>()?;
    let stats = LatentStats::compute(&latents)?;
    let model = Hmpdm::<f32>::new(ModelConfig::from_run(config), config.seed)?;
    let trainer = Trainer::new(model, TrainSettings::from_run(config))?;
    Ok(TrainingState {
        config: config.clone(),
        trainer,
        codec,
        stats,
    })
}

/// Training windows drawn from the normalized latents of `clips`.
pub fn training_data(state: &TrainingState, clips: &[VideoClip]) -> Result<TrainData<f32>> {
    let latents = encode_clips(&state.codec, &state.stats, clips)?;
    let c = &state.config;
    TrainData::new(latents, c.history, c.future, c.window_offset)
}

/// Tab-separated loss log line: step, loss, per-element σ, self-conditioning flag.
pub fn loss_log_line(r: &StepReport) -> String {
    let sigmas: Vec<String> = r.sigmas.iter().map(|s| format!("{s:.6}")).collect();
    format!("{}\t{:.6}\t{}\t{}", r.step, r.loss, sigmas.join(","), u8::from(r.self_conditioned))
}

/// Runs optimizer steps until `until` completed steps, saving a checkpoint into
/// `ckpt_dir` every `checkpoint_every` steps and at the end.
pub fn train_until(
    state: &mut TrainingState,
    data: &TrainData<f32>,
    until: u64,
    ckpt_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepReport) -> Result<()>,
) -> Result<()> {
    let (seed, batch, every) = (state.config.seed, state.config.batch, state.config.checkpoint_every as u64);
    while state.step() < until {
        let step = state.step();
        let mut rng = step_rng(seed, step);
        let (h, x) = data.draw(batch, &mut rng)?;
        let report = state.trainer.training_step(&h, &x, &mut rng)?;
        on_step(&report)?;
        let done = state.step();
        if let Some(dir) = ckpt_dir {
            if (every > 0 && done % every == 0) || done == until {
                state.to_checkpoint()?.save(&dir.join(checkpoint_name(done)))?;
            }
        }
    }
    Ok(())
}

/// Checkpoint with the highest step in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(step) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".hmpd"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| step > *b) {
            best = Some((step, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Loads a checkpoint, requiring its config hash to match `expected` unless `force`.
pub fn load_state(path: &Path, expected: Option<&RunConfig>, force: bool) -> Result<TrainingState> {
    TrainingState::from_checkpoint(&Checkpoint::load(path)?, expected, force)
}

/// Deterministic generator for trajectory `traj` of clip `clip`.
pub fn trajectory_rng(seed: u64, clip: u64, traj: u64) -> ChaCha8Rng {
    step_rng(seed ^ SAMPLE_SEED ^ clip.wrapping_mul(0x9e37_79b9_7f4a_7c15), traj)
}

/// Sampler settings for prediction.
#[derive(Debug, Clone)]
pub struct SampleSettings {
    pub trajectories: usize,
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub sc_mode: ScMode,
}

impl SampleSettings {
    pub fn from_run(config: &RunConfig, trajectories: usize, steps: usize, seed: u64) -> Result<Self> {
        if trajectories == 0 {
            return Err(Error::Invalid("need at least one trajectory".into()));
        }
        Ok(SampleSettings {
            trajectories,
            schedule: NoiseSchedule::karras(steps, config.sigma_min, config.sigma_max, config.rho)?,
            seed,
            sc_mode: ScMode::Previous,
        })
    }
}

/// Samples every trajectory for one conditioning clip (batch 1); returns decoded
/// futures and their normalized latents.
pub fn predict(
    state: &TrainingState,
    history: &VideoClip,
    clip_index: u64,
    settings: &SampleSettings,
) -> Result<Vec<(VideoClip, Tensor<f32>)>> {
    let c = &state.config;
    if history.frames() < c.history {
        return Err(Error::Invalid(format!(
            "conditioning clip has {} frames, the model needs P = {}",
            history.frames(),
            c.history
        )));
    }
    let history = history.narrow_frames(history.frames() - c.history, c.history)?;
    let h = encode_history(&state.codec, &state.stats, &history)?;
    (0..settings.trajectories)
        .map(|t| {
            let mut rng = trajectory_rng(settings.seed, clip_index, t as u64);
            let z = sample(&state.trainer.model, &h, c.future, &settings.schedule, &mut rng, settings.sc_mode)?;
            Ok((decode_latents(&state.codec, &state.stats, &z)?, z))
        })
        .collect()
}

/// One evaluation window: conditioning frames and ground-truth future.
#[derive(Debug, Clone)]
pub struct EvalWindow {
    pub name: String,
    pub history: VideoClip,
    pub target: VideoClip,
}

/// Per-trajectory scores of one clip.
struct ClipScores {
    ssim: Vec<f64>,
    psnr: Vec<f64>,
    feats: Vec<Vec<Vec<f64>>>,
    target_feats: Vec<Vec<f64>>,
}

/// Spatially pooled latent channels, one vector per frame.
fn latent_features(z: &Tensor<f32>) -> Result<Vec<Vec<f64>>> {
    let s = z.shape();
    let (b, t, c) = (s[0], s[1], s[2]);
    let plane = s[3] * s[4];
    let data = z.data();
    let mut out = Vec::with_capacity(b * t);
    for f in 0..b * t {
        out.push(
            (0..c)
                .map(|ch| {
                    let start = (f * c + ch) * plane;
                    data[start..start + plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64
                })
                .collect(),
        );
    }
    Ok(out)
}

fn score_clip(state: &TrainingState, w: &EvalWindow, index: u64, settings: &SampleSettings) -> Result<ClipScores> {
    let preds = predict(state, &w.history, index, settings)?;
    let mut scores = ClipScores {
        ssim: Vec::new(),
        psnr: Vec::new(),
        feats: Vec::new(),
        target_feats: latent_features(&encode_history(&state.codec, &state.stats, &w.target)?)?,
    };
    for (clip, z) in &preds {
        scores.ssim.push(ssim_clip(clip, &w.target, 0)?);
        scores.psnr.push(psnr_clip(clip, &w.target, 0)?);
        scores.feats.push(latent_features(z)?);
    }
    Ok(scores)
}

/// Samples, scores and applies best-of selection per clip and per metric.
/// `jobs > 1` spreads clips over threads.
pub fn evaluate(state: &TrainingState, windows: &[EvalWindow], settings: &SampleSettings, jobs: usize) -> Result<EvalReport> {
    if windows.is_empty() {
        return Err(Error::Dataset("no evaluation clips".into()));
    }
    let c = &state.config;
    for w in windows {
        if w.target.frames() != c.future {
            return Err(Error::Invalid(format!(
                "clip {}: target has {} frames, F = {}",
                w.name,
                w.target.frames(),
                c.future
            )));
        }
    }
    let jobs = jobs.clamp(1, windows.len());
    let scores: Vec<ClipScores> = if jobs == 1 {
        windows
            .iter()
            .enumerate()
            .map(|(i, w)| score_clip(state, w, i as u64, settings))
            .collect::<Result<_>>()?
    } else {
        let chunk = windows.len().div_ceil(jobs);
        let parts: Vec<Result<Vec<ClipScores>>> = std::thread::scope(|s| {
            let handles: Vec<_> = windows
                .chunks(chunk)
                .enumerate()
                .map(|(k, part)| {
                    s.spawn(move || {
                        part.iter()
                            .enumerate()
                            .map(|(i, w)| score_clip(state, w, (k * chunk + i) as u64, settings))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("evaluation worker panicked".into()))))
                .collect()
        });
        parts.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect()
    };
    let target: Vec<Vec<f64>> = scores.iter().flat_map(|s| s.target_feats.clone()).collect();
    let mut frechet = Vec::new();
    if target.len() >= 2 {
        for t in 0..settings.trajectories {
            let pred: Vec<Vec<f64>> = scores.iter().flat_map(|s| s.feats[t].clone()).collect();
            frechet.push(frechet_distance(&pred, &target)?);
        }
    }
    let latent_frechet = if frechet.is_empty() {
        None
    } else {
        Some(best_of_trajectories(&frechet, Better::Lower)?)
    };
    let clips = windows
        .iter()
        .zip(scores)
        .map(|(w, s)| ClipEval::select(w.name.clone(), s.ssim, s.psnr))
        .collect::<Result<_>>()?;
    EvalReport::new(settings.trajectories, clips, latent_frechet)
}
