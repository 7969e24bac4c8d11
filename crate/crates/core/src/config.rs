//! Run configuration: plain `key = value` text with `#` comments, a canonical sorted
//! form and its FNV-1a hash.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use hmpdm_tensor::Fnv1a;

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodecMode {
    Identity,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    /// `1 / c_out^2`.
    InverseCout,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaDistribution {
    /// Uniform over the `n_train`-point Karras grid.
    KarrasGrid,
    LogUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowOffset {
    /// Random start frame per clip and step.
    Random,
    /// Always start at frame 0.
    Zero,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(format!("expected one of {}", [$($text),+].join(", "))),
                }
            }
        }
    };
}

text_enum!(CodecMode { Identity => "identity", Learned => "learned" });
text_enum!(LossWeighting { InverseCout => "inverse_cout2", Uniform => "uniform" });
text_enum!(SigmaDistribution { KarrasGrid => "karras_grid", LogUniform => "log_uniform" });
text_enum!(WindowOffset { Random => "random", Zero => "zero" });

/// Every tunable of a run. Field names double as config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub history: usize,
    pub future: usize,
    pub height: usize,
    pub width: usize,
    pub codec: CodecMode,
    pub codec_factor: usize,
    /// Latent channels of the learned codec; the identity codec always yields `3 * factor^2`.
    pub latent_channels: usize,
    pub codec_steps: usize,
    pub codec_lr: f64,
    pub embed_dim: usize,
    pub mape_heads: usize,
    pub mape_blocks: usize,
    pub mape_temporal: bool,
    pub mlp_ratio: usize,
    pub widths: [usize; 3],
    pub backbone_heads: usize,
    pub time_dim: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub n_train: usize,
    pub n_sample: usize,
    pub trajectories: usize,
    pub p_sc: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub data_seed: u64,
    pub loss_weighting: LossWeighting,
    pub sigma_dist: SigmaDistribution,
    pub canonical_edm_cin: bool,
    pub window_offset: WindowOffset,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            history: 2,
            future: 4,
            height: 32,
            width: 32,
            codec: CodecMode::Identity,
            codec_factor: 4,
            latent_channels: 4,
            codec_steps: 2000,
            codec_lr: 1e-3,
            embed_dim: 64,
            mape_heads: 4,
            mape_blocks: 3,
            mape_temporal: true,
            mlp_ratio: 4,
            widths: [64, 128, 128],
            backbone_heads: 4,
            time_dim: 64,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            n_train: 50,
            n_sample: 35,
            trajectories: 10,
            p_sc: 0.9,
            lr: 1e-4,
            weight_decay: 0.0,
            batch: 4,
            steps: 20_000,
            checkpoint_every: 1000,
            seed: 0,
            data_seed: 7,
            loss_weighting: LossWeighting::InverseCout,
            sigma_dist: SigmaDistribution::KarrasGrid,
            canonical_edm_cin: false,
            window_offset: WindowOffset::Random,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
}

impl RunConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "history" => self.history = parse(key, value)?,
            "future" => self.future = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "codec" => self.codec = parse(key, value)?,
            "codec_factor" => self.codec_factor = parse(key, value)?,
            "latent_channels" => self.latent_channels = parse(key, value)?,
            "codec_steps" => self.codec_steps = parse(key, value)?,
            "codec_lr" => self.codec_lr = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "mape_heads" => self.mape_heads = parse(key, value)?,
            "mape_blocks" => self.mape_blocks = parse(key, value)?,
            "mape_temporal" => self.mape_temporal = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "widths" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_>>()?;
                self.widths = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("widths = {value}: expected three comma-separated widths")))?;
            }
            "backbone_heads" => self.backbone_heads = parse(key, value)?,
            "time_dim" => self.time_dim = parse(key, value)?,
            "sigma_min" => self.sigma_min = parse(key, value)?,
            "sigma_max" => self.sigma_max = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "n_train" => self.n_train = parse(key, value)?,
            "n_sample" => self.n_sample = parse(key, value)?,
            "trajectories" => self.trajectories = parse(key, value)?,
            "p_sc" => self.p_sc = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "loss_weighting" => self.loss_weighting = parse(key, value)?,
            "sigma_dist" => self.sigma_dist = parse(key, value)?,
            "canonical_edm_cin" => self.canonical_edm_cin = parse(key, value)?,
            "window_offset" => self.window_offset = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// All keys with their text values, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = self.widths;
        let mut v: Vec<(&'static str, String)> = vec![
            ("history", self.history.to_string()),
            ("future", self.future.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("codec", self.codec.to_string()),
            ("codec_factor", self.codec_factor.to_string()),
            ("latent_channels", self.latent_channels.to_string()),
            ("codec_steps", self.codec_steps.to_string()),
            ("codec_lr", self.codec_lr.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("mape_heads", self.mape_heads.to_string()),
            ("mape_blocks", self.mape_blocks.to_string()),
            ("mape_temporal", self.mape_temporal.to_string()),
            ("mlp_ratio", self.mlp_ratio.to_string()),
            ("widths", format!("{},{},{}", w[0], w[1], w[2])),
            ("backbone_heads", self.backbone_heads.to_string()),
            ("time_dim", self.time_dim.to_string()),
            ("sigma_min", self.sigma_min.to_string()),
            ("sigma_max", self.sigma_max.to_string()),
            ("rho", self.rho.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_sample", self.n_sample.to_string()),
            ("trajectories", self.trajectories.to_string()),
            ("p_sc", self.p_sc.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch", self.batch.to_string()),
            ("steps", self.steps.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("loss_weighting", self.loss_weighting.to_string()),
            ("sigma_dist", self.sigma_dist.to_string()),
            ("canonical_edm_cin", self.canonical_edm_cin.to_string()),
            ("window_offset", self.window_offset.to_string()),
        ];
        v.sort_by_key(|(k, _)| *k);
        v
    }

    /// Parses config text over the defaults; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Sorted `key = value` lines covering every key.
    pub fn canonical_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hash(&self) -> u64 {
        Fnv1a::hash(self.canonical_text().as_bytes())
    }

    /// Latent channels produced by the configured codec.
    pub fn codec_channels(&self) -> usize {
        match self.codec {
            CodecMode::Identity => 3 * self.codec_factor * self.codec_factor,
            CodecMode::Learned => self.latent_channels,
        }
    }

    pub fn latent_height(&self) -> usize {
        self.height / self.codec_factor
    }

    pub fn latent_width(&self) -> usize {
        self.width / self.codec_factor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.history == 0 || self.future == 0 {
            return bad("history and future must be at least 1".into());
        }
        if self.codec_factor == 0 || self.height % self.codec_factor != 0 || self.width % self.codec_factor != 0 {
            return bad(format!(
                "frame {}x{} is not divisible by codec factor {}",
                self.height, self.width, self.codec_factor
            ));
        }
        if self.codec == CodecMode::Learned && self.codec_factor != 4 {
            return bad("the learned codec downsamples by exactly 4".into());
        }
        if self.latent_height() % 8 != 0 || self.latent_width() % 8 != 0 {
            return bad(format!(
                "latent {}x{} must be divisible by 8 for three pyramid stages",
                self.latent_height(),
                self.latent_width()
            ));
        }
        if self.mape_heads == 0 || self.embed_dim % self.mape_heads != 0 {
            return bad(format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.mape_heads));
        }
        if self.backbone_heads == 0 || self.widths.iter().any(|w| w % self.backbone_heads != 0) {
            return bad(format!("widths {:?} must be divisible by {} heads", self.widths, self.backbone_heads));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad(format!("time_dim {} must be even", self.time_dim));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return bad(format!("noise bounds [{}, {}] are invalid", self.sigma_min, self.sigma_max));
        }
        if !(self.rho > 0.0) || self.n_train == 0 || self.n_sample == 0 || self.trajectories == 0 {
            return bad("rho, n_train, n_sample and trajectories must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_sc) {
            return bad(format!("p_sc {} outside [0, 1]", self.p_sc));
        }
        if self.batch == 0 || self.mape_blocks == 0 || self.mlp_ratio == 0 || self.checkpoint_every == 0 {
            return bad("batch, mape_blocks, mlp_ratio and checkpoint_every must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.codec_lr > 0.0) || self.weight_decay < 0.0 {
            return bad("learning rates must be positive and weight decay non-negative".into());
        }
        Ok(())
    }
}
