use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hmpdm::checkpoint::TrainingState;
use hmpdm::config::RunConfig;
use hmpdm::pipeline::{
    evaluate, initial_state, latest_checkpoint, load_state, loss_log_line, predict, train_until, training_data,
    EvalWindow, SampleSettings, LOSS_LOG,
};
use hmpdm::synthdata::{build_dataset, count_frames, read_clip_frames, write_clip_frames, DatasetManifest, Split};
use hmpdm::verify::{self, Suite};

/// Written next to a generated dataset so training can compare config hashes.
const DATASET_HASH_FILE: &str = "config_hash";
const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Parser)]
#[command(name = "hmpdm", version, about = "Desk-scale latent video prediction with diffusion")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set steps=500`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Overrides the config seed.
    #[arg(long, env = "HMPDM_SEED", global = true, hide_env_values = true)]
    config_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-shapes dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        train: usize,
        #[arg(long, default_value_t = 2)]
        test: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Dataset seed; defaults to the config `data_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the codec (learned mode) and train the diffusion model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the newest checkpoint under `--out`.
        #[arg(long)]
        resume: bool,
        /// Resume even when the checkpoint config hash differs.
        #[arg(long)]
        force: bool,
        /// Stop after this many completed steps instead of the configured total.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Sample future trajectories for one clip directory.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of `frame_0000.png`..; the last P frames condition the model.
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        traj: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Best-of-trajectories evaluation on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        traj: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads across clips; results are only guaranteed reproducible with 1.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        force: bool,
    },
    /// Run a self-check suite; exits non-zero if any check fails.
    Verify {
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

impl ConfigArgs {
    /// Config from file and overrides, or `None` when neither was supplied.
    fn explicit(&self) -> Result<Option<RunConfig>> {
        if self.config.is_none() && self.overrides.is_empty() && self.config_seed.is_none() {
            return Ok(None);
        }
        self.resolve().map(Some)
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("override `{kv}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.config_seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_hash(cfg: &RunConfig) {
    println!("config hash {:016x}", cfg.hash());
}

fn gen_data(cfg: &RunConfig, out: &Path, train: usize, test: usize, frames: usize, seed: Option<u64>) -> Result<()> {
    let manifest = build_dataset(out, train, test, frames, seed.unwrap_or(cfg.data_seed), (cfg.height, cfg.width))?;
    std::fs::write(out.join(DATASET_HASH_FILE), format!("{:016x}\n", cfg.hash()))?;
    println!("manifest {}", manifest.path().display());
    Ok(())
}

fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<(String, hmpdm::codec::VideoClip)>> {
    let clips = manifest.clips(split);
    if clips.is_empty() {
        bail!("dataset has no {} clips", split.as_str());
    }
    clips
        .into_iter()
        .map(|e| Ok((e.dir.clone(), manifest.load_clip(e)?)))
        .collect()
}

/// Keeps the log lines of steps up to `step` so the log matches a resumed run.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<String> = BufReader::new(File::open(path)?)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|l| {
            l.split('\t')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s <= step)
        })
        .collect();
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn train(cfg: RunConfig, data: &Path, out: &Path, resume: bool, force: bool, stop_at: Option<u64>) -> Result<()> {
    let manifest = DatasetManifest::load(data)?;
    manifest.validate(cfg.history, cfg.future)?;
    if let Ok(text) = std::fs::read_to_string(manifest.root.join(DATASET_HASH_FILE)) {
        let data_hash = text.trim();
        let ours = format!("{:016x}", cfg.hash());
        if data_hash != ours {
            log::warn!("dataset was generated under config hash {data_hash}, training uses {ours}");
        }
    }
    let clips: Vec<_> = load_split(&manifest, Split::Train)?.into_iter().map(|(_, c)| c).collect();
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let log_path = out.join(LOSS_LOG);
    std::fs::create_dir_all(out)?;
    let mut state = match resume.then(|| latest_checkpoint(&ckpt_dir)).transpose()?.flatten() {
        Some(path) => {
            let state = load_state(&path, Some(&cfg), force)?;
            println!("resuming from {} at step {}", path.display(), state.step());
            truncate_log(&log_path, state.step())?;
            state
        }
        None => {
            if resume {
                log::warn!("no checkpoint under {}; starting fresh", ckpt_dir.display());
            }
            File::create(&log_path)?;
            initial_state(&cfg, &clips)?
        }
    };
    let train_data = training_data(&state, &clips)?;
    let mut log = BufWriter::new(OpenOptions::new().append(true).open(&log_path)?);
    let total = stop_at.map_or(state.config.steps as u64, |s| s.min(state.config.steps as u64));
    train_until(&mut state, &train_data, total, Some(&ckpt_dir), |r| {
        writeln!(log, "{}", loss_log_line(r)).map_err(|e| hmpdm::Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        if r.step % 100 == 0 {
            log::info!("step {} loss {:.5}", r.step, r.loss);
        }
        Ok(())
    })?;
    log.flush()?;
    println!("trained {} steps; checkpoints in {}", state.step(), ckpt_dir.display());
    Ok(())
}

/// Loads a checkpoint; an explicit config must match its hash unless `force`.
fn open_checkpoint(path: &Path, explicit: Option<&RunConfig>, force: bool) -> Result<TrainingState> {
    let state = load_state(path, explicit, force)?;
    print_hash(&state.config);
    Ok(state)
}

fn settings(state: &TrainingState, traj: Option<usize>, steps: Option<usize>, seed: Option<u64>) -> Result<SampleSettings> {
    let c = &state.config;
    Ok(SampleSettings::from_run(
        c,
        traj.unwrap_or(c.trajectories),
        steps.unwrap_or(c.n_sample),
        seed.unwrap_or(c.seed),
    )?)
}

fn sample_cmd(state: &TrainingState, clip_dir: &Path, out: &Path, settings: &SampleSettings) -> Result<()> {
    let p = state.config.history;
    let available = count_frames(clip_dir)?;
    if available < p {
        bail!("{} holds {available} frames, the model needs P = {p} history frames", clip_dir.display());
    }
    let history = read_clip_frames(clip_dir, available - p, p)?;
    write_clip_frames(&out.join("conditioning"), &history, 0)?;
    for (t, (clip, _)) in predict(state, &history, 0, settings)?.iter().enumerate() {
        write_clip_frames(&out.join(format!("traj_{t:02}")), clip, 0)?;
    }
    println!("wrote {} trajectories to {}", settings.trajectories, out.display());
    Ok(())
}

fn eval_cmd(state: &TrainingState, data: &Path, out: &Path, split: Split, settings: &SampleSettings, jobs: usize) -> Result<()> {
    let c = &state.config;
    let manifest = DatasetManifest::load(data)?;
    manifest.validate(c.history, c.future)?;
    let windows: Vec<EvalWindow> = load_split(&manifest, split)?
        .into_iter()
        .map(|(name, clip)| {
            Ok(EvalWindow {
                name,
                history: clip.narrow_frames(0, c.history)?,
                target: clip.narrow_frames(c.history, c.future)?,
            })
        })
        .collect::<Result<_>>()?;
    let report = evaluate(state, &windows, settings, jobs)?;
    report.write(out)?;
    print!("{}", report.table());
    println!("report written to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData {
            out,
            train,
            test,
            frames,
            seed,
        } => {
            let cfg = cli.config.resolve()?;
            print_hash(&cfg);
            gen_data(&cfg, &out, train, test, frames, seed)?;
        }
        Command::Train {
            data,
            out,
            resume,
            force,
            stop_at,
        } => {
            let cfg = cli.config.resolve()?;
            print_hash(&cfg);
            train(cfg, &data, &out, resume, force, stop_at)?;
        }
        Command::Sample {
            ckpt,
            clip,
            out,
            traj,
            steps,
            seed,
            force,
        } => {
            let state = open_checkpoint(&ckpt, cli.config.explicit()?.as_ref(), force)?;
            sample_cmd(&state, &clip, &out, &settings(&state, traj, steps, seed)?)?;
        }
        Command::Eval {
            ckpt,
            data,
            out,
            split,
            traj,
            steps,
            seed,
            jobs,
            force,
        } => {
            let state = open_checkpoint(&ckpt, cli.config.explicit()?.as_ref(), force)?;
            eval_cmd(&state, &data, &out, split, &settings(&state, traj, steps, seed)?, jobs)?;
        }
        Command::Verify { suite, seed } => {
            print_hash(&cli.config.resolve()?);
            let report = verify::run(suite, seed)?;
            print!("{report}");
            let failed = report.failures().len();
            println!("{} checks, {failed} failed", report.checks.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
