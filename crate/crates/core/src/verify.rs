//! Self-check suites run by `hmpdm verify`: finite-difference gradients, analytic
//! oracles and structural invariants. Each check reports a measured value and a verdict.

use std::fmt;

use hmpdm_tensor::gradcheck::{gradcheck, DEFAULT_STEP};
use hmpdm_tensor::{ParamStore, Tensor};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backbone::CrossAttentionLayer;
use crate::codec::VideoClip;
use crate::config::RunConfig;
use crate::engine::{sample, NoiseSchedule, ScMode};
use crate::error::{Error, Result};
use crate::mape::{stage_grids, Mape, MapeConfig, StageConfig};
use crate::metrics::{frechet_from_moments, psnr, ssim, PSNR_CAP_DB};
use crate::model::{GaussianOracle, Hmpdm, ModelConfig};
use crate::nn::{FeedForwardLayer, Mixing, SelfAttentionLayer, TokenGrid};
use crate::talc::{denoise, make_joint, precondition_coeffs, DualTimeEmbedding, FrameMask, NoiseLevel, SIGMA_MAX, SIGMA_MIN};

/// Relative error bound for 64-bit gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Random shapes per gradient-checked op.
pub const SHAPES_PER_OP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Oracle,
    Invariants,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "oracle" => Ok(Suite::Oracle),
            "invariants" => Ok(Suite::Invariants),
            other => Err(Error::Invalid(format!(
                "unknown suite `{other}` (expected gradcheck, oracle or invariants)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub detail: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn push(&mut self, name: impl Into<String>, value: f64, detail: impl Into<String>, passed: bool) {
        self.checks.push(Check {
            name: name.into(),
            value,
            detail: detail.into(),
            passed,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>12}  {:<4}  detail", "check", "value", "ok")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<28} {:>12.3e}  {:<4}  {}",
                c.name,
                c.value,
                if c.passed { "pass" } else { "FAIL" },
                c.detail
            )?;
        }
        Ok(())
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(seed),
        Suite::Oracle => oracle_suite(seed),
        Suite::Invariants => invariants_suite(seed),
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Ok(Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())?)
}

/// Fixed non-uniform weighting so every output element matters.
fn weigh(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    let w: Vec<f64> = (0..t.numel()).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    Ok(t.mul(&Tensor::new(t.shape(), w)?)?.sum()?)
}

fn rand_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

type OpFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;
type Case = (Vec<Tensor<f64>>, OpFn);

fn unary(rng: &mut ChaCha8Rng, op: fn(&Tensor<f64>) -> hmpdm_tensor::Result<Tensor<f64>>) -> Result<Case> {
    let rank = rng.random_range(1..=3);
    let shape = rand_shape(rng, rank);
    let x = rand_tensor(rng, &shape)?;
    Ok((vec![x], Box::new(move |a| weigh(&op(&a[0])?))))
}

fn binary(rng: &mut ChaCha8Rng, op: fn(&Tensor<f64>, &Tensor<f64>) -> hmpdm_tensor::Result<Tensor<f64>>) -> Result<Case> {
    let rank = rng.random_range(1..=3);
    let shape = rand_shape(rng, rank);
    let (a, b) = (rand_tensor(rng, &shape)?, rand_tensor(rng, &shape)?);
    Ok((vec![a, b], Box::new(move |x| weigh(&op(&x[0], &x[1])?))))
}

/// Builds one gradient-check case of `op` with random shapes.
fn op_case(op: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    Ok(match op {
        "add" => binary(rng, |a, b| a.add(b))?,
        "sub" => binary(rng, |a, b| a.sub(b))?,
        "mul" => binary(rng, |a, b| a.mul(b))?,
        "square" => unary(rng, |a| a.square())?,
        "scale" => unary(rng, |a| a.scale(-1.7))?,
        "add_scalar" => unary(rng, |a| a.add_scalar(0.3))?,
        "gelu" => unary(rng, |a| a.gelu())?,
        "silu" => unary(rng, |a| a.silu())?,
        "sum" => unary(rng, |a| a.sum())?,
        "mean" => unary(rng, |a| a.mean())?,
        "scale_leading" => {
            let shape = rand_shape(rng, 3);
            let coeffs: Vec<f64> = (0..shape[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            (vec![rand_tensor(rng, &shape)?], Box::new(move |a| weigh(&a[0].scale_leading(&coeffs)?)))
        }
        "add_row" => {
            let (m, n) = (rng.random_range(1..=5), rng.random_range(1..=5));
            (
                vec![rand_tensor(rng, &[m, n])?, rand_tensor(rng, &[n])?],
                Box::new(|a| weigh(&a[0].add_row(&a[1])?)),
            )
        }
        "matmul" => {
            let (m, k, n) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=5));
            let batched = rng.random_bool(0.5);
            let sa = if batched { vec![2, m, k] } else { vec![m, k] };
            (
                vec![rand_tensor(rng, &sa)?, rand_tensor(rng, &[k, n])?],
                Box::new(|a| weigh(&a[0].matmul(&a[1])?)),
            )
        }
        "batched_matmul" => {
            let (b, m, k, n) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
            (
                vec![rand_tensor(rng, &[b, m, k])?, rand_tensor(rng, &[b, k, n])?],
                Box::new(|a| weigh(&a[0].matmul(&a[1])?)),
            )
        }
        "softmax" => {
            let shape = rand_shape(rng, 3);
            let axis = rng.random_range(0..3);
            (vec![rand_tensor(rng, &shape)?], Box::new(move |a| weigh(&a[0].softmax(axis)?)))
        }
        "layernorm" => {
            let (m, d) = (rng.random_range(1..=4), rng.random_range(2..=6));
            (
                vec![rand_tensor(rng, &[m, d])?, rand_tensor(rng, &[d])?, rand_tensor(rng, &[d])?],
                Box::new(|a| weigh(&a[0].layernorm(&a[1], &a[2], 1e-5)?)),
            )
        }
        "sum_axis" | "mean_axis" => {
            let shape = rand_shape(rng, 3);
            let axis = rng.random_range(0..3);
            let mean = op == "mean_axis";
            (
                vec![rand_tensor(rng, &shape)?],
                Box::new(move |a| {
                    let r = if mean { a[0].mean_axis(axis)? } else { a[0].sum_axis(axis)? };
                    weigh(&r)
                }),
            )
        }
        "reshape" => {
            let shape = rand_shape(rng, 3);
            let flat = [shape[0] * shape[1], shape[2]];
            (vec![rand_tensor(rng, &shape)?], Box::new(move |a| weigh(&a[0].reshape(&flat)?)))
        }
        "permute" => {
            let shape = rand_shape(rng, 3);
            let mut perm = vec![0, 1, 2];
            perm.shuffle(rng);
            (vec![rand_tensor(rng, &shape)?], Box::new(move |a| weigh(&a[0].permute(&perm)?)))
        }
        "transpose" => {
            let shape = rand_shape(rng, 3);
            let (i, j) = (rng.random_range(0..3), rng.random_range(0..3));
            (vec![rand_tensor(rng, &shape)?], Box::new(move |a| weigh(&a[0].transpose(i, j)?)))
        }
        "concat" => {
            let axis = rng.random_range(0..3);
            let mut sa = rand_shape(rng, 3);
            let mut sb = sa.clone();
            sb[axis] = rng.random_range(1..=3);
            sa[axis] = rng.random_range(1..=3);
            (
                vec![rand_tensor(rng, &sa)?, rand_tensor(rng, &sb)?],
                Box::new(move |a| weigh(&Tensor::concat(&[a[0].clone(), a[1].clone()], axis)?)),
            )
        }
        "narrow" => {
            let mut shape = rand_shape(rng, 3);
            let axis = rng.random_range(0..3);
            shape[axis] += 2;
            let start = rng.random_range(0..2);
            let len = shape[axis] - start - 1;
            (vec![rand_tensor(rng, &shape)?], Box::new(move |a| weigh(&a[0].narrow(axis, start, len)?)))
        }
        "split" => {
            let mut shape = rand_shape(rng, 3);
            let axis = rng.random_range(0..3);
            shape[axis] += 1;
            let first = rng.random_range(1..shape[axis]);
            let sizes = [first, shape[axis] - first];
            (
                vec![rand_tensor(rng, &shape)?],
                Box::new(move |a| {
                    let parts = a[0].split(axis, &sizes)?;
                    Ok(weigh(&parts[0])?.add(&weigh(&parts[1].scale(2.0)?)?)?)
                }),
            )
        }
        "gather" | "gather_frames" => {
            let shape = rand_shape(rng, 3);
            let axis = if op == "gather" { rng.random_range(0..3) } else { 1 };
            let n = rng.random_range(1..=5);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..shape[axis])).collect();
            let frames = op == "gather_frames";
            (
                vec![rand_tensor(rng, &shape)?],
                Box::new(move |a| {
                    let r = if frames { a[0].gather_frames(&idx)? } else { a[0].gather(axis, &idx)? };
                    weigh(&r)
                }),
            )
        }
        "expand" => {
            let mut shape = rand_shape(rng, 3);
            let axis = rng.random_range(0..3);
            shape[axis] = 1;
            let n = rng.random_range(1..=4);
            (vec![rand_tensor(rng, &shape)?], Box::new(move |a| weigh(&a[0].expand(axis, n)?)))
        }
        other => return Err(Error::Invalid(format!("no gradient case for op {other}"))),
    })
}

/// Every differentiable tensor op.
pub const OPS: &[&str] = &[
    "add", "sub", "mul", "square", "scale", "add_scalar", "scale_leading", "add_row", "gelu", "silu", "matmul",
    "batched_matmul", "softmax", "layernorm", "sum", "mean", "sum_axis", "mean_axis", "reshape", "permute",
    "transpose", "concat", "narrow", "split", "gather", "gather_frames", "expand",
];

/// Composite blocks checked with respect to their inputs (parameters randomized).
pub const BLOCKS: &[&str] = &[
    "spatial_attention",
    "temporal_attention",
    "cross_attention",
    "patch_embed",
    "patch_merge",
    "layernorm_mlp",
];

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        store.set(id, (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect())?;
    }
    Ok(())
}

fn small_mape(rng: &mut ChaCha8Rng) -> Result<(ParamStore<f64>, Mape)> {
    let mut store = ParamStore::new();
    let config = MapeConfig {
        stage: StageConfig {
            blocks_per_stage: 1,
            heads: rng.random_range(1..=2),
            head_dim: rng.random_range(2..=3),
            mlp_ratio: 2,
        },
        frames: rng.random_range(1..=3),
        channels: rng.random_range(1..=3),
        height: 8,
        width: 8 * rng.random_range(1..=2),
        temporal: true,
    };
    let mape = Mape::new(&mut store, config, rng)?;
    randomize(&mut store, rng)?;
    Ok((store, mape))
}

/// Gradient-check case of a composite block; returns inputs and a scalar loss.
fn block_case(block: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let heads = rng.random_range(1..=2);
    let dim = heads * rng.random_range(2..=3);
    let grid = TokenGrid::new(rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=3));
    let batch = rng.random_range(1..=2);
    let mut store = ParamStore::new();
    Ok(match block {
        "spatial_attention" | "temporal_attention" => {
            let mixing = if block == "spatial_attention" { Mixing::Spatial } else { Mixing::Temporal };
            let layer = SelfAttentionLayer::new(&mut store, "attn", dim, heads, mixing, rng)?;
            randomize(&mut store, rng)?;
            let x = rand_tensor(rng, &[batch, grid.tokens(), dim])?;
            (vec![x], Box::new(move |a| weigh(&layer.forward(&store, &a[0], grid)?)))
        }
        "cross_attention" => {
            let memory_dim = rng.random_range(2..=5);
            let layer = CrossAttentionLayer::new(&mut store, "cross", dim, memory_dim, heads, rng)?;
            randomize(&mut store, rng)?;
            let z = rand_tensor(rng, &[batch, grid.tokens(), dim])?;
            let len = rng.random_range(1..=4);
            let m = rand_tensor(rng, &[batch, len, memory_dim])?;
            (vec![z, m], Box::new(move |a| weigh(&layer.forward(&store, &a[0], &a[1])?)))
        }
        "layernorm_mlp" => {
            let layer = FeedForwardLayer::new(&mut store, "ff", dim, 2 * dim, rng)?;
            randomize(&mut store, rng)?;
            let x = rand_tensor(rng, &[batch, grid.tokens(), dim])?;
            (vec![x], Box::new(move |a| weigh(&layer.forward(&store, &a[0])?)))
        }
        "patch_embed" => {
            let (store, mape) = small_mape(rng)?;
            let c = mape.config;
            let h = rand_tensor(rng, &[batch, c.frames, c.channels, c.height, c.width])?;
            (vec![h], Box::new(move |a| weigh(&mape.patch_embed(&store, &a[0])?)))
        }
        "patch_merge" => {
            let (store, mape) = small_mape(rng)?;
            let grid = mape.config.grids()?[0];
            let x = rand_tensor(rng, &[batch, grid.tokens(), mape.embed_dim()])?;
            (vec![x], Box::new(move |a| weigh(&mape.patch_merge(&store, 1, &a[0], grid)?)))
        }
        other => return Err(Error::Invalid(format!("no gradient case for block {other}"))),
    })
}

/// Central-difference checks of every op and block on [`SHAPES_PER_OP`] random shapes.
pub fn gradcheck_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::default();
    let names = OPS.iter().map(|o| (*o, false)).chain(BLOCKS.iter().map(|b| (*b, true)));
    for (name, is_block) in names {
        let mut worst = 0f64;
        let mut shapes = Vec::new();
        for _ in 0..SHAPES_PER_OP {
            let (inputs, f) = if is_block { block_case(name, &mut rng)? } else { op_case(name, &mut rng)? };
            shapes.push(format!("{:?}", inputs[0].shape()));
            let rep = gradcheck(|a| f(a).map_err(|e| hmpdm_tensor::TensorError::Invalid {
                op: "gradcheck",
                msg: e.to_string(),
            }), &inputs, DEFAULT_STEP)?;
            worst = worst.max(rep.max_rel_error());
        }
        report.push(
            name,
            worst,
            format!("max rel err over {}", shapes.join(" ")),
            worst < GRAD_TOLERANCE,
        );
    }
    Ok(report)
}

/// Moments of samples drawn with the closed-form unit-Gaussian denoiser.
pub fn gaussian_sampler_moments(samples: usize, steps: usize, seed: u64) -> Result<(f64, f64)> {
    let schedule = NoiseSchedule::karras(steps, SIGMA_MIN, SIGMA_MAX, 7.0)?;
    let batch = samples.div_ceil(4).max(1);
    let h = Tensor::<f64>::zeros(&[batch, 1, 1, 2, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = sample(&GaussianOracle, &h, 1, &schedule, &mut rng, ScMode::Previous)?;
    let v = &out.data()[..samples.min(out.numel())];
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

pub fn oracle_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    let (mean, var) = gaussian_sampler_moments(10_000, 50, seed)?;
    report.push("gaussian_sampler_mean", mean, "|mean| < 0.05 (n=50, 1e4 samples)", mean.abs() < 0.05);
    report.push("gaussian_sampler_var", var, "variance in [0.95, 1.05]", (0.95..=1.05).contains(&var));

    let p = precondition_coeffs(0.0, false);
    report.push(
        "precond_sigma_zero",
        p.c_out,
        format!("(c_skip, c_in, c_out) = ({}, {}, {})", p.c_skip, p.c_in, p.c_out),
        (p.c_skip, p.c_in, p.c_out) == (1.0, 1.0, 0.0),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let level = NoiseLevel::clean(SIGMA_MIN, SIGMA_MAX)?;
    let z = rand_tensor(&mut rng, &[2, 3, 2, 2, 2])?;
    let joint = make_joint(&z.narrow(1, 0, 1)?, &z.narrow(1, 1, 2)?, &[level, level])?;
    let out = denoise(&joint, false, |x| Ok(x.scale(3.0)?))?;
    report.push(
        "denoise_sigma_zero",
        0.0,
        "output equals input bitwise",
        out.data() == joint.data.data(),
    );

    let one = DMatrix::from_element(1, 1, 1.0);
    let (mu0, mu1) = (DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0]));
    let d = frechet_from_moments(&mu0, &one, &mu0, &DMatrix::from_element(1, 1, 4.0))?;
    report.push("frechet_n01_vs_n04", d, "expected 1", (d - 1.0).abs() < 1e-8);
    let d = frechet_from_moments(&mu0, &one, &mu1, &one)?;
    report.push("frechet_mean_shift", d, "expected 1", (d - 1.0).abs() < 1e-8);
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let mu = DVector::from_vec(vec![0.3, -1.0]);
    let d = frechet_from_moments(&mu, &cov, &mu, &cov)?;
    report.push("frechet_identical", d, "expected 0", d.abs() < 1e-8);

    let gt = VideoClip::new(Tensor::new(&[1, 1, 3, 16, 16], vec![0.25; 768])?)?;
    let shifted = VideoClip::new(Tensor::new(&[1, 1, 3, 16, 16], vec![0.35; 768])?)?;
    let s = ssim(&gt, &gt)?;
    report.push("ssim_identical", s, "expected 1", s == 1.0);
    let ps = psnr(&gt, &gt)?;
    report.push("psnr_identical", ps, "capped value", ps == PSNR_CAP_DB);
    let ps = psnr(&shifted, &gt)?;
    report.push("psnr_offset_0.1", ps, "expected 20 dB", (ps - 20.0).abs() < 1e-4);
    Ok(report)
}

pub fn invariants_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mask_ok = true;
    let mut cases = Vec::new();
    for _ in 0..5 {
        let (p, f) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let m = FrameMask::new(p, f)?;
        let want: Vec<u8> = std::iter::repeat_n(1, p).chain(std::iter::repeat_n(0, f)).collect();
        mask_ok &= m.values() == want.as_slice();
        cases.push(format!("({p},{f})"));
    }
    report.push("mask_layout", 0.0, format!("[1]*P + [0]*F for {}", cases.join(" ")), mask_ok);

    let mut worst = 0f64;
    for i in 0..1000 {
        let sigma = 10f64.powf(-3.0 + 6.0 * i as f64 / 999.0);
        let c = precondition_coeffs(sigma, false);
        worst = worst.max((c.c_in * c.c_in + c.c_out * c.c_out - 1.0).abs());
    }
    report.push("cin2_plus_cout2", worst, "max |c_in^2 + c_out^2 - 1| on 1e3 log-spaced sigma", worst <= 1e-6);

    let mut store = ParamStore::<f64>::new();
    let emb = DualTimeEmbedding::new(&mut store, 16, SIGMA_MIN, seed)?;
    let mask = FrameMask::new(3, 2)?;
    let rows: Vec<Vec<f64>> = [SIGMA_MIN, 1.0, SIGMA_MAX]
        .iter()
        .map(|&s| {
            let e = emb.time_embedding(&store, &NoiseLevel::new(s, SIGMA_MIN, SIGMA_MAX)?, &mask)?;
            Ok(e.narrow(0, 0, 3)?.to_vec())
        })
        .collect::<Result<_>>()?;
    report.push(
        "history_rows_invariant",
        0.0,
        "history embeddings bitwise equal across sigma in {min, 1, max}",
        rows[0] == rows[1] && rows[1] == rows[2],
    );

    let mut counts_ok = true;
    let mut seen = Vec::new();
    for _ in 0..5 {
        let p = rng.random_range(1..=6);
        let (h, w) = (8 * rng.random_range(1..=4), 8 * rng.random_range(1..=4));
        let grids = stage_grids(p, h, w)?;
        for s in 0..3 {
            let n = grids[s].tokens();
            counts_ok &= n == p * (h >> (s + 1)) * (w >> (s + 1));
            if s > 0 {
                counts_ok &= grids[s - 1].tokens() == 4 * n;
            }
        }
        seen.push(format!("P{p}:{h}x{w}"));
    }
    report.push("token_counts", 0.0, format!("N_s = P*(H'/2^s)*(W'/2^s), N_s+1 = N_s/4 for {}", seen.join(" ")), counts_ok);

    let mut cfg = RunConfig::default();
    for (k, v) in [("embed_dim", "16"), ("widths", "16,16,16"), ("time_dim", "16"), ("mape_blocks", "1")] {
        cfg.set(k, v)?;
    }
    let aligned = Hmpdm::<f32>::new(ModelConfig::from_run(&cfg), seed).and_then(|m| {
        let h = Tensor::zeros(&[1, cfg.history, cfg.codec_channels(), cfg.latent_height(), cfg.latent_width()]);
        m.backbone.check_alignment(&m.pyramid(&h)?)
    });
    report.push("cross_attention_alignment", 0.0, "pyramid grids match backbone levels", aligned.is_ok());

    let s = NoiseSchedule::karras(35, SIGMA_MIN, SIGMA_MAX, 7.0)?;
    let ok = s.sigmas()[0] == SIGMA_MAX
        && s.sigmas()[34] == SIGMA_MIN
        && s.sigmas().windows(2).all(|w| w[0] > w[1]);
    report.push("karras_schedule", s.len() as f64, "endpoints pinned, strictly decreasing", ok);
    Ok(report)
}
