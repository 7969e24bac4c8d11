//! Frame metrics (SSIM on luma, PSNR), Gaussian Fréchet distance and best-of-trajectory
//! selection, plus the evaluation report.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::codec::VideoClip;
use crate::error::{io_err, Error, Result};

/// Reported when prediction and target are identical.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_pair(pred: &VideoClip, gt: &VideoClip) -> Result<()> {
    if pred.data.shape() != gt.data.shape() {
        return Err(Error::Geometry(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.data.shape(),
            gt.data.shape()
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` of one frame, capped for MSE = 0.
pub fn psnr_frame(pred: &[f32], gt: &[f32]) -> f64 {
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Frame-averaged PSNR of batch element `b`.
pub fn psnr_clip(pred: &VideoClip, gt: &VideoClip, b: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    let t = pred.frames();
    Ok((0..t).map(|i| psnr_frame(pred.frame(b, i), gt.frame(b, i))).sum::<f64>() / t as f64)
}

/// PSNR averaged over frames, then clips.
pub fn psnr(pred: &VideoClip, gt: &VideoClip) -> Result<f64> {
    check_pair(pred, gt)?;
    let per: Vec<f64> = (0..pred.batch()).map(|b| psnr_clip(pred, gt, b)).collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Luma plane of a CHW RGB frame.
pub fn luma(frame: &[f32], height: usize, width: usize) -> Vec<f64> {
    let plane = height * width;
    (0..plane)
        .map(|i| (0..3).map(|c| LUMA[c] * frame[c * plane + i] as f64).sum())
        .collect()
}

/// Normalized separable Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Mean SSIM over all valid window positions of two single-channel planes.
pub fn ssim_plane(a: &[f64], b: &[f64], height: usize, width: usize) -> Result<f64> {
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::Geometry(format!(
            "{height}x{width} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    // separable filtering of the five moment maps, valid region only
    let filter = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let ow = width - SSIM_WINDOW + 1;
        let oh = height - SSIM_WINDOW + 1;
        let mut rows = vec![0.0; height * ow];
        for y in 0..height {
            for x in 0..ow {
                rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * f(y * width + x + k)).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
            }
        }
        out
    };
    let mu_a = filter(&|i| a[i]);
    let mu_b = filter(&|i| b[i]);
    let aa = filter(&|i| a[i] * a[i]);
    let bb = filter(&|i| b[i] * b[i]);
    let ab = filter(&|i| a[i] * b[i]);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// SSIM of two CHW RGB frames, computed on luma.
pub fn ssim_frame(pred: &[f32], gt: &[f32], height: usize, width: usize) -> Result<f64> {
    ssim_plane(&luma(pred, height, width), &luma(gt, height, width), height, width)
}

/// Frame-averaged SSIM of batch element `b`.
pub fn ssim_clip(pred: &VideoClip, gt: &VideoClip, b: usize) -> Result<f64> {
    check_pair(pred, gt)?;
    let (h, w, t) = (pred.height(), pred.width(), pred.frames());
    let mut sum = 0.0;
    for i in 0..t {
        sum += ssim_frame(pred.frame(b, i), gt.frame(b, i), h, w)?;
    }
    Ok(sum / t as f64)
}

/// SSIM averaged over frames, then clips.
pub fn ssim(pred: &VideoClip, gt: &VideoClip) -> Result<f64> {
    check_pair(pred, gt)?;
    let per: Vec<f64> = (0..pred.batch()).map(|b| ssim_clip(pred, gt, b)).collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Sample mean and unbiased covariance of a feature set.
pub fn moments(feats: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if feats.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 feature vectors, got {}", feats.len())));
    }
    let d = feats[0].len();
    if feats.iter().any(|f| f.len() != d) {
        return Err(Error::Invalid("feature vectors differ in dimension".into()));
    }
    let n = feats.len() as f64;
    let mut mu = DVector::zeros(d);
    for f in feats {
        mu += DVector::from_column_slice(f);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        let c = DVector::from_column_slice(f) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    Ok((mu, cov))
}

/// Square root of a symmetric PSD matrix; negative eigenvalues are clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2)`.
pub fn frechet_from_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::Invalid("Fréchet moments differ in dimension".into()));
    }
    let root_b = sqrt_psd(cov_b);
    let cross = sqrt_psd(&(&root_b * cov_a * &root_b));
    let dist = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    Ok(dist.max(0.0))
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(feats_a)?;
    let (mu_b, cov_b) = moments(feats_b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::Invalid(format!(
            "feature dims differ: {} vs {}",
            mu_a.len(),
            mu_b.len()
        )));
    }
    frechet_from_moments(&mu_a, &cov_a, &mu_b, &cov_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Better {
    Higher,
    Lower,
}

/// Index and value of the best trajectory under `rule`; ties keep the earliest.
pub fn best_of_trajectories(values: &[f64], rule: Better) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        let better = match best {
            None => true,
            Some((_, b)) => match rule {
                Better::Higher => v > b,
                Better::Lower => v < b,
            },
        };
        if better {
            best = Some((i, v));
        }
    }
    best.ok_or_else(|| Error::Invalid("best-of selection needs at least one trajectory".into()))
}

/// Per-clip metric values with the trajectory chosen for each metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipEval {
    pub clip: String,
    pub ssim: f64,
    pub ssim_trajectory: usize,
    pub psnr: f64,
    pub psnr_trajectory: usize,
    pub ssim_all: Vec<f64>,
    pub psnr_all: Vec<f64>,
}

impl ClipEval {
    /// Applies best-of selection to per-trajectory values.
    pub fn select(clip: impl Into<String>, ssim_all: Vec<f64>, psnr_all: Vec<f64>) -> Result<Self> {
        let (si, s) = best_of_trajectories(&ssim_all, Better::Higher)?;
        let (pi, p) = best_of_trajectories(&psnr_all, Better::Higher)?;
        Ok(ClipEval {
            clip: clip.into(),
            ssim: s,
            ssim_trajectory: si,
            psnr: p,
            psnr_trajectory: pi,
            ssim_all,
            psnr_all,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub trajectories: usize,
    pub selection: &'static str,
    pub ssim_channel: &'static str,
    pub clips: Vec<ClipEval>,
    pub ssim: f64,
    pub psnr: f64,
    /// Latent-feature Fréchet distance; best trajectory index and value.
    pub latent_frechet: Option<(usize, f64)>,
}

impl EvalReport {
    pub fn new(trajectories: usize, clips: Vec<ClipEval>, latent_frechet: Option<(usize, f64)>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Invalid("report needs at least one clip".into()));
        }
        let n = clips.len() as f64;
        Ok(EvalReport {
            trajectories,
            selection: "best-per-metric",
            ssim_channel: "luma-bt601",
            ssim: clips.iter().map(|c| c.ssim).sum::<f64>() / n,
            psnr: clips.iter().map(|c| c.psnr).sum::<f64>() / n,
            clips,
            latent_frechet,
        })
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "best-of-{} ({}, SSIM on {})\n{:<24} {:>8} {:>5} {:>9} {:>5}\n",
            self.trajectories, self.selection, self.ssim_channel, "clip", "ssim", "traj", "psnr_db", "traj"
        );
        for c in &self.clips {
            s += &format!(
                "{:<24} {:>8.4} {:>5} {:>9.3} {:>5}\n",
                c.clip, c.ssim, c.ssim_trajectory, c.psnr, c.psnr_trajectory
            );
        }
        s += &format!("{:<24} {:>8.4} {:>5} {:>9.3}\n", "mean", self.ssim, "", self.psnr);
        if let Some((i, f)) = self.latent_frechet {
            s += &format!("latent-Fréchet {f:.6} (trajectory {i})\n");
        }
        s
    }

    /// One JSON record per clip followed by an aggregate record.
    pub fn jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let enc = |v: serde_json::Value| serde_json::to_string(&v).map_err(|e| Error::Invalid(e.to_string()));
        for c in &self.clips {
            let mut v = serde_json::to_value(c).map_err(|e| Error::Invalid(e.to_string()))?;
            v["kind"] = "clip".into();
            out += &enc(v)?;
            out.push('\n');
        }
        out += &enc(serde_json::json!({
            "kind": "aggregate",
            "trajectories": self.trajectories,
            "selection": self.selection,
            "ssim_channel": self.ssim_channel,
            "ssim": self.ssim,
            "psnr": self.psnr,
            "latent_frechet": self.latent_frechet.map(|(_, f)| f),
            "latent_frechet_trajectory": self.latent_frechet.map(|(i, _)| i),
        }))?;
        out.push('\n');
        Ok(out)
    }

    /// Writes `report.txt` and `report.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.table()).map_err(io_err(&txt))?;
        let jl = dir.join("report.jsonl");
        let mut f = std::fs::File::create(&jl).map_err(io_err(&jl))?;
        f.write_all(self.jsonl()?.as_bytes()).map_err(io_err(&jl))
    }
}
