//! Central finite-difference gradient checks in 64-bit.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Default perturbation for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Relative error `|analytic - numeric| / max(|analytic|, |numeric|)` (L2 norms) per input.
    pub rel_errors: Vec<f64>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares backward gradients of a scalar function against central differences.
///
/// `f` receives fresh leaf tensors with the same shapes as `inputs`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.to_vec()))
        .collect::<Result<_>>()?;
    let loss = f(&leaves)?;
    let grads = loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|t| grads.wrt(t)).collect();

    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for i in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut args: Vec<Tensor<f64>> = inputs.to_vec();
                let mut data = input.to_vec();
                data[i] += delta;
                args[k] = Tensor::new(input.shape(), data)?;
                no_grad(|| f(&args)).map(|t| t.item())
            };
            numeric[i] = (eval(step)? - eval(-step)?) / (2.0 * step);
        }
        let diff = l2(analytic[k].iter().zip(&numeric).map(|(a, n)| a - n));
        let scale = l2(analytic[k].iter().copied()).max(l2(numeric.iter().copied()));
        rel_errors.push(if scale < 1e-12 { diff } else { diff / scale });
    }
    Ok(GradcheckReport { rel_errors })
}
