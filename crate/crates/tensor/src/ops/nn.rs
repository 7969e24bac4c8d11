use super::axis_extents;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<S: Scalar> Tensor<S> {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: self.rank(),
            });
        }
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let x = self.data();
        let mut out = vec![S::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = S::neg_infinity();
                for j in 0..len {
                    max = max.max(x[base + j * inner]);
                }
                let mut total = S::zero();
                for j in 0..len {
                    let e = (x[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..len {
                    out[base + j * inner] = out[base + j * inner] / total;
                }
            }
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, y| {
                let mut gx = vec![S::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = S::zero();
                        for j in 0..len {
                            dot += g[base + j * inner] * y[base + j * inner];
                        }
                        for j in 0..len {
                            let idx = base + j * inner;
                            gx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Layer normalization over the last axis followed by an affine map.
    pub fn layernorm(&self, gain: &Tensor<S>, bias: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let width = self.shape().last().copied().unwrap_or(0);
        if gain.shape() != [width] || bias.shape() != [width] {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(crate::error::invalid("layernorm", "eps must be positive"));
        }
        let eps = S::from_f64(eps);
        let n = S::from_f64(width as f64);
        let rows = self.numel() / width.max(1);
        let mut xhat = vec![S::zero(); self.numel()];
        let mut inv_std = vec![S::zero(); rows];
        let mut out = vec![S::zero(); self.numel()];
        for (r, row) in self.data().chunks(width).enumerate() {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                xhat[r * width + j] = xh;
                out[r * width + j] = xh * gain.data()[j] + bias.data()[j];
            }
        }
        let (g_t, b_t) = (gain.clone(), bias.clone());
        Tensor::from_op(
            "layernorm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g, _| {
                let gamma = g_t.data();
                let mut gx = vec![S::zero(); g.len()];
                let mut ggain = vec![S::zero(); width];
                let mut gbias = vec![S::zero(); width];
                for r in 0..rows {
                    let gr = &g[r * width..(r + 1) * width];
                    let xr = &xhat[r * width..(r + 1) * width];
                    let mut mean_d = S::zero();
                    let mut mean_dx = S::zero();
                    for j in 0..width {
                        let d = gr[j] * gamma[j];
                        mean_d += d;
                        mean_dx += d * xr[j];
                        ggain[j] += gr[j] * xr[j];
                        gbias[j] += gr[j];
                    }
                    mean_d = mean_d / n;
                    mean_dx = mean_dx / n;
                    for j in 0..width {
                        let d = gr[j] * gamma[j];
                        gx[r * width + j] = inv_std[r] * (d - mean_d - xr[j] * mean_dx);
                    }
                }
                vec![
                    Some(gx),
                    g_t.requires_grad().then_some(ggain),
                    b_t.requires_grad().then_some(gbias),
                ]
            }),
        )
    }
}
