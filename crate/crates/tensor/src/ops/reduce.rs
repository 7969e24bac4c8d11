use super::axis_extents;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<S: Scalar> Tensor<S> {
    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Result<Tensor<S>> {
        let total = self.data().iter().copied().sum::<S>();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor<S>> {
        let n = self.numel().max(1);
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op: "sum_axis",
                axis,
                rank: self.rank(),
            });
        }
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &self.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, &b)| *a += b);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op(
            "sum_axis",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<S>> {
        let len = self.shape().get(axis).copied().unwrap_or(1).max(1);
        self.sum_axis(axis)?.scale(1.0 / len as f64)
    }
}
