use super::axis_extents;
use crate::error::{invalid, Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `data` (laid out as `shape`) into the axis order given by `perm`.
fn permute_data<S: Scalar>(data: &[S], shape: &[usize], perm: &[usize]) -> Vec<S> {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    if rank == 0 {
        out.push(data[0]);
        return out;
    }
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], src_strides[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|j| data[base + j * inner_stride]));
        }
        // advance the odometer over all but the innermost axis
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.view_op("reshape", shape.to_vec(), Box::new(|g, _| vec![Some(g.to_vec())])))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<S>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.data(), &shape, perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let grad_shape = out_shape.clone();
        Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(permute_data(g, &grad_shape, &inverse))]),
        )
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<S>> {
        let rank = self.rank();
        if a >= rank || b >= rank {
            return Err(TensorError::Axis {
                op: "transpose",
                axis: a.max(b),
                rank,
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Joins tensors along `axis`; all other dims must agree.
    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::Axis { op: "concat", axis, rank });
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = axis_extents(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Tensor::from_op(
            "concat",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, _| {
                let mut out: Vec<Option<Vec<S>>> = needs
                    .iter()
                    .zip(&lens)
                    .map(|(&n, &len)| n.then(|| Vec::with_capacity(outer * len * inner)))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (slot, &len) in out.iter_mut().zip(&lens) {
                        let chunk = &g[offset..offset + len * inner];
                        if let Some(v) = slot {
                            v.extend_from_slice(chunk);
                        }
                        offset += len * inner;
                    }
                }
                out
            }),
        )
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op: "narrow",
                axis,
                rank: self.rank(),
            });
        }
        if start + len > self.dim(axis) {
            return Err(invalid(
                "narrow",
                format!("range {start}..{} exceeds dim {} of {:?}", start + len, self.dim(axis), self.shape()),
            ));
        }
        let (outer, full, inner) = axis_extents(self.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let numel = self.numel();
        Tensor::from_op(
            "narrow",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![S::zero(); numel];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<S>>> {
        if axis < self.rank() && sizes.iter().sum::<usize>() != self.dim(axis) {
            return Err(TensorError::ShapeMismatch {
                op: "split",
                lhs: self.shape().to_vec(),
                rhs: sizes.to_vec(),
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let t = self.narrow(axis, start, len);
                start += len;
                t
            })
            .collect()
    }

    /// Selects (possibly repeated) indices along `axis`; gradients scatter-add back.
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Tensor<S>> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op: "gather",
                axis,
                rank: self.rank(),
            });
        }
        let (outer, full, inner) = axis_extents(self.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= full) {
            return Err(invalid("gather", format!("index {bad} out of range for dim {full}")));
        }
        let idx = indices.to_vec();
        let mut data = Vec::with_capacity(outer * idx.len() * inner);
        for o in 0..outer {
            for &i in &idx {
                let base = (o * full + i) * inner;
                data.extend_from_slice(&self.data()[base..base + inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = idx.len();
        let numel = self.numel();
        Tensor::from_op(
            "gather",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![S::zero(); numel];
                let mut src = 0;
                for o in 0..outer {
                    for &i in &idx {
                        let base = (o * full + i) * inner;
                        gx[base..base + inner]
                            .iter_mut()
                            .zip(&g[src..src + inner])
                            .for_each(|(a, &b)| *a += b);
                        src += inner;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Frame selection on a `(B, T, ...)` sequence.
    pub fn gather_frames(&self, frames: &[usize]) -> Result<Tensor<S>> {
        self.gather(1, frames)
    }

    /// Repeats a size-1 axis `n` times; gradients sum over the copies.
    pub fn expand(&self, axis: usize, n: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() || self.dim(axis) != 1 {
            return Err(invalid("expand", format!("axis {axis} of {:?} must have size 1", self.shape())));
        }
        self.gather(axis, &vec![0; n])
    }
}
