use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        let (ta, tb) = (a.requires_grad(), b.requires_grad());
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _| {
                let ga = ta.then(|| g.iter().zip(b.data()).map(|(&g, &y)| g * y).collect());
                let gb = tb.then(|| g.iter().zip(a.data()).map(|(&g, &x)| g * x).collect());
                vec![ga, gb]
            }),
        )
    }

    pub fn square(&self) -> Result<Tensor<S>> {
        let x = self.clone();
        let data = self.data().iter().map(|&v| v * v).collect();
        Tensor::from_op(
            "square",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let two = S::from_f64(2.0);
                vec![Some(g.iter().zip(x.data()).map(|(&g, &x)| two * g * x).collect())]
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<S>> {
        let c = S::from_f64(c);
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|&v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor<S>> {
        let c = S::from_f64(c);
        let data = self.data().iter().map(|&v| v + c).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Multiplies each slice along axis 0 by a constant coefficient.
    pub fn scale_leading(&self, coeffs: &[f64]) -> Result<Tensor<S>> {
        if self.rank() == 0 || self.dim(0) != coeffs.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_leading",
                lhs: self.shape().to_vec(),
                rhs: vec![coeffs.len()],
            });
        }
        let coeffs: Vec<S> = coeffs.iter().map(|&c| S::from_f64(c)).collect();
        let block = self.numel() / coeffs.len().max(1);
        let apply = move |src: &[S], coeffs: &[S]| -> Vec<S> {
            src.chunks(block.max(1))
                .zip(coeffs)
                .flat_map(|(chunk, &c)| chunk.iter().map(move |&v| v * c))
                .collect()
        };
        let data = apply(self.data(), &coeffs);
        Tensor::from_op(
            "scale_leading",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(apply(g, &coeffs))]),
        )
    }

    /// Adds a vector along the last axis of every row.
    pub fn add_row(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let last = self.shape().last().copied().unwrap_or(1);
        if bias.rank() != 1 || bias.numel() != last {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let mut data = self.to_vec();
        for row in data.chunks_mut(last) {
            row.iter_mut().zip(bias.data()).for_each(|(v, &b)| *v += b);
        }
        let tb = bias.requires_grad();
        Tensor::from_op(
            "add_row",
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _| {
                let gb = tb.then(|| {
                    let mut acc = vec![S::zero(); last];
                    for row in g.chunks(last) {
                        acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    acc
                });
                vec![Some(g.to_vec()), gb]
            }),
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Result<Tensor<S>> {
        let c = S::from_f64(GELU_C);
        let a = S::from_f64(GELU_A);
        let half = S::from_f64(0.5);
        let one = S::one();
        let tanh: Vec<S> = self.data().iter().map(|&x| (c * (x + a * x * x * x)).tanh()).collect();
        let data = self.data().iter().zip(&tanh).map(|(&x, &t)| half * x * (one + t)).collect();
        let x = self.clone();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let three = S::from_f64(3.0);
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(&tanh)
                    .map(|((&g, &x), &t)| {
                        let du = c * (one + three * a * x * x);
                        g * (half * (one + t) + half * x * (one - t * t) * du)
                    })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn silu(&self) -> Result<Tensor<S>> {
        let one = S::one();
        let data = self.data().iter().map(|&x| x / (one + (-x).exp())).collect();
        let x = self.clone();
        Tensor::from_op(
            "silu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| {
                        let s = one / (one + (-x).exp());
                        g * (s + x * s * (one - s))
                    })
                    .collect();
                vec![Some(gx)]
            }),
        )
    }
}
