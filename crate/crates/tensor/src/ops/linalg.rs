use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major `m x n` view with an optional transpose.
#[derive(Clone, Copy)]
struct Mat<'a, S> {
    data: &'a [S],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a, S: Scalar> Mat<'a, S> {
    fn new(data: &'a [S], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical (rows, cols, row stride, col stride) after transposition.
    fn layout(&self) -> (usize, usize, isize, isize) {
        if self.transposed {
            (self.cols, self.rows, 1, self.cols as isize)
        } else {
            (self.rows, self.cols, self.cols as isize, 1)
        }
    }
}

/// Below this many multiply-adds, packing overhead outweighs the blocked kernel.
const SMALL_GEMM: usize = 16 * 1024;

#[allow(clippy::too_many_arguments)]
fn naive_gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    rsa: isize,
    csa: isize,
    b: &[S],
    rsb: isize,
    csb: isize,
    out: &mut [S],
    accumulate: bool,
) {
    if !accumulate {
        out.fill(S::zero());
    }
    let (rsa, csa, rsb, csb) = (rsa as usize, csa as usize, rsb as usize, csb as usize);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * rsa + p * csa];
            let base = p * rsb;
            if csb == 1 {
                for (o, &bv) in row.iter_mut().zip(&b[base..base + n]) {
                    *o += av * bv;
                }
            } else {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += av * b[base + j * csb];
                }
            }
        }
    }
}

/// `out (+)= a @ b` where `out` is row-major.
fn gemm_into<S: Scalar>(a: Mat<'_, S>, b: Mat<'_, S>, out: &mut [S], accumulate: bool) {
    let (m, k, rsa, csa) = a.layout();
    let (k2, n, rsb, csb) = b.layout();
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if m * n * k <= SMALL_GEMM {
        naive_gemm(m, k, n, a.data, rsa, csa, b.data, rsb, csb, out, accumulate);
        return;
    }
    let beta = if accumulate { S::one() } else { S::zero() };
    // SAFETY: slices hold exactly the extents described by the layouts above.
    unsafe {
        S::gemm(
            m,
            k,
            n,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<S: Scalar> Tensor<S> {
    /// Matrix product over the last two axes.
    ///
    /// Batch dims must match exactly, or one operand may be a plain matrix that
    /// is shared across the other's batch.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        if self.rank() < 2 || rhs.rank() < 2 {
            return Err(mismatch());
        }
        let (ra, rb) = (self.rank(), rhs.rank());
        let (m, k) = (self.dim(ra - 2), self.dim(ra - 1));
        let (k2, n) = (rhs.dim(rb - 2), rhs.dim(rb - 1));
        if k != k2 {
            return Err(mismatch());
        }
        let a_batch = &self.shape()[..ra - 2];
        let b_batch = &rhs.shape()[..rb - 2];

        if rb == 2 {
            // Shared right matrix: fold the batch into rows.
            let rows: usize = a_batch.iter().product::<usize>() * m;
            let mut out = vec![S::zero(); rows * n];
            gemm_into(Mat::new(self.data(), rows, k), Mat::new(rhs.data(), k, n), &mut out, false);
            let mut shape = a_batch.to_vec();
            shape.extend([m, n]);
            let (a, b) = (self.clone(), rhs.clone());
            return Tensor::from_op(
                "matmul",
                shape,
                out,
                vec![self.clone(), rhs.clone()],
                Box::new(move |g, _| {
                    let ga = a.requires_grad().then(|| {
                        let mut ga = vec![S::zero(); rows * k];
                        gemm_into(Mat::new(g, rows, n), Mat::new(b.data(), k, n).t(), &mut ga, false);
                        ga
                    });
                    let gb = b.requires_grad().then(|| {
                        let mut gb = vec![S::zero(); k * n];
                        gemm_into(Mat::new(a.data(), rows, k).t(), Mat::new(g, rows, n), &mut gb, false);
                        gb
                    });
                    vec![ga, gb]
                }),
            );
        }

        let shared_lhs = ra == 2;
        if !shared_lhs && a_batch != b_batch {
            return Err(mismatch());
        }
        let batch_shape = b_batch.to_vec();
        let batch: usize = batch_shape.iter().product();
        let (sa, sb, so) = (if shared_lhs { 0 } else { m * k }, k * n, m * n);
        let mut out = vec![S::zero(); batch * so];
        for i in 0..batch {
            gemm_into(
                Mat::new(&self.data()[i * sa..i * sa + m * k], m, k),
                Mat::new(&rhs.data()[i * sb..(i + 1) * sb], k, n),
                &mut out[i * so..(i + 1) * so],
                false,
            );
        }
        let mut shape = batch_shape;
        shape.extend([m, n]);
        let (a, b) = (self.clone(), rhs.clone());
        Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _| {
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![S::zero(); a.numel()];
                    for i in 0..batch {
                        let dst = if shared_lhs {
                            &mut ga[..]
                        } else {
                            &mut ga[i * sa..(i + 1) * sa]
                        };
                        gemm_into(
                            Mat::new(&g[i * so..(i + 1) * so], m, n),
                            Mat::new(&b.data()[i * sb..(i + 1) * sb], k, n).t(),
                            dst,
                            shared_lhs,
                        );
                    }
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![S::zero(); b.numel()];
                    for i in 0..batch {
                        gemm_into(
                            Mat::new(&a.data()[i * sa..i * sa + m * k], m, k).t(),
                            Mat::new(&g[i * so..(i + 1) * so], m, n),
                            &mut gb[i * sb..(i + 1) * sb],
                            false,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        )
    }
}
