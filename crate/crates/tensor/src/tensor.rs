use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with tape recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Computes one gradient slot per parent from the output gradient and output values.
pub(crate) type BackwardFn<S> = Box<dyn Fn(&[S], &[S]) -> Vec<Option<Vec<S>>> + Send + Sync>;

struct GradNode<S: Scalar> {
    op: &'static str,
    parents: Vec<Tensor<S>>,
    backward: BackwardFn<S>,
}

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    requires_grad: bool,
    node: Option<GradNode<S>>,
}

/// Immutable dense row-major tensor.
///
/// Cloning is cheap (shared storage). Ops return new tensors; when any input
/// requires a gradient and recording is enabled, the result carries a tape node.
pub struct Tensor<S: Scalar> {
    inner: Arc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<S> = self.inner.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

fn check_finite<S: Scalar>(op: &'static str, data: &[S]) -> Result<()> {
    // `v - v` is NaN exactly for NaN and infinities; the fold vectorizes.
    if data.iter().fold(S::zero(), |acc, &v| acc + (v - v)) == S::zero() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl<S: Scalar> Tensor<S> {
    fn build(shape: Vec<usize>, data: Vec<S>, requires_grad: bool, node: Option<GradNode<S>>) -> Self {
        Self::build_shared(shape, Arc::new(data), requires_grad, node)
    }

    fn build_shared(shape: Vec<usize>, data: Arc<Vec<S>>, requires_grad: bool, node: Option<GradNode<S>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                node,
            }),
        }
    }

    /// Constant tensor (no gradient).
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        check_finite("new", &data)?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf that collects a gradient during [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::build(t.inner.shape.clone(), t.into_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![S::zero(); n], false, None)
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![v; n], false, None)
    }

    pub fn scalar(v: S) -> Self {
        Self::build(vec![], vec![v], false, None)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::from_f64(v)).collect())
    }

    /// Records an op result. `backward` is dropped when no parent needs a gradient.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        backward: BackwardFn<S>,
    ) -> Result<Self> {
        check_finite(op, &data)?;
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = track.then(|| GradNode {
            op,
            parents,
            backward,
        });
        Ok(Self::build(shape, data, track, node))
    }

    /// Like [`Tensor::from_op`] but reuses this tensor's (already finite) storage.
    pub(crate) fn view_op(&self, op: &'static str, shape: Vec<usize>, backward: BackwardFn<S>) -> Self {
        let track = grad_enabled() && self.requires_grad();
        let node = track.then(|| GradNode {
            op,
            parents: vec![self.clone()],
            backward,
        });
        Self::build_shared(shape, Arc::clone(&self.inner.data), track, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.data.to_vec()
    }

    pub fn into_vec(self) -> Vec<S> {
        match Arc::try_unwrap(self.inner) {
            Ok(inner) => Arc::try_unwrap(inner.data).unwrap_or_else(|shared| shared.to_vec()),
            Err(shared) => shared.data.to_vec(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn item(&self) -> S {
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Name of the op that produced this tensor, if it is tape-connected.
    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    /// Copy of the values cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::build_shared(self.inner.shape.clone(), Arc::clone(&self.inner.data), false, None)
    }

    /// Converts between element types (no gradient path).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::build(
            self.inner.shape.clone(),
            self.inner.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            false,
            None,
        )
    }

    /// Reverse-mode pass from a scalar loss.
    ///
    /// Nodes are visited once each in reverse construction order; ids grow with
    /// construction so parents always precede children.
    pub fn backward(&self) -> Result<Gradients<S>> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        let mut grads: HashMap<u64, Vec<S>> = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { grads });
        }

        let mut order: Vec<Tensor<S>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.requires_grad() && seen.insert(p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        grads.insert(self.id(), vec![S::one()]);
        for t in &order {
            let Some(node) = &t.inner.node else {
                continue;
            };
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let parent_grads = (node.backward)(&g, &t.inner.data);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel(), "{} gradient size", node.op);
                match grads.get_mut(&p.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tensor::backward`].
#[derive(Debug, Default)]
pub struct Gradients<S: Scalar> {
    grads: HashMap<u64, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, t: &Tensor<S>) -> Option<&[S]> {
        self.grads.get(&t.id()).map(|g| g.as_slice())
    }

    /// Gradient for `t`, or exact zeros when `t` is unreachable from the loss.
    pub fn wrt(&self, t: &Tensor<S>) -> Vec<S> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![S::zero(); t.numel()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
