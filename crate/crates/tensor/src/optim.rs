use crate::error::{invalid, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW update of a single parameter; `step` counts from 1.
///
/// Weight decay is decoupled (applied to the weights, not folded into the gradient).
pub fn adamw_step<S: Scalar>(param: &mut [S], grad: &[S], m: &mut [S], v: &mut [S], cfg: &AdamWConfig, step: u64) {
    let (b1, b2) = (S::from_f64(cfg.beta1), S::from_f64(cfg.beta2));
    let one = S::one();
    let lr = S::from_f64(cfg.lr);
    let decay = one - lr * S::from_f64(cfg.weight_decay);
    let bc1 = S::from_f64(1.0 - cfg.beta1.powi(step as i32));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powi(step as i32));
    let eps = S::from_f64(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// AdamW with per-parameter first/second moments aligned to a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamW<S: Scalar> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig, store: &ParamStore<S>) -> Result<Self> {
        if config.lr <= 0.0 {
            return Err(invalid("adamw", "learning rate must be positive"));
        }
        let zeros: Vec<Vec<S>> = store.iter().map(|(_, _, t)| vec![S::zero(); t.numel()]).collect();
        Ok(AdamW {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        let grads = store.grads(grads);
        self.step_with(store, &grads)
    }

    /// Update with gradients already aligned to the store order.
    pub fn step_with(&mut self, store: &mut ParamStore<S>, grads: &[Vec<S>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(invalid("adamw", "gradient/parameter count mismatch"));
        }
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let mut w = store.get(id).to_vec();
            adamw_step(&mut w, &grads[i], &mut self.m[i], &mut self.v[i], &self.config, self.step);
            store.set(id, w)?;
        }
        Ok(())
    }

    pub fn moments(&self) -> (&[Vec<S>], &[Vec<S>]) {
        (&self.m, &self.v)
    }

    /// Restores persisted optimizer state.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<S>>, v: Vec<Vec<S>>) -> Result<()> {
        let ok = m.len() == self.m.len()
            && v.len() == self.v.len()
            && m.iter().zip(&self.m).all(|(a, b)| a.len() == b.len())
            && v.iter().zip(&self.v).all(|(a, b)| a.len() == b.len());
        if !ok {
            return Err(invalid("adamw", "restored moments do not match parameters"));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
