//! Adam with bias correction, mirroring the parameter structure of an MLP.

use crate::error::{Error, Result};

use super::MlpParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: MlpParams,
    v: MlpParams,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place. Errors on non-finite gradients, naming the
/// offending layer.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
    }
    for (i, l) in grads.layers.iter().enumerate() {
        let finite = l.w.is_finite()
            && l.b.iter().all(|v| v.is_finite())
            && l.ln_gain.iter().flatten().all(|v| v.is_finite())
            && l.ln_bias.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::numeric(format!("non-finite gradient in layer {i}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);

    state.m.for_each_array_pair(grads, |m, g| {
        for (mv, gv) in m.iter_mut().zip(g) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
        }
    });
    state.v.for_each_array_pair(grads, |v, g| {
        for (vv, gv) in v.iter_mut().zip(g) {
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
        }
    });

    // params -= lr * m_hat / (sqrt(v_hat) + eps)
    let m_flat = state.m.flatten();
    let v_flat = state.v.flatten();
    let mut p_flat = params.flatten();
    for ((p, m), v) in p_flat.iter_mut().zip(&m_flat).zip(&v_flat) {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    params.unflatten_into(&p_flat);
    Ok(())
}

/// Adam on a single scalar (the entropy temperature's log_alpha).
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for ScalarAdam {
    fn default() -> Self {
        ScalarAdam {
            m: 0.0,
            v: 0.0,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, grad: f64, lr: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::numeric("non-finite scalar gradient"));
        }
        self.step += 1;
        let t = self.step as i32;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - self.beta1.powi(t));
        let v_hat = self.v / (1.0 - self.beta2.powi(t));
        *param -= lr * m_hat / (v_hat.sqrt() + self.eps);
        Ok(())
    }
}
