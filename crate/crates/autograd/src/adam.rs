//! Adam with bias correction.

use crate::error::{AutogradError, Result};
use crate::params::{Gradients, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// Learning rate 5e-4 with β1 = 0.99 and β2 = 0.9, as printed in the
    /// original Multi-ABN parameter table. The conventional (0.9, 0.999)
    /// pair is one override away.
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.99,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per registered parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .ids()
                .map(|id| Tensor::zeros(params.get(id).shape().to_vec()))
                .collect()
        };
        AdamState {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Rebuilds a state from saved buffers, checking them against `params`.
    pub fn from_parts(params: &ParamSet, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<Self> {
        let state = AdamState { t, m, v };
        state.check(params)?;
        Ok(state)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    fn check(&self, params: &ParamSet) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(AutogradError::StateMismatch(format!(
                "{} parameters but {} / {} moment buffers",
                params.len(),
                self.m.len(),
                self.v.len()
            )));
        }
        for id in params.ids() {
            let shape = params.get(id).shape();
            if self.m[id.index()].shape() != shape || self.v[id.index()].shape() != shape {
                return Err(AutogradError::StateMismatch(format!(
                    "moment shape for `{}`",
                    params.name(id)
                )));
            }
        }
        Ok(())
    }

    /// One Adam update. Any non-finite gradient rejects the whole step and
    /// leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        self.check(params)?;
        if grads.len() != params.len() {
            return Err(AutogradError::StateMismatch(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for id in params.ids() {
            let g = grads.get(id);
            if g.len() != params.get(id).len() {
                return Err(AutogradError::StateMismatch(format!(
                    "gradient size for `{}`",
                    params.name(id)
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(AutogradError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for id in params.ids() {
            let g = grads.get(id);
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
