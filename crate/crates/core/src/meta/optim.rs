use serde::{Deserialize, Serialize};

use super::config::{AdamConfig, OptimizerKind, OuterConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outer optimizer state over the flat vector of everything the outer loop
/// updates (initialization, then learned inner rates if any).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerState<T> {
    Sgd,
    Adam { step: u64, m: Vec<T>, v: Vec<T> },
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                step: 0,
                m: vec![T::zero(); len],
                v: vec![T::zero(); len],
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerState::Sgd => OptimizerKind::Sgd,
            OptimizerState::Adam { .. } => OptimizerKind::Adam,
        }
    }

    /// In-place descent step on `params` along `grad`.
    pub fn apply(&mut self, params: &mut [T], grad: &[T], cfg: &OuterConfig) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::shape("optimizer", &[params.len()], &[grad.len()]));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteInput { index: i });
        }
        let eta = T::of(cfg.eta);
        match self {
            OptimizerState::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p = *p - eta * g;
                }
            }
            OptimizerState::Adam { step, m, v } => {
                if m.len() != params.len() {
                    return Err(Error::shape("adam state", &[m.len()], &[params.len()]));
                }
                let AdamConfig { beta1, beta2, eps } = cfg.adam;
                *step += 1;
                let t = *step as i32;
                let c1 = T::of(1.0 - beta1.powi(t));
                let c2 = T::of(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] = params[i] - eta * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
