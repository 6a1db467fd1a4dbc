use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inner-loop step size: one rate for every parameter, or one per parameter
/// coordinate (flat, in layout order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InnerRate {
    Uniform(f64),
    PerParam(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerConfig {
    pub alpha: InnerRate,
    pub steps: usize,
    /// Meta-learn the per-parameter rate alongside the initialization.
    pub learn_alpha: bool,
    /// Treat inner gradients as constants in the outer differentiation.
    pub first_order: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            alpha: InnerRate::Uniform(0.01),
            steps: 1,
            learn_alpha: false,
            first_order: false,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self, param_count: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("inner steps must be >= 1".into()));
        }
        match &self.alpha {
            InnerRate::Uniform(a) if !(*a > 0.0 && a.is_finite()) => {
                Err(Error::Config(format!("inner rate must be positive, got {a}")))
            }
            InnerRate::PerParam(v) if v.len() != param_count => Err(Error::Config(format!(
                "per-parameter inner rate has {} entries for {param_count} parameters",
                v.len()
            ))),
            InnerRate::PerParam(v) if v.iter().any(|a| !(*a > 0.0 && a.is_finite())) => {
                Err(Error::Config("per-parameter inner rates must all be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// How query losses pair with adapted parameters in the outer objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Task i's adapted parameters scored on task i's query set.
    #[default]
    Matched,
    /// Task i's adapted parameters scored on every task j's query set.
    Cross,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceGrad {
    /// Differentiate the penalty through the per-task gradients.
    #[default]
    Exact,
    /// Penalty is reported but contributes no gradient.
    StopGrad,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterConfig {
    pub eta: f64,
    /// Weight of the gradient-variance penalty; 0 gives plain MAML.
    pub lambda_pen: f64,
    pub meta_batch: usize,
    pub pairing: Pairing,
    pub variance_grad: VarianceGrad,
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig {
            eta: 1e-3,
            lambda_pen: 0.0,
            meta_batch: 4,
            pairing: Pairing::Matched,
            variance_grad: VarianceGrad::Exact,
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::default(),
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda_pen >= 0.0 && self.lambda_pen.is_finite()) {
            return Err(Error::Config(format!("lambda_pen must be >= 0, got {}", self.lambda_pen)));
        }
        if self.meta_batch == 0 {
            return Err(Error::Config("meta_batch must be >= 1".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam constants {a:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_forms() {
        let c: InnerConfig = serde_json::from_str(r#"{"alpha": 0.4, "steps": 2}"#).unwrap();
        assert_eq!(c.alpha, InnerRate::Uniform(0.4));
        assert_eq!(c.steps, 2);
        let c: InnerConfig = serde_json::from_str(r#"{"alpha": [0.1, 0.2]}"#).unwrap();
        assert_eq!(c.alpha, InnerRate::PerParam(vec![0.1, 0.2]));
        let o: OuterConfig = serde_json::from_str(r#"{"pairing": "cross", "optimizer": "sgd"}"#).unwrap();
        assert_eq!(o.pairing, Pairing::Cross);
        assert_eq!(o.eta, 1e-3);
        assert!(serde_json::from_str::<OuterConfig>(r#"{"beta": 1}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(InnerConfig::default().validate(3).is_ok());
        let bad = InnerConfig {
            steps: 0,
            ..InnerConfig::default()
        };
        assert!(bad.validate(3).is_err());
        let bad = InnerConfig {
            alpha: InnerRate::PerParam(vec![0.1; 2]),
            ..InnerConfig::default()
        };
        assert!(bad.validate(3).is_err());
        let bad = OuterConfig {
            lambda_pen: -1.0,
            ..OuterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
