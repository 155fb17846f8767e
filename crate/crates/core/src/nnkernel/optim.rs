use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
    #[serde(rename = "adagrad")]
    AdaGrad,
}

impl OptimizerKind {
    /// SGD 0.01, Adam 0.001, AdaGrad 0.001.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.01,
            OptimizerKind::Adam | OptimizerKind::AdaGrad => 0.001,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdaGrad => "adagrad",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::AdaGrad),
            other => Err(Error::Argument(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// A named parameter slice paired with its gradient.
pub struct Param<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

impl<'a> Param<'a> {
    pub fn new(name: impl Into<String>, values: &'a mut [f64], grad: &'a [f64]) -> Self {
        Param {
            name: name.into(),
            values,
            grad,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter accumulators.
///
/// Accumulators are sized on the first step and must match on every later
/// one: first/second moments for Adam, squared-gradient sums for AdaGrad,
/// velocity for SGD with momentum.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.0,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn with_default_rate(kind: OptimizerKind) -> Self {
        Self::new(kind, kind.default_learning_rate()).expect("default rates are positive")
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Argument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        self.momentum = momentum;
        Ok(self)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::Argument(format!(
                "adam decay rates must lie in (0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Argument("epsilon must be positive".into()));
        }
        Ok(())
    }

    fn ensure_accumulators(&mut self, params: &[Param<'_>]) -> Result<()> {
        if self.first.is_empty() && self.step_count == 0 {
            self.first = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        if self.first.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} parameters, step received {}",
                self.first.len(),
                params.len()
            )));
        }
        for (acc, p) in self.first.iter().zip(params) {
            if acc.len() != p.values.len() {
                return Err(Error::Dimension(format!(
                    "{}: accumulator holds {} values, parameter has {}",
                    p.name,
                    acc.len(),
                    p.values.len()
                )));
            }
        }
        Ok(())
    }

    /// One update over all parameters. Nothing is modified when any gradient
    /// is non-finite or any shape is off.
    pub fn step(&mut self, params: &mut [Param<'_>]) -> Result<()> {
        self.validate()?;
        for p in params.iter() {
            if p.values.len() != p.grad.len() {
                return Err(Error::Dimension(format!(
                    "{}: {} values but {} gradients",
                    p.name,
                    p.values.len(),
                    p.grad.len()
                )));
            }
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric {
                    path: format!("{}[{i}]", p.name),
                    reason: format!("non-finite gradient {}", p.grad[i]),
                });
            }
        }
        self.ensure_accumulators(params)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.learning_rate;
        let eps = self.epsilon;

        for (idx, p) in params.iter_mut().enumerate() {
            let first = &mut self.first[idx];
            let second = &mut self.second[idx];
            match self.kind {
                OptimizerKind::Adam => {
                    let (b1, b2) = (self.beta1, self.beta2);
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    for i in 0..p.values.len() {
                        let g = p.grad[i];
                        first[i] = b1 * first[i] + (1.0 - b1) * g;
                        second[i] = b2 * second[i] + (1.0 - b2) * g * g;
                        let m_hat = first[i] / c1;
                        let v_hat = second[i] / c2;
                        p.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::AdaGrad => {
                    for i in 0..p.values.len() {
                        let g = p.grad[i];
                        second[i] += g * g;
                        p.values[i] -= lr * g / (second[i].sqrt() + eps);
                    }
                }
                OptimizerKind::Sgd => {
                    if self.momentum == 0.0 {
                        for (v, &g) in p.values.iter_mut().zip(p.grad) {
                            *v -= lr * g;
                        }
                    } else {
                        for i in 0..p.values.len() {
                            first[i] = self.momentum * first[i] - lr * p.grad[i];
                            p.values[i] += first[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
