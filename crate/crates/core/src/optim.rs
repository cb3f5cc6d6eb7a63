//! First-order updates on a loss gradient.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;
use crate::policy::{GradientAccumulator, PolicyParameters};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { dim } else { 0 };
        Self { kind, step: 0, m: vec![0.0; moments], v: vec![0.0; moments] }
    }

    /// `θ ← θ − lr · update(g)` where `g` is a loss gradient.
    pub fn apply(&mut self, params: &mut PolicyParameters, grad: &GradientAccumulator, lr: f64) -> Result<()> {
        if grad.dim() != params.len() {
            return Err(Error::DimensionMismatch { expected: params.len(), found: grad.dim() });
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (t, g) in params.theta_mut().iter_mut().zip(&grad.grad) {
                    *t -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::DimensionMismatch { expected: params.len(), found: self.m.len() });
                }
                let step = self.step as f64;
                let bc1 = 1.0 - libm::pow(ADAM_BETA1, step);
                let bc2 = 1.0 - libm::pow(ADAM_BETA2, step);
                for (i, t) in params.theta_mut().iter_mut().enumerate() {
                    let g = grad.grad[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    *t -= lr * mhat / (math::sqrt(vhat) + ADAM_EPS);
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite { step: self.step, context: "parameters after update".to_string() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Architecture;

    #[test]
    fn sgd_step() {
        let arch = Architecture::Tabular { vocab: 5, order: 1 };
        let mut p = PolicyParameters::zeros(arch);
        let mut g = GradientAccumulator::for_params(&p);
        g.grad[3] = 2.0;
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, p.len());
        opt.apply(&mut p, &g, 0.1).unwrap();
        assert!((p.theta()[3] + 0.2).abs() < 1e-15);
        assert_eq!(p.theta()[0], 0.0);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let arch = Architecture::Tabular { vocab: 5, order: 1 };
        let mut p = PolicyParameters::zeros(arch);
        let mut g = GradientAccumulator::for_params(&p);
        g.grad[1] = 3.0;
        g.grad[2] = -0.5;
        let mut opt = OptimizerState::new(OptimizerKind::Adam, p.len());
        opt.apply(&mut p, &g, 0.01).unwrap();
        assert!((p.theta()[1] + 0.01).abs() < 1e-9);
        assert!((p.theta()[2] - 0.01).abs() < 1e-9);
        assert_eq!(p.theta()[0], 0.0);
    }

    #[test]
    fn adam_moves_monotonically_against_constant_gradient() {
        let arch = Architecture::Tabular { vocab: 5, order: 1 };
        let mut p = PolicyParameters::zeros(arch);
        let mut g = GradientAccumulator::for_params(&p);
        g.grad[0] = 0.7;
        g.grad[4] = -2.0;
        let mut opt = OptimizerState::new(OptimizerKind::Adam, p.len());
        let mut prev = p.theta().to_vec();
        for _ in 0..1000 {
            opt.apply(&mut p, &g, 1e-3).unwrap();
            assert!(p.theta()[0] < prev[0]);
            assert!(p.theta()[4] > prev[4]);
            assert_eq!(p.theta()[1], 0.0);
            prev = p.theta().to_vec();
        }
        assert_eq!(opt.step, 1000);
    }

    #[test]
    fn sgd_unit_example() {
        let arch = Architecture::Tabular { vocab: 1, order: 1 };
        let mut p = PolicyParameters::from_theta(arch, alloc::vec![1.0]).unwrap();
        let mut g = GradientAccumulator::for_params(&p);
        g.grad[0] = 2.0;
        OptimizerState::new(OptimizerKind::Sgd, 1).apply(&mut p, &g, 0.5).unwrap();
        assert_eq!(p.theta(), &[0.0]);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
