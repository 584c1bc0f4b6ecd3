//! First-order optimizers with the usual library defaults.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradMap, Params};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "adamw")]
    AdamW,
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "rmsprop")]
    RmsProp,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::AdamW => "AdamW",
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::RmsProp => "RMSProp",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adamw" => Ok(Self::AdamW),
            "sgd" => Ok(Self::Sgd),
            "rmsprop" => Ok(Self::RmsProp),
            other => Err(Error::config("optimizer", format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
}

impl OptimizerSpec {
    /// Library default weight decay: 0.01 for AdamW, 0 otherwise.
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        let weight_decay = if kind == OptimizerKind::AdamW { 0.01 } else { 0.0 };
        Self { kind, lr, weight_decay }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMS_ALPHA: f64 = 0.99;
const RMS_EPS: f64 = 1e-8;

/// Optimizer state keyed by parameter name. Parameters without a gradient
/// entry are left untouched.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    step: i32,
    first: IndexMap<String, Mat>,
    second: IndexMap<String, Mat>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self { spec, step: 0, first: IndexMap::new(), second: IndexMap::new() }
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn step(&mut self, params: &mut Params, grads: &GradMap) -> Result<()> {
        self.step += 1;
        let OptimizerSpec { kind, lr, weight_decay: wd } = self.spec;
        for (name, g) in grads {
            let p = params.get_mut(name).ok_or_else(|| Error::Manifest(format!("no parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape { name: name.clone(), expected: p.shape(), got: g.shape() });
            }
            match kind {
                OptimizerKind::Sgd => {
                    for (x, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * (gi + wd * *x);
                    }
                }
                OptimizerKind::RmsProp => {
                    let v = self.second.entry(name.clone()).or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
                    for ((x, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        let gi = gi + wd * *x;
                        *vi = RMS_ALPHA * *vi + (1.0 - RMS_ALPHA) * gi * gi;
                        *x -= lr * gi / (vi.sqrt() + RMS_EPS);
                    }
                }
                OptimizerKind::AdamW => {
                    let m = self.first.entry(name.clone()).or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
                    let v = self.second.entry(name.clone()).or_insert_with(|| Mat::zeros(g.rows(), g.cols()));
                    let bc1 = 1.0 - BETA1.powi(self.step);
                    let bc2 = 1.0 - BETA2.powi(self.step);
                    for (((x, &gi), mi), vi) in
                        p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
                    {
                        *x *= 1.0 - lr * wd;
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                        *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                        *x -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm = grads.values().map(Mat::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> Params {
        let mut p = Params::new();
        p.insert("w", Mat::scalar(value));
        p
    }

    fn grad(value: f64) -> GradMap {
        [("w".to_string(), Mat::scalar(value))].into_iter().collect()
    }

    #[test]
    fn sgd_step() {
        let mut p = single(1.0);
        Optimizer::new(OptimizerSpec::new(OptimizerKind::Sgd, 0.1)).step(&mut p, &grad(2.0)).unwrap();
        assert!((p.get("w").unwrap().item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        // Bias correction makes the first step lr * sign(g), after decay.
        let mut p = single(1.0);
        let spec = OptimizerSpec::new(OptimizerKind::AdamW, 0.01);
        Optimizer::new(spec).step(&mut p, &grad(3.0)).unwrap();
        let expected = 1.0 * (1.0 - 0.01 * 0.01) - 0.01 * 3.0 / (3.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-12);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = single(0.0);
        Optimizer::new(OptimizerSpec::new(OptimizerKind::RmsProp, 0.01)).step(&mut p, &grad(1.0)).unwrap();
        let expected = -0.01 / (0.01f64.sqrt() + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g: GradMap = [("a".to_string(), Mat::from_vec(1, 2, vec![3.0, 4.0]))].into_iter().collect();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].sq_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kind_parses_case_insensitively() {
        assert_eq!("RMSProp".parse::<OptimizerKind>().unwrap(), OptimizerKind::RmsProp);
        assert!("lion".parse::<OptimizerKind>().is_err());
    }
}
