use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Decay, ParamSet};
use super::{Gradients, KernelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Constant-learning-rate optimizer (Adam or plain SGD) with an L2 penalty
/// `l2 * w` added to the gradient of every non-bias parameter.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn adam(lr: f64, l2: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, l2)
    }

    pub fn new(kind: OptimizerKind, lr: f64, l2: f64) -> Self {
        Optimizer {
            kind,
            lr,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter of `params` visited under `prefix`.
    /// Parameters missing from `grads` are treated as having zero gradient.
    pub fn step<P: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        prefix: &str,
        grads: &Gradients,
    ) -> Result<(), KernelError> {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut err = None;
        params.visit_mut(prefix, &mut |name, p, decay| {
            let g = grads.get(name);
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    err = Some(KernelError::ShapeMismatch {
                        op: "optimizer step",
                        expected: format!("{name} {:?}", p.shape()),
                        found: format!("{:?}", g.shape()),
                    });
                    return;
                }
            }
            let l2 = if decay == Decay::Weight { self.l2 } else { 0.0 };
            let n = p.len();
            match self.kind {
                OptimizerKind::Sgd => {
                    for k in 0..n {
                        let gk = g.map_or(0.0, |g| g.data()[k]) + l2 * p.data()[k];
                        p.data_mut()[k] -= self.lr * gk;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self
                        .first
                        .entry(name.to_string())
                        .or_insert_with(|| vec![0.0; n]);
                    let v = self
                        .second
                        .entry(name.to_string())
                        .or_insert_with(|| vec![0.0; n]);
                    for k in 0..n {
                        let gk = g.map_or(0.0, |g| g.data()[k]) + l2 * p.data()[k];
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        p.data_mut()[k] -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// `0.5 * l2 * Σ w²` over the decayed parameters, the penalty whose
    /// gradient [`Optimizer::step`] adds.
    pub fn penalty<P: ParamSet + ?Sized>(&self, params: &P) -> f64 {
        let mut s = 0.0;
        params.visit("", &mut |_, a, decay| {
            if decay == Decay::Weight {
                s += a.sum_squares();
            }
        });
        0.5 * self.l2 * s
    }
}
