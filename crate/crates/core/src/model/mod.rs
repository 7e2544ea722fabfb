//! Generative parameters: the response model and the mastery dynamics.

pub mod response;
pub mod temporal;

use serde::{Deserialize, Serialize};

use crate::kernel::params::{join, Decay, ParamSet};
use crate::kernel::{Array, Tape};
use crate::rng;

pub use response::{ProblemTerms, ResponseParams, ResponseVars};
pub use temporal::{ConceptClock, StepInputs, TemporalParams, TemporalVars, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTheta {
    pub response: ResponseParams,
    pub temporal: TemporalParams,
}

#[derive(Clone, Copy, Debug)]
pub struct ThetaVars {
    pub response: ResponseVars,
    pub temporal: TemporalVars,
}

/// Slip and guess logits at initialization (`σ(-2) ≈ 0.12`).
pub const INIT_NOISE_LOGIT: f64 = -2.0;

impl ModelTheta {
    pub fn init(problems: usize, concepts: usize, d_e: usize, delta_hat: f64, seed: u64) -> Self {
        ModelTheta {
            response: ResponseParams::init(problems, concepts, d_e, INIT_NOISE_LOGIT, rng::derive_tag(seed, "theta")),
            temporal: TemporalParams::init(concepts, delta_hat),
        }
    }

    pub fn zeros(problems: usize, concepts: usize, d_e: usize) -> Self {
        ModelTheta {
            response: ResponseParams::zeros(problems, concepts, d_e),
            temporal: TemporalParams::zeros(concepts),
        }
    }

    pub fn concepts(&self) -> usize {
        self.response.concepts()
    }

    pub fn problems(&self) -> usize {
        self.response.problems()
    }

    pub fn embedding_dim(&self) -> usize {
        self.response.embedding_dim()
    }

    pub fn bind(&self, tape: &Tape, prefix: &str, trainable: bool) -> ThetaVars {
        ThetaVars {
            response: self.response.bind(tape, &join(prefix, "response"), trainable),
            temporal: self.temporal.bind(tape, &join(prefix, "temporal"), trainable),
        }
    }
}

impl ParamSet for ModelTheta {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        self.response.visit(&join(prefix, "response"), f);
        self.temporal.visit(&join(prefix, "temporal"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        self.response.visit_mut(&join(prefix, "response"), f);
        self.temporal.visit_mut(&join(prefix, "temporal"), f);
    }
}
