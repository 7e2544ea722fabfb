//! Minimal reverse-mode differentiation over dense `f64` vectors and
//! matrices, enough to train the LSTMs and log-linear models in this crate.

mod array;
mod gradcheck;
mod layers;
mod optim;
pub mod params;
mod tape;

pub use array::Array;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{
    dense_forward, glorot_init, lstm_cell_step, lstm_sequence_forward, DenseParams, DenseVars,
    GateParams, GateVars, LstmCellParams, LstmState, LstmStateVars, LstmVars,
};
pub(crate) use layers::bind_array;
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ArrayRecord, Decay, ParamBundle, ParamSet};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("backward() needs a scalar loss, got {len} values")]
    NotScalar { len: usize },
    #[error("variable was not recorded on this tape")]
    UntracedNode,
    #[error("empty input sequence")]
    EmptySequence,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("parameter {0} is missing")]
    MissingParameter(String),
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without forming σ(x).
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Log-odds `ln(p / (1 - p))`.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_branches_agree() {
        for x in [-40.0, -3.0, -1e-9, 0.0, 1e-9, 2.5, 40.0] {
            let naive = 1.0 / (1.0 + f64::exp(-x));
            assert!((sigmoid(x) - naive).abs() < 1e-15);
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
        assert!(log_sigmoid(-800.0).is_finite());
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }
}
