//! Next-step mastery push-forward and the response-prediction LSTM.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::generative::{GenerativeModel, Skeleton, Timeline};
use crate::kernel::params::{join, Decay, ParamSet};
use crate::kernel::{
    dense_forward, lstm_sequence_forward, Array, DenseParams, LstmCellParams, Tape, Var,
};
use crate::model::temporal::push_forward;
use crate::model::{StepInputs, TemporalParams};
use crate::posterior::{exercise_embedding, posterior_forward, PosteriorNetParams};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub lstm: LstmCellParams,
    pub out: DenseParams,
}

impl PredictorParams {
    pub fn input_dim(d_e: usize, concepts: usize) -> usize {
        2 * d_e + 2 * concepts
    }

    pub fn default_hidden(concepts: usize) -> usize {
        80 + 4 * concepts
    }

    pub fn init(d_e: usize, concepts: usize, hidden: usize, seed: u64) -> Self {
        PredictorParams {
            lstm: LstmCellParams::glorot(hidden, Self::input_dim(d_e, concepts), rng::derive_tag(seed, "lstm")),
            out: DenseParams::glorot(1, hidden, rng::derive_tag(seed, "out")),
        }
    }

    pub fn zeros(d_e: usize, concepts: usize, hidden: usize) -> Self {
        PredictorParams {
            lstm: LstmCellParams::zeros(hidden, Self::input_dim(d_e, concepts)),
            out: DenseParams::zeros(1, hidden),
        }
    }
}

impl ParamSet for PredictorParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// `p(u_k^{t+1} = 1) ≈ q_k (1 - pF_k) + (1 - q_k) pL_k` with the hazards of
/// step t+1.
pub fn predict_mastery_next(q_t: &[f64], next: &StepInputs, temporal: &TemporalParams) -> Vec<f64> {
    push_forward(q_t, &temporal.hazards(next))
}

/// `[x_next, q_t, mastery_next]`.
pub fn build_pred_input(x_next: &[f64], q_t: &[f64], mastery_next: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x_next.len() + q_t.len() + mastery_next.len());
    out.extend_from_slice(x_next);
    out.extend_from_slice(q_t);
    out.extend_from_slice(mastery_next);
    out
}

/// Per-step posterior, forecast and predictor input for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorFeatures {
    /// Posterior after each step's response.
    pub posterior: Vec<Vec<f64>>,
    /// Mastery forecast for step s made before its response is seen
    /// (the initial mastery at the first step).
    pub forecast: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

/// Builds the input of step s from the posterior after step s-1; the first
/// step uses the initial mastery for both the posterior and the forecast.
pub fn predictor_features(
    model: &GenerativeModel,
    phi: &PosteriorNetParams,
    tl: &Timeline,
    responses: &[u8],
) -> Result<PredictorFeatures> {
    let posterior = posterior_forward(model, phi, tl, responses)?.q;
    let temporal = &model.theta.temporal;
    let initial = temporal.initial_mastery();
    let mut forecast = Vec::with_capacity(tl.len());
    let mut inputs = Vec::with_capacity(tl.len());
    for s in 0..tl.len() {
        let (prev, next) = if s == 0 {
            (initial.clone(), initial.clone())
        } else {
            let prev = posterior[s - 1].clone();
            let next = predict_mastery_next(&prev, &tl.steps[s], temporal);
            (prev, next)
        };
        let x = exercise_embedding(tl.problem(s), model.q, &model.theta.response)?;
        inputs.push(build_pred_input(&x, &prev, &next));
        forecast.push(next);
    }
    Ok(PredictorFeatures {
        posterior,
        forecast,
        inputs,
    })
}

/// Readout logits of the prediction LSTM for every step, on a tape.
pub fn predictor_logits_on_tape(
    tape: &Tape,
    pred: &PredictorParams,
    prefix: &str,
    trainable: bool,
    inputs: &[Vec<f64>],
) -> Result<Vec<Var>> {
    let lstm = pred.lstm.bind(tape, &join(prefix, "lstm"), trainable)?;
    let out = pred.out.bind(tape, &join(prefix, "out"), trainable);
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant_vec(x.clone())).collect();
    let states = lstm_sequence_forward(tape, &lstm, &xs)?;
    states
        .iter()
        .map(|s| Ok(dense_forward(tape, &out, s.h)?))
        .collect()
}

/// `y_p` for every step; step s sees responses before s only.
pub fn predict_sequence(pred: &PredictorParams, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let tape = Tape::new();
    let logits = predictor_logits_on_tape(&tape, pred, "", false, inputs)?;
    Ok(logits
        .iter()
        .map(|&l| tape.item(tape.sigmoid(l)))
        .collect())
}

/// Probability of a correct answer to `next_problem` at `next_time` after
/// the observed prefix.
pub fn predict_response(
    model: &GenerativeModel,
    phi: &PosteriorNetParams,
    pred: &PredictorParams,
    prefix: &Skeleton,
    prefix_responses: &[u8],
    next_problem: usize,
    next_time: i64,
) -> Result<f64> {
    if prefix_responses.len() != prefix.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} responses for a prefix of {} steps",
            prefix_responses.len(),
            prefix.len()
        )));
    }
    let mut sk = prefix.clone();
    sk.times.push(next_time);
    sk.problems.push(next_problem);
    let tl = model.timeline(&sk)?;
    // the response slot of the final step never reaches its own prediction
    let mut responses = prefix_responses.to_vec();
    responses.push(0);
    let feats = predictor_features(model, phi, &tl, &responses)?;
    let ys = predict_sequence(pred, &feats.inputs)?;
    Ok(*ys.last().expect("non-empty sequence"))
}

/// Summed binary cross-entropy over steps `s >= 1` (the second step
/// onward), and the number of such steps.
pub fn predictor_bce_on_tape(
    tape: &Tape,
    pred: &PredictorParams,
    prefix: &str,
    inputs: &[Vec<f64>],
    responses: &[u8],
) -> Result<(Var, usize)> {
    let logits = predictor_logits_on_tape(tape, pred, prefix, true, inputs)?;
    let terms: Vec<Var> = logits
        .iter()
        .zip(responses)
        .skip(1)
        .map(|(&l, &r)| {
            let signed = if r == 1 { l } else { tape.neg(l) };
            tape.neg(tape.log_sigmoid(signed))
        })
        .collect();
    if terms.is_empty() {
        return Ok((tape.scalar(0.0), 0));
    }
    Ok((tape.add_all(&terms), terms.len()))
}
