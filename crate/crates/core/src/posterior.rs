//! Amortized filtering posterior: an LSTM over combined exercise inputs
//! whose sigmoid readout gives per-concept mastery probabilities.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::QMatrix;
use crate::error::{check_index, ModelError, Result};
use crate::generative::{GenerativeModel, JointSample, LatentPath, Timeline};
use crate::kernel::params::{join, Decay, ParamSet};
use crate::kernel::{dense_forward, lstm_sequence_forward, Array, DenseParams, LstmCellParams, Tape, Var};
use crate::model::ResponseParams;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorNetParams {
    pub lstm: LstmCellParams,
    pub out: DenseParams,
}

/// `q[t][k]`, approximate `p(u_k^t = 1 | r_1..r_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorOutput {
    pub q: Vec<Vec<f64>>,
}

impl PosteriorNetParams {
    pub fn input_dim(d_e: usize, concepts: usize) -> usize {
        4 * d_e + concepts
    }

    pub fn init(d_e: usize, concepts: usize, hidden: usize, seed: u64) -> Self {
        PosteriorNetParams {
            lstm: LstmCellParams::glorot(hidden, Self::input_dim(d_e, concepts), rng::derive_tag(seed, "lstm")),
            out: DenseParams::glorot(concepts, hidden, rng::derive_tag(seed, "out")),
        }
    }

    pub fn zeros(d_e: usize, concepts: usize, hidden: usize) -> Self {
        PosteriorNetParams {
            lstm: LstmCellParams::zeros(hidden, Self::input_dim(d_e, concepts)),
            out: DenseParams::zeros(concepts, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }
}

impl ParamSet for PosteriorNetParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// `x = [E_e[j], Σ_k Q_jk E_c[k]]`.
pub fn exercise_embedding(problem: usize, q: &QMatrix, p: &ResponseParams) -> Result<Vec<f64>> {
    check_index("problem", problem, p.problems())?;
    check_index("problem", problem, q.problems())?;
    let mut x = p.e_e.row(problem).to_vec();
    x.extend(p.concept_sum(problem, q));
    Ok(x)
}

/// `[x, 0, prior]` after a correct answer, `[0, x, prior]` otherwise.
pub fn build_posterior_input(x: &[f64], r: u8, prior_row: &[f64]) -> Vec<f64> {
    let zeros = vec![0.0; x.len()];
    let (first, second) = if r == 1 { (x, &zeros[..]) } else { (&zeros[..], x) };
    let mut out = Vec::with_capacity(2 * x.len() + prior_row.len());
    out.extend_from_slice(first);
    out.extend_from_slice(second);
    out.extend_from_slice(prior_row);
    out
}

/// Combined inputs for every step of a timeline.
pub fn posterior_inputs(model: &GenerativeModel, tl: &Timeline, responses: &[u8]) -> Result<Vec<Vec<f64>>> {
    if responses.len() != tl.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} responses for {} steps",
            responses.len(),
            tl.len()
        )));
    }
    let prior = model.prior_trajectory(tl);
    (0..tl.len())
        .map(|t| {
            let x = exercise_embedding(tl.problem(t), model.q, &model.theta.response)?;
            Ok(build_posterior_input(&x, responses[t], &prior[t]))
        })
        .collect()
}

/// Per-step readout logits `W_q h_t + b_q` on a tape.
pub fn posterior_logits_on_tape(
    tape: &Tape,
    phi: &PosteriorNetParams,
    prefix: &str,
    trainable: bool,
    inputs: &[Vec<f64>],
) -> Result<Vec<Var>> {
    let lstm = phi.lstm.bind(tape, &join(prefix, "lstm"), trainable)?;
    let out = phi.out.bind(tape, &join(prefix, "out"), trainable);
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant_vec(x.clone())).collect();
    let states = lstm_sequence_forward(tape, &lstm, &xs)?;
    states
        .iter()
        .map(|s| Ok(dense_forward(tape, &out, s.h)?))
        .collect()
}

pub fn posterior_forward(
    model: &GenerativeModel,
    phi: &PosteriorNetParams,
    tl: &Timeline,
    responses: &[u8],
) -> Result<PosteriorOutput> {
    if tl.is_empty() {
        return Ok(PosteriorOutput { q: Vec::new() });
    }
    let inputs = posterior_inputs(model, tl, responses)?;
    let tape = Tape::new();
    let logits = posterior_logits_on_tape(&tape, phi, "", false, &inputs)?;
    Ok(PosteriorOutput {
        q: logits
            .iter()
            .map(|&l| tape.value(tape.sigmoid(l)))
            .collect(),
    })
}

/// Independent Bernoulli draw per step and concept.
pub fn sample_latents(out: &PosteriorOutput, seed: u64) -> LatentPath {
    let mut rng = rng::rng(seed);
    LatentPath {
        u: out
            .q
            .iter()
            .map(|row| row.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect())
            .collect(),
    }
}

/// `Σ_{t,k}` binary cross-entropy of the posterior readout against `u`.
pub fn path_cross_entropy_on_tape(tape: &Tape, logits: &[Var], path: &LatentPath) -> Var {
    let terms: Vec<Var> = logits
        .iter()
        .zip(&path.u)
        .map(|(&l, u)| {
            let signs: Vec<f64> = u.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect();
            let ll = tape.sum(tape.log_sigmoid(tape.mul_const(l, &signs)));
            tape.neg(ll)
        })
        .collect();
    tape.add_all(&terms)
}

/// Mean over samples of the per-sample cross-entropy, with `q` computed from
/// the sampled responses. Embeddings and priors enter as constants.
pub fn sleep_loss_on_tape(
    tape: &Tape,
    model: &GenerativeModel,
    phi: &PosteriorNetParams,
    prefix: &str,
    batch: &[(&Timeline, &JointSample)],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut terms = Vec::with_capacity(batch.len());
    for (tl, sample) in batch {
        let inputs = posterior_inputs(model, tl, &sample.responses)?;
        let logits = posterior_logits_on_tape(tape, phi, prefix, true, &inputs)?;
        terms.push(path_cross_entropy_on_tape(tape, &logits, &sample.path));
    }
    Ok(tape.scale(tape.add_all(&terms), 1.0 / batch.len() as f64))
}

pub fn sleep_loss(
    model: &GenerativeModel,
    phi: &PosteriorNetParams,
    batch: &[(&Timeline, &JointSample)],
) -> Result<f64> {
    let tape = Tape::new();
    let loss = sleep_loss_on_tape(&tape, model, phi, "", batch)?;
    Ok(tape.item(loss))
}
