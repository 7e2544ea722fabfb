//! Per-concept learning and forgetting hazards and the two-state mastery
//! chain they drive.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataset::QMatrix;
use crate::error::{check_index, ModelError, Result};
use crate::kernel::params::{join, Decay, ParamSet};
use crate::kernel::{bind_array, sigmoid, Array, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    /// Initial mastery logits, `π_k = σ(pi_logit[k])`.
    pub pi_logit: Array,
    /// `ln θ_f`, forgetting time scale in seconds.
    pub log_theta_f: Array,
    pub b_f: Array,
    pub theta_l1: Array,
    /// `ln θ_l2`, learning half-saturation count.
    pub log_theta_l2: Array,
    pub b_l: Array,
}

/// Hazard inputs for one step: elapsed seconds and windowed practice counts.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInputs {
    pub dtau: Vec<f64>,
    pub freq: Vec<f64>,
}

/// Transition matrix with state order (1, 0): row 0 is "previously
/// mastered", row 1 is "previously not mastered".
pub type Transition = [[f64; 2]; 2];

#[derive(Clone, Copy, Debug)]
pub struct TemporalVars {
    pub pi_logit: Var,
    pub log_theta_f: Var,
    pub b_f: Var,
    pub theta_l1: Var,
    pub log_theta_l2: Var,
    pub b_l: Var,
}

impl TemporalParams {
    pub fn zeros(concepts: usize) -> Self {
        let z = || Array::zeros(&[concepts]);
        TemporalParams {
            pi_logit: z(),
            log_theta_f: z(),
            b_f: z(),
            theta_l1: z(),
            log_theta_l2: z(),
            b_l: z(),
        }
    }

    /// Starting point for training: even initial mastery, forgetting on the
    /// scale of `delta_hat`, weak learning and forgetting biases.
    pub fn init(concepts: usize, delta_hat: f64) -> Self {
        let c = |v: f64| Array::filled(&[concepts], v);
        TemporalParams {
            pi_logit: c(0.0),
            log_theta_f: c(delta_hat.ln()),
            b_f: c(-2.0),
            theta_l1: c(1.0),
            log_theta_l2: c(0.0),
            b_l: c(-2.0),
        }
    }

    pub fn concepts(&self) -> usize {
        self.pi_logit.len()
    }

    pub fn initial_mastery(&self) -> Vec<f64> {
        self.pi_logit.data().iter().map(|&x| sigmoid(x)).collect()
    }

    fn forgetting_logit(&self, k: usize, dtau: f64) -> f64 {
        dtau / self.log_theta_f.data()[k].exp() + self.b_f.data()[k]
    }

    fn learning_logit(&self, k: usize, f: f64) -> f64 {
        let theta_l2 = self.log_theta_l2.data()[k].exp();
        self.theta_l1.data()[k] * f / (f + theta_l2) + self.b_l.data()[k]
    }

    /// `σ(Δτ / θ_f + b_f)`.
    pub fn forgetting_prob(&self, k: usize, dtau: f64) -> Result<f64> {
        check_index("concept", k, self.concepts())?;
        Ok(sigmoid(self.forgetting_logit(k, dtau)))
    }

    /// `σ(θ_l1 f / (f + θ_l2) + b_l)`.
    pub fn learning_prob(&self, k: usize, f: f64) -> Result<f64> {
        check_index("concept", k, self.concepts())?;
        Ok(sigmoid(self.learning_logit(k, f)))
    }

    /// `(pF_k, pL_k)` for every concept.
    pub fn hazards(&self, step: &StepInputs) -> Vec<(f64, f64)> {
        (0..self.concepts())
            .map(|k| {
                (
                    sigmoid(self.forgetting_logit(k, step.dtau[k])),
                    sigmoid(self.learning_logit(k, step.freq[k])),
                )
            })
            .collect()
    }

    pub fn transition_matrix(&self, k: usize, dtau: f64, f: f64) -> Result<Transition> {
        let pf = self.forgetting_prob(k, dtau)?;
        let pl = self.learning_prob(k, f)?;
        Ok(transition_from_hazards(pf, pl))
    }

    /// Prior mastery `p(u_k^t = 1)` for each step of a timeline.
    pub fn prior_propagate(&self, steps: &[StepInputs]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        for (t, step) in steps.iter().enumerate() {
            if t == 0 {
                out.push(self.initial_mastery());
                continue;
            }
            let next = push_forward(&out[t - 1], &self.hazards(step));
            out.push(next);
        }
        out
    }

    pub fn bind(&self, tape: &Tape, prefix: &str, trainable: bool) -> TemporalVars {
        let b = |name: &str, a: &Array| bind_array(tape, &join(prefix, name), a, trainable);
        TemporalVars {
            pi_logit: b("pi_logit", &self.pi_logit),
            log_theta_f: b("log_theta_f", &self.log_theta_f),
            b_f: b("b_f", &self.b_f),
            theta_l1: b("theta_l1", &self.theta_l1),
            log_theta_l2: b("log_theta_l2", &self.log_theta_l2),
            b_l: b("b_l", &self.b_l),
        }
    }
}

impl ParamSet for TemporalParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        f(&join(prefix, "pi_logit"), &self.pi_logit, Decay::Bias);
        f(&join(prefix, "log_theta_f"), &self.log_theta_f, Decay::Bias);
        f(&join(prefix, "b_f"), &self.b_f, Decay::Bias);
        f(&join(prefix, "theta_l1"), &self.theta_l1, Decay::Bias);
        f(&join(prefix, "log_theta_l2"), &self.log_theta_l2, Decay::Bias);
        f(&join(prefix, "b_l"), &self.b_l, Decay::Bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        f(&join(prefix, "pi_logit"), &mut self.pi_logit, Decay::Bias);
        f(&join(prefix, "log_theta_f"), &mut self.log_theta_f, Decay::Bias);
        f(&join(prefix, "b_f"), &mut self.b_f, Decay::Bias);
        f(&join(prefix, "theta_l1"), &mut self.theta_l1, Decay::Bias);
        f(&join(prefix, "log_theta_l2"), &mut self.log_theta_l2, Decay::Bias);
        f(&join(prefix, "b_l"), &mut self.b_l, Decay::Bias);
    }
}

pub fn transition_from_hazards(pf: f64, pl: f64) -> Transition {
    [[1.0 - pf, pf], [pl, 1.0 - pl]]
}

/// One-step push of independent per-concept mastery probabilities:
/// `p' = p (1 - pF) + (1 - p) pL`.
pub fn push_forward(p: &[f64], hazards: &[(f64, f64)]) -> Vec<f64> {
    p.iter()
        .zip(hazards)
        .map(|(&pk, &(pf, pl))| pk * (1.0 - pf) + (1.0 - pk) * pl)
        .collect()
}

/// Tracks when each concept was last practiced and how often it was
/// practiced inside the trailing window.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptClock {
    pub last_seen: Vec<Option<i64>>,
    pub window_counts: Vec<usize>,
    first_time: Option<i64>,
    last_time: Option<i64>,
    window: VecDeque<(i64, usize)>,
}

impl ConceptClock {
    pub fn new(concepts: usize) -> Self {
        ConceptClock {
            last_seen: vec![None; concepts],
            window_counts: vec![0; concepts],
            first_time: None,
            last_time: None,
            window: VecDeque::new(),
        }
    }

    /// Consumes the next record and returns the hazard inputs of its step.
    ///
    /// `Δτ_k` is measured from the last time concept k was practiced, or
    /// from the student's first record if it never was. `f_k` counts records
    /// in `(t - delta_hat, t]` that involve k, the current one included.
    pub fn advance(&mut self, time: i64, problem: usize, q: &QMatrix, delta_hat: f64, step: usize) -> Result<StepInputs> {
        check_index("problem", problem, q.problems())?;
        if self.last_time.is_some_and(|last| time < last) {
            return Err(ModelError::OutOfOrderRecord { step });
        }
        let first = *self.first_time.get_or_insert(time);
        self.last_time = Some(time);

        let dtau = self
            .last_seen
            .iter()
            .map(|seen| (time - seen.unwrap_or(first)) as f64)
            .collect();

        while let Some(&(t_old, p_old)) = self.window.front() {
            if (t_old as f64) > time as f64 - delta_hat {
                break;
            }
            for &k in q.concepts_of(p_old) {
                self.window_counts[k] -= 1;
            }
            self.window.pop_front();
        }
        self.window.push_back((time, problem));
        for &k in q.concepts_of(problem) {
            self.window_counts[k] += 1;
            self.last_seen[k] = Some(time);
        }
        let freq = self.window_counts.iter().map(|&c| c as f64).collect();
        Ok(StepInputs { dtau, freq })
    }
}

/// Functional form of [`ConceptClock::advance`].
pub fn clock_update(
    clock: &ConceptClock,
    time: i64,
    problem: usize,
    q: &QMatrix,
    delta_hat: f64,
) -> Result<(StepInputs, ConceptClock)> {
    let mut next = clock.clone();
    let inputs = next.advance(time, problem, q, delta_hat, 0)?;
    Ok((inputs, next))
}

/// Hazard inputs for every step of a `(time, problem)` sequence.
pub fn step_inputs(skeleton: &[(i64, usize)], q: &QMatrix, delta_hat: f64) -> Result<Vec<StepInputs>> {
    let mut clock = ConceptClock::new(q.concepts());
    skeleton
        .iter()
        .enumerate()
        .map(|(t, &(time, problem))| clock.advance(time, problem, q, delta_hat, t))
        .collect()
}

/// Logits `a_F`, `a_L` of the forgetting and learning hazards, on a tape.
pub fn hazard_logits_on_tape(tape: &Tape, v: &TemporalVars, step: &StepInputs) -> (Var, Var) {
    let inv_theta_f = tape.exp(tape.neg(v.log_theta_f));
    let a_f = tape.add(tape.mul_const(inv_theta_f, &step.dtau), v.b_f);
    let f = tape.constant_vec(step.freq.clone());
    let saturation = tape.div(f, tape.add(f, tape.exp(v.log_theta_l2)));
    let a_l = tape.add(tape.mul(v.theta_l1, saturation), v.b_l);
    (a_f, a_l)
}

/// `Σ_k ln p(u_k^t | u_k^{t-1})` on a tape.
pub fn log_transition_on_tape(tape: &Tape, v: &TemporalVars, step: &StepInputs, prev: &[u8], cur: &[u8]) -> Var {
    let (a_f, a_l) = hazard_logits_on_tape(tape, v, step);
    // ln σ(±a) selects ln pF, ln(1 - pF), ln pL or ln(1 - pL) per concept
    let mut sel_f = vec![0.0; prev.len()];
    let mut sel_l = vec![0.0; prev.len()];
    for k in 0..prev.len() {
        match (prev[k], cur[k]) {
            (1, 1) => sel_f[k] = -1.0,
            (1, _) => sel_f[k] = 1.0,
            (_, 1) => sel_l[k] = 1.0,
            _ => sel_l[k] = -1.0,
        }
    }
    let z = tape.add(tape.mul_const(a_f, &sel_f), tape.mul_const(a_l, &sel_l));
    tape.sum(tape.log_sigmoid(z))
}

/// `Σ_k ln p(u_k^1)` on a tape.
pub fn log_initial_on_tape(tape: &Tape, v: &TemporalVars, u: &[u8]) -> Var {
    let signs: Vec<f64> = u.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect();
    tape.sum(tape.log_sigmoid(tape.mul_const(v.pi_logit, &signs)))
}
