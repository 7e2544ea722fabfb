//! Log-linear response model with student–problem (UE), problem–concept (EK)
//! and concept–concept (KK) interactions, wrapped in per-problem slip and
//! guess noise.

use serde::{Deserialize, Serialize};

use crate::dataset::QMatrix;
use crate::error::{check_index, ModelError, Result};
use crate::kernel::params::{join, Decay, ParamSet};
use crate::kernel::{bind_array, glorot_init, sigmoid, Array, Tape, Var};
use crate::rng;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseParams {
    /// Global bias, shape `[1]`.
    pub mu: Array,
    /// Problem biases `[M]`.
    pub w_e: Array,
    /// Concept biases `[K]`.
    pub w_c: Array,
    /// Problem embeddings `[M][d_e]`.
    pub e_e: Array,
    /// Concept embeddings `[K][d_e]`.
    pub e_c: Array,
    /// Slip logits `[M]`.
    pub theta_s: Array,
    /// Guess logits `[M]`.
    pub theta_g: Array,
}

/// Per-problem constants that make the logit affine in the mastery vector:
/// `logit(u) = base + Σ_k u_k · ue[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemTerms {
    pub base: f64,
    pub ue: Vec<f64>,
    pub p_slip: f64,
    pub p_guess: f64,
}

impl ProblemTerms {
    pub fn logit(&self, u: &[u8]) -> f64 {
        self.base
            + u.iter()
                .zip(&self.ue)
                .filter(|(&b, _)| b == 1)
                .map(|(_, v)| v)
                .sum::<f64>()
    }

    /// `p(r = 1)` given the noise-free success probability.
    pub fn noisy(&self, p_hat: f64) -> f64 {
        p_hat * (1.0 - self.p_slip) + (1.0 - p_hat) * self.p_guess
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ResponseVars {
    pub mu: Var,
    pub w_e: Var,
    pub w_c: Var,
    pub e_e: Var,
    pub e_c: Var,
    pub theta_s: Var,
    pub theta_g: Var,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ResponseParams {
    pub fn zeros(problems: usize, concepts: usize, d_e: usize) -> Self {
        ResponseParams {
            mu: Array::zeros(&[1]),
            w_e: Array::zeros(&[problems]),
            w_c: Array::zeros(&[concepts]),
            e_e: Array::zeros(&[problems, d_e]),
            e_c: Array::zeros(&[concepts, d_e]),
            theta_s: Array::zeros(&[problems]),
            theta_g: Array::zeros(&[problems]),
        }
    }

    /// Glorot-normal embeddings, zero biases, slip and guess logits at
    /// `noise_logit`.
    pub fn init(problems: usize, concepts: usize, d_e: usize, noise_logit: f64, seed: u64) -> Self {
        ResponseParams {
            e_e: glorot_init(&[problems, d_e], rng::derive_tag(seed, "e_e")),
            e_c: glorot_init(&[concepts, d_e], rng::derive_tag(seed, "e_c")),
            theta_s: Array::filled(&[problems], noise_logit),
            theta_g: Array::filled(&[problems], noise_logit),
            ..Self::zeros(problems, concepts, d_e)
        }
    }

    pub fn problems(&self) -> usize {
        self.w_e.len()
    }

    pub fn concepts(&self) -> usize {
        self.w_c.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.e_e.cols()
    }

    fn check(&self, problem: usize, q: &QMatrix) -> Result<()> {
        check_index("problem", problem, self.problems())?;
        if q.concepts() != self.concepts() || q.problems() != self.problems() {
            return Err(ModelError::ShapeMismatch(format!(
                "Q-matrix is {}x{}, parameters expect {}x{}",
                q.problems(),
                q.concepts(),
                self.problems(),
                self.concepts()
            )));
        }
        Ok(())
    }

    /// Log-odds of a noise-free correct answer, evaluated term by term:
    /// `μ + w_e[j] + Σ_k Q_jk w_c[k] + Σ_{k1,k2} Q_jk1 Q_jk2 ⟨E_c[k1],E_c[k2]⟩
    ///  + ⟨Σ_k u_k E_c[k], E_e[j]⟩ + Σ_k Q_jk ⟨E_e[j],E_c[k]⟩`.
    pub fn response_logit(&self, u: &[u8], problem: usize, q: &QMatrix) -> Result<f64> {
        self.check(problem, q)?;
        if u.len() != self.concepts() {
            return Err(ModelError::ShapeMismatch(format!(
                "mastery vector has {} entries, expected {}",
                u.len(),
                self.concepts()
            )));
        }
        let j = problem;
        let ee = self.e_e.row(j);
        let qrow = q.row(j);
        let mut logit = self.mu.item() + self.w_e.data()[j];
        for k in 0..self.concepts() {
            logit += f64::from(qrow[k]) * self.w_c.data()[k];
        }
        for k1 in 0..self.concepts() {
            for k2 in 0..self.concepts() {
                if qrow[k1] == 1 && qrow[k2] == 1 {
                    logit += dot(self.e_c.row(k1), self.e_c.row(k2));
                }
            }
        }
        let mut student = vec![0.0; self.embedding_dim()];
        for (k, &uk) in u.iter().enumerate() {
            if uk == 1 {
                for (s, e) in student.iter_mut().zip(self.e_c.row(k)) {
                    *s += e;
                }
            }
        }
        logit += dot(&student, ee);
        for k in 0..self.concepts() {
            if qrow[k] == 1 {
                logit += dot(ee, self.e_c.row(k));
            }
        }
        Ok(logit)
    }

    pub fn clean_response_prob(&self, u: &[u8], problem: usize, q: &QMatrix) -> Result<f64> {
        Ok(sigmoid(self.response_logit(u, problem, q)?))
    }

    /// `(σ(θ_s[j]), σ(θ_g[j]))`.
    pub fn slip_guess(&self, problem: usize) -> Result<(f64, f64)> {
        check_index("problem", problem, self.problems())?;
        Ok((
            sigmoid(self.theta_s.data()[problem]),
            sigmoid(self.theta_g.data()[problem]),
        ))
    }

    /// `p(r | u)` with slip and guess: `p1 = p̂(1 - p_slip) + (1 - p̂) p_guess`.
    pub fn observe_prob(&self, r: u8, u: &[u8], problem: usize, q: &QMatrix) -> Result<f64> {
        let p_hat = self.clean_response_prob(u, problem, q)?;
        let (p_slip, p_guess) = self.slip_guess(problem)?;
        let p1 = p_hat * (1.0 - p_slip) + (1.0 - p_hat) * p_guess;
        Ok(if r == 1 { p1 } else { 1.0 - p1 })
    }

    pub fn problem_terms(&self, problem: usize, q: &QMatrix) -> Result<ProblemTerms> {
        self.check(problem, q)?;
        let j = problem;
        let ee = self.e_e.row(j);
        let mut ehat = vec![0.0; self.embedding_dim()];
        let mut base = self.mu.item() + self.w_e.data()[j];
        for &k in q.concepts_of(j) {
            base += self.w_c.data()[k];
            for (h, e) in ehat.iter_mut().zip(self.e_c.row(k)) {
                *h += e;
            }
        }
        base += dot(&ehat, &ehat) + dot(ee, &ehat);
        let ue = (0..self.concepts())
            .map(|k| dot(self.e_c.row(k), ee))
            .collect();
        let (p_slip, p_guess) = self.slip_guess(j)?;
        Ok(ProblemTerms {
            base,
            ue,
            p_slip,
            p_guess,
        })
    }

    /// Concept-weighted embedding `Ê_j = Σ_k Q_jk E_c[k]`.
    pub fn concept_sum(&self, problem: usize, q: &QMatrix) -> Vec<f64> {
        let mut out = vec![0.0; self.embedding_dim()];
        for &k in q.concepts_of(problem) {
            for (o, e) in out.iter_mut().zip(self.e_c.row(k)) {
                *o += e;
            }
        }
        out
    }

    pub fn bind(&self, tape: &Tape, prefix: &str, trainable: bool) -> ResponseVars {
        let b = |name: &str, a: &Array| bind_array(tape, &join(prefix, name), a, trainable);
        ResponseVars {
            mu: b("mu", &self.mu),
            w_e: b("w_e", &self.w_e),
            w_c: b("w_c", &self.w_c),
            e_e: b("e_e", &self.e_e),
            e_c: b("e_c", &self.e_c),
            theta_s: b("theta_s", &self.theta_s),
            theta_g: b("theta_g", &self.theta_g),
        }
    }
}

impl ParamSet for ResponseParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        f(&join(prefix, "mu"), &self.mu, Decay::Bias);
        f(&join(prefix, "w_e"), &self.w_e, Decay::Bias);
        f(&join(prefix, "w_c"), &self.w_c, Decay::Bias);
        f(&join(prefix, "e_e"), &self.e_e, Decay::Weight);
        f(&join(prefix, "e_c"), &self.e_c, Decay::Weight);
        f(&join(prefix, "theta_s"), &self.theta_s, Decay::Bias);
        f(&join(prefix, "theta_g"), &self.theta_g, Decay::Bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        f(&join(prefix, "mu"), &mut self.mu, Decay::Bias);
        f(&join(prefix, "w_e"), &mut self.w_e, Decay::Bias);
        f(&join(prefix, "w_c"), &mut self.w_c, Decay::Bias);
        f(&join(prefix, "e_e"), &mut self.e_e, Decay::Weight);
        f(&join(prefix, "e_c"), &mut self.e_c, Decay::Weight);
        f(&join(prefix, "theta_s"), &mut self.theta_s, Decay::Bias);
        f(&join(prefix, "theta_g"), &mut self.theta_g, Decay::Bias);
    }
}

/// `ln p(r | u)` for one record, recorded on `tape`.
pub fn log_observe_on_tape(
    tape: &Tape,
    v: &ResponseVars,
    u: &[u8],
    r: u8,
    problem: usize,
    q: &QMatrix,
) -> Var {
    let qrow = tape.constant_vec(q.row_f64(problem));
    let mastery = tape.constant_vec(u.iter().map(|&b| f64::from(b)).collect());
    let ee = tape.row(v.e_e, problem);
    let ehat = tape.mat_t_vec(v.e_c, qrow);
    let student = tape.mat_t_vec(v.e_c, mastery);
    let terms = [
        v.mu,
        tape.index(v.w_e, problem),
        tape.dot(v.w_c, qrow),
        tape.dot(ehat, ehat),
        tape.dot(student, ee),
        tape.dot(ee, ehat),
    ];
    let logit = tape.add_all(&terms);
    let p_hat = tape.sigmoid(logit);
    let ps = tape.sigmoid(tape.index(v.theta_s, problem));
    let pg = tape.sigmoid(tape.index(v.theta_g, problem));
    let hit = tape.mul(p_hat, tape.one_minus(ps));
    let lucky = tape.mul(tape.one_minus(p_hat), pg);
    let p1 = tape.add(hit, lucky);
    let p = if r == 1 { p1 } else { tape.one_minus(p1) };
    tape.ln_clamped(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
}
