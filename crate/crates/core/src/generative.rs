//! Joint distribution over mastery paths and responses, ancestral sampling
//! and exact inference on the joint `2^K` state space.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{QMatrix, StudentSequence};
use crate::error::{ModelError, Result};
use crate::kernel::{log_sigmoid, sigmoid, Tape, Var};
use crate::model::response::{clamp_prob, log_observe_on_tape};
use crate::model::temporal::{log_initial_on_tape, log_transition_on_tape, step_inputs};
use crate::model::{ModelTheta, ProblemTerms, StepInputs, ThetaVars};
use crate::rng;

pub const DEFAULT_K_MAX: usize = 15;
pub const DEFAULT_DELTA_HAT: f64 = 86400.0;
/// Largest `K·T` accepted by [`GenerativeModel::brute_force_enumeration`].
pub const ENUMERATION_LIMIT: usize = 22;

/// Times and problems of a sequence, without responses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub times: Vec<i64>,
    pub problems: Vec<usize>,
}

impl Skeleton {
    pub fn from_sequence(seq: &StudentSequence) -> Self {
        Skeleton {
            times: seq.records.iter().map(|r| r.time).collect(),
            problems: seq.records.iter().map(|r| r.problem).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn truncated(&self, len: usize) -> Self {
        Skeleton {
            times: self.times[..len].to_vec(),
            problems: self.problems[..len].to_vec(),
        }
    }
}

/// Binary mastery states `u[t][k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPath {
    pub u: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSample {
    pub path: LatentPath,
    pub responses: Vec<u8>,
}

/// A skeleton with its per-step hazard inputs resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    pub skeleton: Skeleton,
    pub steps: Vec<StepInputs>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn problem(&self, t: usize) -> usize {
        self.skeleton.problems[t]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub loglik: f64,
    /// `p(u_k^t = 1 | r_1..r_t)`.
    pub filtered: Vec<Vec<f64>>,
}

/// Read-only view of a generative model over one Q-matrix.
#[derive(Clone, Copy, Debug)]
pub struct GenerativeModel<'a> {
    pub theta: &'a ModelTheta,
    pub q: &'a QMatrix,
    pub delta_hat: f64,
    pub k_max: usize,
}

impl<'a> GenerativeModel<'a> {
    pub fn new(theta: &'a ModelTheta, q: &'a QMatrix, delta_hat: f64) -> Self {
        GenerativeModel {
            theta,
            q,
            delta_hat,
            k_max: DEFAULT_K_MAX,
        }
    }

    pub fn concepts(&self) -> usize {
        self.theta.concepts()
    }

    pub fn timeline(&self, skeleton: &Skeleton) -> Result<Timeline> {
        let pairs: Vec<(i64, usize)> = skeleton
            .times
            .iter()
            .copied()
            .zip(skeleton.problems.iter().copied())
            .collect();
        Ok(Timeline {
            skeleton: skeleton.clone(),
            steps: step_inputs(&pairs, self.q, self.delta_hat)?,
        })
    }

    pub fn sequence_timeline(&self, seq: &StudentSequence) -> Result<Timeline> {
        self.timeline(&Skeleton::from_sequence(seq))
    }

    pub fn prior_trajectory(&self, tl: &Timeline) -> Vec<Vec<f64>> {
        self.theta.temporal.prior_propagate(&tl.steps)
    }

    fn problem_terms(&self, tl: &Timeline) -> Result<Vec<ProblemTerms>> {
        (0..tl.len())
            .map(|t| self.theta.response.problem_terms(tl.problem(t), self.q))
            .collect()
    }

    fn check_responses(&self, tl: &Timeline, responses: &[u8]) -> Result<()> {
        if responses.len() != tl.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} responses for a timeline of {} steps",
                responses.len(),
                tl.len()
            )));
        }
        Ok(())
    }

    fn check_path(&self, tl: &Timeline, path: &LatentPath) -> Result<()> {
        let k = self.concepts();
        if path.u.len() != tl.len() || path.u.iter().any(|row| row.len() != k) {
            return Err(ModelError::ShapeMismatch(format!(
                "latent path must be {}x{}",
                tl.len(),
                k
            )));
        }
        Ok(())
    }

    /// `ln p(u, r)`: initial mastery, per-concept transitions for every step
    /// after the first, and one emission per step.
    pub fn joint_log_prob(&self, path: &LatentPath, responses: &[u8], tl: &Timeline) -> Result<f64> {
        self.check_path(tl, path)?;
        self.check_responses(tl, responses)?;
        let terms = self.problem_terms(tl)?;
        Ok(self.joint_log_prob_with(&terms, path, responses, tl))
    }

    fn joint_log_prob_with(&self, terms: &[ProblemTerms], path: &LatentPath, responses: &[u8], tl: &Timeline) -> f64 {
        let temporal = &self.theta.temporal;
        let mut total = 0.0;
        for (k, &uk) in path.u[0].iter().enumerate() {
            let a = temporal.pi_logit.data()[k];
            total += log_sigmoid(if uk == 1 { a } else { -a });
        }
        for t in 0..tl.len() {
            if t > 0 {
                for (k, (&prev, &cur)) in path.u[t - 1].iter().zip(&path.u[t]).enumerate() {
                    let (pf, pl) = (
                        temporal.forgetting_prob(k, tl.steps[t].dtau[k]).unwrap_or(0.0),
                        temporal.learning_prob(k, tl.steps[t].freq[k]).unwrap_or(0.0),
                    );
                    let p = match (prev, cur) {
                        (1, 1) => 1.0 - pf,
                        (1, _) => pf,
                        (_, 1) => pl,
                        _ => 1.0 - pl,
                    };
                    total += clamp_prob(p).ln();
                }
            }
            let p1 = terms[t].noisy(sigmoid(terms[t].logit(&path.u[t])));
            let p = if responses[t] == 1 { p1 } else { 1.0 - p1 };
            total += clamp_prob(p).ln();
        }
        total
    }

    /// Draws `u^1 ~ π`, then per-concept transitions, then a response per
    /// step. Deterministic given `seed`.
    pub fn ancestral_sample(&self, tl: &Timeline, seed: u64) -> Result<JointSample> {
        let terms = self.problem_terms(tl)?;
        let temporal = &self.theta.temporal;
        let mut rng = rng::rng(seed);
        let mut path = Vec::with_capacity(tl.len());
        let mut responses = Vec::with_capacity(tl.len());
        for t in 0..tl.len() {
            let u: Vec<u8> = if t == 0 {
                temporal
                    .initial_mastery()
                    .iter()
                    .map(|&p| u8::from(rng.random::<f64>() < p))
                    .collect()
            } else {
                let prev: &Vec<u8> = &path[t - 1];
                temporal
                    .hazards(&tl.steps[t])
                    .iter()
                    .zip(prev)
                    .map(|(&(pf, pl), &b)| {
                        let p_one = if b == 1 { 1.0 - pf } else { pl };
                        u8::from(rng.random::<f64>() < p_one)
                    })
                    .collect()
            };
            let p1 = terms[t].noisy(sigmoid(terms[t].logit(&u)));
            responses.push(u8::from(rng.random::<f64>() < p1));
            path.push(u);
        }
        Ok(JointSample {
            path: LatentPath { u: path },
            responses,
        })
    }

    fn check_k(&self) -> Result<usize> {
        let k = self.concepts();
        if k > self.k_max {
            return Err(ModelError::KTooLarge { k, k_max: self.k_max });
        }
        Ok(k)
    }

    /// Forward tables `α_t` (normalized) together with normalizers `c_t`.
    fn forward_tables(&self, tl: &Timeline, responses: &[u8]) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
        let k = self.check_k()?;
        self.check_responses(tl, responses)?;
        let terms = self.problem_terms(tl)?;
        let temporal = &self.theta.temporal;
        let mut alphas = Vec::with_capacity(tl.len());
        let mut norms = Vec::with_capacity(tl.len());
        let mut emissions = Vec::with_capacity(tl.len());
        let mut table = product_table(&temporal.initial_mastery());
        for t in 0..tl.len() {
            if t > 0 {
                contract_axes(&mut table, &temporal.hazards(&tl.steps[t]));
            }
            let e = emission_table(&terms[t], responses[t], k);
            let mut c = 0.0;
            for (a, &p) in table.iter_mut().zip(&e) {
                *a *= p;
                c += *a;
            }
            for a in table.iter_mut() {
                *a /= c;
            }
            alphas.push(table.clone());
            norms.push(c);
            emissions.push(e);
        }
        Ok((alphas, norms, emissions))
    }

    /// Exact log-likelihood and filtered marginals. Cost `O(T·K·2^K)`.
    pub fn exact_forward(&self, tl: &Timeline, responses: &[u8]) -> Result<ForwardPass> {
        let k = self.concepts();
        let (alphas, norms, _) = self.forward_tables(tl, responses)?;
        Ok(ForwardPass {
            loglik: norms.iter().map(|c| c.ln()).sum(),
            filtered: alphas.iter().map(|a| marginals(a, k)).collect(),
        })
    }

    /// Exact smoothed marginals `p(u_k^t = 1 | r_1..r_T)`.
    pub fn exact_forward_backward(&self, tl: &Timeline, responses: &[u8]) -> Result<Vec<Vec<f64>>> {
        let k = self.concepts();
        let (alphas, norms, emissions) = self.forward_tables(tl, responses)?;
        let n = tl.len();
        let temporal = &self.theta.temporal;
        let mut smoothed = vec![Vec::new(); n];
        let mut beta = vec![1.0; 1 << k];
        for t in (0..n).rev() {
            let mut gamma: Vec<f64> = alphas[t].iter().zip(&beta).map(|(a, b)| a * b).collect();
            let z: f64 = gamma.iter().sum();
            for g in gamma.iter_mut() {
                *g /= z;
            }
            smoothed[t] = marginals(&gamma, k);
            if t > 0 {
                let mut g: Vec<f64> = beta
                    .iter()
                    .zip(&emissions[t])
                    .map(|(b, e)| b * e / norms[t])
                    .collect();
                contract_axes_transposed(&mut g, &temporal.hazards(&tl.steps[t]));
                beta = g;
            }
        }
        Ok(smoothed)
    }

    /// Log-likelihood and smoothed marginals by summing over all `2^(K·T)`
    /// latent paths.
    pub fn brute_force_enumeration(&self, tl: &Timeline, responses: &[u8]) -> Result<(f64, Vec<Vec<f64>>)> {
        let k = self.concepts();
        let n = tl.len();
        let bits = k * n;
        if bits > ENUMERATION_LIMIT {
            return Err(ModelError::TooLargeToEnumerate {
                bits,
                limit: ENUMERATION_LIMIT,
            });
        }
        self.check_responses(tl, responses)?;
        let terms = self.problem_terms(tl)?;
        let count = 1usize << bits;
        let mut logs = Vec::with_capacity(count);
        let mut path = LatentPath {
            u: vec![vec![0u8; k]; n],
        };
        for idx in 0..count {
            fill_path(&mut path, idx, k);
            logs.push(self.joint_log_prob_with(&terms, &path, responses, tl));
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut weighted = vec![vec![0.0; k]; n];
        for (idx, &lp) in logs.iter().enumerate() {
            let w = (lp - max).exp();
            total += w;
            fill_path(&mut path, idx, k);
            for t in 0..n {
                for kk in 0..k {
                    if path.u[t][kk] == 1 {
                        weighted[t][kk] += w;
                    }
                }
            }
        }
        for row in weighted.iter_mut() {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok((max + total.ln(), weighted))
    }
}

fn fill_path(path: &mut LatentPath, idx: usize, k: usize) {
    for (t, row) in path.u.iter_mut().enumerate() {
        for (kk, b) in row.iter_mut().enumerate() {
            *b = ((idx >> (t * k + kk)) & 1) as u8;
        }
    }
}

/// Joint table of independent Bernoullis; bit k of the index is `u_k`.
fn product_table(p: &[f64]) -> Vec<f64> {
    let mut table = vec![1.0];
    for &pk in p {
        let mut next = Vec::with_capacity(table.len() * 2);
        next.extend(table.iter().map(|v| v * (1.0 - pk)));
        next.extend(table.iter().map(|v| v * pk));
        table = next;
    }
    table
}

/// Applies each concept's 2×2 transition along its own axis.
fn contract_axes(table: &mut [f64], hazards: &[(f64, f64)]) {
    for (k, &(pf, pl)) in hazards.iter().enumerate() {
        let bit = 1usize << k;
        for s in 0..table.len() {
            if s & bit == 0 {
                let (a0, a1) = (table[s], table[s | bit]);
                table[s | bit] = a1 * (1.0 - pf) + a0 * pl;
                table[s] = a1 * pf + a0 * (1.0 - pl);
            }
        }
    }
}

fn contract_axes_transposed(table: &mut [f64], hazards: &[(f64, f64)]) {
    for (k, &(pf, pl)) in hazards.iter().enumerate() {
        let bit = 1usize << k;
        for s in 0..table.len() {
            if s & bit == 0 {
                let (g0, g1) = (table[s], table[s | bit]);
                table[s | bit] = (1.0 - pf) * g1 + pf * g0;
                table[s] = pl * g1 + (1.0 - pl) * g0;
            }
        }
    }
}

fn emission_table(terms: &ProblemTerms, r: u8, k: usize) -> Vec<f64> {
    let n = 1usize << k;
    let mut logits = vec![terms.base; n];
    for s in 1..n {
        logits[s] = logits[s & (s - 1)] + terms.ue[s.trailing_zeros() as usize];
    }
    logits
        .into_iter()
        .map(|l| {
            let p1 = terms.noisy(sigmoid(l));
            clamp_prob(if r == 1 { p1 } else { 1.0 - p1 })
        })
        .collect()
}

fn marginals(table: &[f64], k: usize) -> Vec<f64> {
    (0..k)
        .map(|kk| {
            let bit = 1usize << kk;
            table
                .iter()
                .enumerate()
                .filter(|(s, _)| s & bit != 0)
                .map(|(_, v)| v)
                .sum::<f64>()
                .clamp(0.0, 1.0)
        })
        .collect()
}

/// `ln p(u, r)` recorded on a tape, differentiable in θ.
pub fn joint_log_prob_on_tape(
    tape: &Tape,
    v: &ThetaVars,
    q: &QMatrix,
    tl: &Timeline,
    path: &LatentPath,
    responses: &[u8],
) -> Var {
    let mut terms = Vec::with_capacity(2 * tl.len() + 1);
    terms.push(log_initial_on_tape(tape, &v.temporal, &path.u[0]));
    for t in 0..tl.len() {
        if t > 0 {
            terms.push(log_transition_on_tape(
                tape,
                &v.temporal,
                &tl.steps[t],
                &path.u[t - 1],
                &path.u[t],
            ));
        }
        terms.push(log_observe_on_tape(
            tape,
            &v.response,
            &path.u[t],
            responses[t],
            tl.problem(t),
            q,
        ));
    }
    tape.add_all(&terms)
}
