//! Corpora sampled from a known generative model.

use rand::Rng as _;

use crate::dataset::{Corpus, IdMaps, Interaction, QMatrix, StudentSequence};
use crate::error::{ModelError, Result};
use crate::generative::{GenerativeModel, Skeleton};
use crate::kernel::Array;
use crate::model::ModelTheta;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub students: usize,
    pub steps: usize,
    /// Gap between consecutive records, drawn uniformly from this range (seconds).
    pub min_gap: i64,
    pub max_gap: i64,
    pub delta_hat: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            students: 40,
            steps: 20,
            min_gap: 60,
            max_gap: 4 * 3600,
            delta_hat: crate::generative::DEFAULT_DELTA_HAT,
            seed: 0,
        }
    }
}

/// Draws skeletons (uniform problems, random gaps) and then latent paths and
/// responses by ancestral sampling from `theta`.
pub fn sample_corpus(theta: &ModelTheta, q: &QMatrix, problem_ids: &[String], cfg: &SampleConfig) -> Result<Corpus> {
    if cfg.students == 0 || cfg.steps == 0 || q.problems() == 0 {
        return Err(ModelError::EmptyInput);
    }
    if cfg.min_gap < 0 || cfg.max_gap < cfg.min_gap {
        return Err(ModelError::ShapeMismatch(format!(
            "gap range {}..={} is invalid",
            cfg.min_gap, cfg.max_gap
        )));
    }
    let model = GenerativeModel::new(theta, q, cfg.delta_hat);
    let mut sequences = Vec::with_capacity(cfg.students);
    for i in 0..cfg.students {
        let mut r = rng::rng(rng::derive(rng::derive_tag(cfg.seed, "skeleton"), &[i as u64]));
        let mut time = r.random_range(0..86400);
        let mut sk = Skeleton {
            times: Vec::with_capacity(cfg.steps),
            problems: Vec::with_capacity(cfg.steps),
        };
        for t in 0..cfg.steps {
            if t > 0 {
                time += r.random_range(cfg.min_gap..=cfg.max_gap);
            }
            sk.times.push(time);
            sk.problems.push(r.random_range(0..q.problems()));
        }
        let tl = model.timeline(&sk)?;
        let sample = model.ancestral_sample(&tl, rng::derive(rng::derive_tag(cfg.seed, "responses"), &[i as u64]))?;
        let records = (0..cfg.steps)
            .map(|t| Interaction {
                problem: sk.problems[t],
                time: sk.times[t],
                response: sample.responses[t],
            })
            .collect();
        sequences.push(StudentSequence { student: i, records });
    }
    let ids = IdMaps {
        students: (0..cfg.students).map(|i| format!("s{i}")).collect(),
        problems: problem_ids.to_vec(),
        concepts: (0..q.concepts()).map(|k| k.to_string()).collect(),
    };
    Ok(Corpus {
        sequences,
        qmatrix: q.clone(),
        ids,
    })
}

/// A model with strong, easily learned structure: each problem tests one or
/// two concepts, problem difficulty is spread out, and mastering a tested
/// concept raises the log-odds of success substantially.
pub fn planted_model(problems: usize, concepts: usize, seed: u64) -> (ModelTheta, QMatrix) {
    let mut r = rng::rng(rng::derive_tag(seed, "planted"));
    let lists: Vec<Vec<usize>> = (0..problems)
        .map(|j| {
            let k = j % concepts;
            if j >= 2 * concepts && concepts > 1 {
                vec![k, (k + 1) % concepts]
            } else {
                vec![k]
            }
        })
        .collect();
    let q = QMatrix::from_lists(concepts, &lists);

    let d_e = concepts;
    let mut theta = ModelTheta::zeros(problems, concepts, d_e);
    let mut e_c = Array::zeros(&[concepts, d_e]);
    for k in 0..concepts {
        e_c.data_mut()[k * d_e + k] = 1.5;
    }
    let mut e_e = Array::zeros(&[problems, d_e]);
    for j in 0..problems {
        for &k in q.concepts_of(j) {
            e_e.data_mut()[j * d_e + k] = 1.8;
        }
    }
    theta.response.e_c = e_c;
    theta.response.e_e = e_e;
    theta.response.theta_s = Array::filled(&[problems], -3.0);
    theta.response.theta_g = Array::filled(&[problems], -2.5);
    // choose w_e so the unmastered log-odds equal a planted difficulty
    let mut w_e = vec![0.0; problems];
    for (j, w) in w_e.iter_mut().enumerate() {
        let terms = theta.response.problem_terms(j, &q).expect("valid problem");
        let target = r.random_range(-3.0..0.5);
        *w = target - terms.base;
    }
    theta.response.w_e = Array::vector(w_e);

    let t = &mut theta.temporal;
    t.pi_logit = Array::vector((0..concepts).map(|_| r.random_range(-1.0..0.0)).collect());
    t.log_theta_f = Array::filled(&[concepts], (5.0f64 * 86400.0).ln());
    t.b_f = Array::filled(&[concepts], -4.0);
    t.theta_l1 = Array::filled(&[concepts], 3.0);
    t.log_theta_l2 = Array::filled(&[concepts], 0.0);
    t.b_l = Array::filled(&[concepts], -3.0);
    (theta, q)
}

/// Synthetic corpus sampled from [`planted_model`], with the planted
/// parameters (indexed like the corpus).
pub fn planted_corpus(problems: usize, cfg: &SampleConfig, concepts: usize) -> Result<(Corpus, ModelTheta)> {
    let (theta, q) = planted_model(problems, concepts, cfg.seed);
    let ids: Vec<String> = (0..problems).map(|j| format!("p{j}")).collect();
    let corpus = sample_corpus(&theta, &q, &ids, cfg)?;
    Ok((corpus, theta))
}

/// A random model, skeleton and response sequence with every term of the
/// model active; problems each test a non-empty concept subset.
pub fn random_instance(concepts: usize, steps: usize, seed: u64) -> (ModelTheta, QMatrix, Skeleton, Vec<u8>) {
    let mut r = rng::rng(rng::derive_tag(seed, "instance"));
    let problems = 5;
    let lists: Vec<Vec<usize>> = (0..problems)
        .map(|_| loop {
            let row: Vec<usize> = (0..concepts).filter(|_| r.random_bool(0.5)).collect();
            if !row.is_empty() {
                break row;
            }
        })
        .collect();
    let q = QMatrix::from_lists(concepts, &lists);
    let delta_hat = crate::generative::DEFAULT_DELTA_HAT;
    let mut theta = ModelTheta::init(problems, concepts, 3, delta_hat, r.random());
    let mut fill = |a: &mut Array, lo: f64, hi: f64| {
        for x in a.data_mut() {
            *x = r.random_range(lo..hi);
        }
    };
    let resp = &mut theta.response;
    fill(&mut resp.mu, -1.0, 1.0);
    fill(&mut resp.w_e, -1.0, 1.0);
    fill(&mut resp.w_c, -1.0, 1.0);
    fill(&mut resp.theta_s, -3.0, -0.5);
    fill(&mut resp.theta_g, -3.0, -0.5);
    let t = &mut theta.temporal;
    fill(&mut t.pi_logit, -2.0, 2.0);
    fill(&mut t.log_theta_f, 3600f64.ln(), (2.0 * delta_hat).ln());
    fill(&mut t.b_f, -3.0, 1.0);
    fill(&mut t.theta_l1, 0.0, 3.0);
    fill(&mut t.log_theta_l2, -1.0, 1.0);
    fill(&mut t.b_l, -3.0, 1.0);
    let mut time = r.random_range(0..86400);
    let mut sk = Skeleton {
        times: Vec::with_capacity(steps),
        problems: Vec::with_capacity(steps),
    };
    for i in 0..steps {
        if i > 0 {
            time += r.random_range(60..2 * 86400);
        }
        sk.times.push(time);
        sk.problems.push(r.random_range(0..problems));
    }
    let responses = (0..steps).map(|_| u8::from(r.random_bool(0.5))).collect();
    (theta, q, sk, responses)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    pub max_loglik_delta: f64,
    /// Over filtered and smoothed marginals.
    pub max_marginal_delta: f64,
}

/// Compares the exact forward pass with path enumeration on `seeds` random
/// instances of `concepts × steps` latent bits.
pub fn oracle_check(concepts: usize, steps: usize, seeds: u64) -> Result<OracleReport> {
    let bits = concepts * steps;
    if concepts == 0 || steps == 0 {
        return Err(ModelError::EmptyInput);
    }
    if bits > crate::generative::ENUMERATION_LIMIT {
        return Err(ModelError::TooLargeToEnumerate {
            bits,
            limit: crate::generative::ENUMERATION_LIMIT,
        });
    }
    let delta = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let mut report = OracleReport {
        instances: 0,
        max_loglik_delta: 0.0,
        max_marginal_delta: 0.0,
    };
    for seed in 0..seeds {
        let (theta, q, sk, resp) = random_instance(concepts, steps, seed);
        let model = GenerativeModel::new(&theta, &q, crate::generative::DEFAULT_DELTA_HAT);
        let tl = model.timeline(&sk)?;
        let fwd = model.exact_forward(&tl, &resp)?;
        let smoothed = model.exact_forward_backward(&tl, &resp)?;
        let (ll, brute) = model.brute_force_enumeration(&tl, &resp)?;
        report.max_loglik_delta = report.max_loglik_delta.max((fwd.loglik - ll).abs());
        report.max_marginal_delta = report.max_marginal_delta.max(delta(&smoothed, &brute));
        for t in 0..steps {
            let prefix = model.timeline(&sk.truncated(t + 1))?;
            let (_, m) = model.brute_force_enumeration(&prefix, &resp[..=t])?;
            report.max_marginal_delta = report.max_marginal_delta.max(delta(&fwd.filtered[t..=t], &m[t..=t]));
        }
        report.instances += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_corpus_is_valid_and_deterministic() {
        let cfg = SampleConfig {
            students: 5,
            steps: 7,
            seed: 3,
            ..SampleConfig::default()
        };
        let (a, _) = planted_corpus(12, &cfg, 3).unwrap();
        let (b, _) = planted_corpus(12, &cfg, 3).unwrap();
        a.validate().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_records(), 35);
    }

    #[test]
    fn oracle_check_passes_and_limits_size() {
        let r = oracle_check(2, 3, 5).unwrap();
        assert_eq!(r.instances, 5);
        assert!(r.max_loglik_delta < 1e-10 && r.max_marginal_delta < 1e-10);
        assert!(oracle_check(1, 6, 3).unwrap().max_loglik_delta < 1e-10);
        assert!(matches!(oracle_check(20, 2, 1), Err(ModelError::TooLargeToEnumerate { .. })));
    }

    #[test]
    fn mastery_raises_success() {
        let (theta, q) = planted_model(12, 3, 1);
        for j in 0..12 {
            let none = theta.response.clean_response_prob(&[0, 0, 0], j, &q).unwrap();
            let all = theta.response.clean_response_prob(&[1, 1, 1], j, &q).unwrap();
            assert!(all > none + 0.3, "problem {j}: {none} -> {all}");
        }
    }
}
