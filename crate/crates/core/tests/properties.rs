use proptest::prelude::*;

use ktrace_core::dataset::{
    filter_corpus, read_corpus, read_records, split_folds, write_corpus, write_records_csv, Corpus, FilterConfig,
    QMatrix,
};
use ktrace_core::generative::{GenerativeModel, Skeleton};
use ktrace_core::kernel::Array;
use ktrace_core::metrics::{auc, pca_project};
use ktrace_core::model::temporal::{push_forward, transition_from_hazards, StepInputs};
use ktrace_core::model::{ModelTheta, TemporalParams};
use ktrace_core::synthetic::{planted_corpus, SampleConfig};

fn arb_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

fn arb_bits(len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, len)
}

/// Response parameters for 2 problems over `k` concepts, embedding dim 2.
fn arb_theta(k: usize) -> impl Strategy<Value = ModelTheta> {
    (
        arb_vec(1, -5.0, 5.0),
        arb_vec(2, -5.0, 5.0),
        arb_vec(k, -5.0, 5.0),
        arb_vec(4, -2.0, 2.0),
        arb_vec(2 * k, -2.0, 2.0),
        arb_vec(4, -8.0, 8.0),
        arb_vec(6 * k, -5.0, 5.0),
    )
        .prop_map(move |(mu, w_e, w_c, e_e, e_c, noise, temporal)| {
            let mut theta = ModelTheta::zeros(2, k, 2);
            let r = &mut theta.response;
            r.mu = Array::vector(mu);
            r.w_e = Array::vector(w_e);
            r.w_c = Array::vector(w_c);
            r.e_e = Array::matrix(2, 2, e_e).unwrap();
            r.e_c = Array::matrix(k, 2, e_c).unwrap();
            r.theta_s = Array::vector(noise[..2].to_vec());
            r.theta_g = Array::vector(noise[2..].to_vec());
            let t = &mut theta.temporal;
            let part = |i: usize| Array::vector(temporal[i * k..(i + 1) * k].to_vec());
            t.pi_logit = part(0);
            t.log_theta_f = Array::vector(temporal[k..2 * k].iter().map(|x| x + 10.0).collect());
            t.b_f = part(2);
            t.theta_l1 = part(3);
            t.log_theta_l2 = part(4);
            t.b_l = part(5);
            theta
        })
}

fn two_problem_q(k: usize, rows: &[u8]) -> QMatrix {
    let mut q = QMatrix::zeros(2, k);
    for j in 0..2 {
        for c in 0..k {
            if rows[j * k + c] == 1 {
                q.set(j, c);
            }
        }
    }
    q
}

proptest! {
    #[test]
    fn observe_probabilities_sum_to_one(theta in arb_theta(3), rows in arb_bits(6), u in arb_bits(3), j in 0usize..2) {
        let q = two_problem_q(3, &rows);
        let p1 = theta.response.observe_prob(1, &u, j, &q).unwrap();
        let p0 = theta.response.observe_prob(0, &u, j, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p0));
        prop_assert!((p1 + p0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logit_is_additive_in_mastery(theta in arb_theta(3), rows in arb_bits(6), u in arb_bits(3), j in 0usize..2) {
        let q = two_problem_q(3, &rows);
        let terms = theta.response.problem_terms(j, &q).unwrap();
        let base = theta.response.response_logit(&[0, 0, 0], j, &q).unwrap();
        let full = theta.response.response_logit(&u, j, &q).unwrap();
        let expected: f64 = base + u.iter().zip(&terms.ue).map(|(&b, e)| f64::from(b) * e).sum::<f64>();
        prop_assert!((full - expected).abs() < 1e-10);
        prop_assert!((terms.logit(&u) - full).abs() < 1e-10);
    }

    #[test]
    fn transitions_are_row_stochastic(pf in 0.0..=1.0f64, pl in 0.0..=1.0f64) {
        for row in transition_from_hazards(pf, pl) {
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn push_forward_stays_in_unit_interval(p in arb_vec(3, 0.0, 1.0), h in arb_vec(6, 0.0, 1.0)) {
        let hazards: Vec<(f64, f64)> = h.chunks(2).map(|c| (c[0], c[1])).collect();
        for x in push_forward(&p, &hazards) {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn prior_trajectory_is_a_probability(theta in arb_theta(2), rows in arb_bits(4), gaps in prop::collection::vec(0i64..500_000, 1..10)) {
        let q = two_problem_q(2, &rows);
        let model = GenerativeModel::new(&theta, &q, 86400.0);
        let mut t = 0;
        let times: Vec<i64> = gaps.iter().map(|g| { t += g; t }).collect();
        let problems = (0..times.len()).map(|i| i % 2).collect();
        let tl = model.timeline(&Skeleton { times, problems }).unwrap();
        for x in model.prior_trajectory(&tl).iter().flatten() {
            prop_assert!((0.0..=1.0).contains(x));
        }
    }

    #[test]
    fn hazards_are_monotone(b_f in -5.0..5.0f64, log_f in 5.0..15.0f64, l1 in 0.0..5.0f64, l2 in -2.0..2.0f64, b_l in -5.0..5.0f64,
                            d1 in 0.0..1e6f64, d2 in 0.0..1e6f64, f1 in 0u32..40, f2 in 0u32..40) {
        let mut t = TemporalParams::zeros(1);
        t.b_f = Array::vector(vec![b_f]);
        t.log_theta_f = Array::vector(vec![log_f]);
        t.theta_l1 = Array::vector(vec![l1]);
        t.log_theta_l2 = Array::vector(vec![l2]);
        t.b_l = Array::vector(vec![b_l]);
        let (dlo, dhi) = (d1.min(d2), d1.max(d2));
        let (flo, fhi) = (f64::from(f1.min(f2)), f64::from(f1.max(f2)));
        prop_assert!(t.forgetting_prob(0, dlo).unwrap() <= t.forgetting_prob(0, dhi).unwrap());
        prop_assert!(t.learning_prob(0, flo).unwrap() <= t.learning_prob(0, fhi).unwrap());
        let h = t.hazards(&StepInputs { dtau: vec![dlo], freq: vec![flo] });
        prop_assert_eq!(h[0], (t.forgetting_prob(0, dlo).unwrap(), t.learning_prob(0, flo).unwrap()));
    }

    #[test]
    fn exact_filter_is_normalized(theta in arb_theta(2), rows in arb_bits(4), resp in arb_bits(5)) {
        let q = two_problem_q(2, &rows);
        let model = GenerativeModel::new(&theta, &q, 86400.0);
        let sk = Skeleton { times: (0..5).map(|i| i * 7200).collect(), problems: vec![0, 1, 0, 0, 1] };
        let tl = model.timeline(&sk).unwrap();
        let fwd = model.exact_forward(&tl, &resp).unwrap();
        prop_assert!(fwd.loglik <= 1e-12);
        for x in fwd.filtered.iter().flatten() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(x));
        }
    }

    #[test]
    fn auc_ignores_monotone_transforms(scores in arb_vec(12, 0.0, 1.0), labels in arb_bits(12)) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let a = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s - 1.0).exp()).collect();
        prop_assert!((auc(&squashed, &labels).unwrap() - a).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn pca_matches_closed_form_in_two_dimensions(points in prop::collection::vec(arb_vec(2, -5.0, 5.0), 3..20)) {
        let n = points.len() as f64;
        let mean = [0, 1].map(|i| points.iter().map(|p| p[i]).sum::<f64>() / n);
        let cov = |i: usize, j: usize| points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / (n - 1.0);
        let (a, b, c) = (cov(0, 0), cov(0, 1), cov(1, 1));
        // roots of the characteristic polynomial λ² - (a + c)λ + (ac - b²)
        let disc = ((a - c) * (a - c) / 4.0 + b * b).sqrt();
        let (l1, l2) = ((a + c) / 2.0 + disc, (a + c) / 2.0 - disc);
        prop_assume!(l1 - l2 > 1e-3 * l1 && l2 > 1e-6);
        let proj = pca_project(&points).unwrap();
        prop_assert!((proj.explained[0] - l1).abs() < 1e-6 * l1);
        prop_assert!((proj.explained[1] - l2).abs() < 1e-6 * l1);
    }

    #[test]
    fn pca_explained_variance_is_rotation_invariant(points in prop::collection::vec(arb_vec(3, -5.0, 5.0), 4..15), angle in 0.0..std::f64::consts::TAU) {
        let (s, c) = angle.sin_cos();
        let rotated: Vec<Vec<f64>> = points.iter().map(|p| vec![c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]).collect();
        let (a, b) = (pca_project(&points).unwrap(), pca_project(&rotated).unwrap());
        prop_assume!(a.explained[0] - a.explained[1] > 1e-3 && !a.rank_deficient);
        for i in 0..2 {
            prop_assert!((a.explained[i] - b.explained[i]).abs() < 1e-6 * (1.0 + a.explained[0]));
        }
    }

    #[test]
    fn folds_partition_students(students in 5usize..30, n_folds in 2usize..6, seed in any::<u64>()) {
        prop_assume!(students >= n_folds);
        let corpus = small_corpus(students, 3, 1);
        let split = split_folds(&corpus, n_folds, seed).unwrap();
        let mut seen = vec![0; students];
        for fold in &split.folds {
            prop_assert!(fold.train.is_disjoint(&fold.test));
            prop_assert_eq!(fold.train.len() + fold.test.len(), students);
            for &s in &fold.test {
                seen[s] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(split, split_folds(&corpus, n_folds, seed).unwrap());
    }

    #[test]
    fn fixpoint_filter_is_idempotent(min_records in 1usize..8, min_problem in 1usize..12, seed in 0u64..50) {
        let mut corpus = small_corpus(12, 8, seed);
        // uneven lengths so the filter has something to drop
        for (i, s) in corpus.sequences.iter_mut().enumerate() {
            s.records.truncate(1 + i % 8);
        }
        let cfg = FilterConfig { min_records, min_accept: 0.1, min_problem_records: min_problem, fixpoint: true };
        if let Ok(once) = filter_corpus(&corpus, &cfg) {
            prop_assert_eq!(filter_corpus(&once, &cfg).unwrap(), once);
        }
    }
}

fn small_corpus(students: usize, steps: usize, seed: u64) -> Corpus {
    let cfg = SampleConfig {
        students,
        steps,
        seed,
        ..SampleConfig::default()
    };
    planted_corpus(6, &cfg, 2).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn corpus_archive_round_trips(seed in 0u64..1000) {
        let corpus = small_corpus(4, 6, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        write_corpus(&path, &corpus).unwrap();
        prop_assert_eq!(read_corpus(&path).unwrap(), corpus.clone());

        let mut csv = Vec::new();
        write_records_csv(&mut csv, &corpus.to_records()).unwrap();
        prop_assert_eq!(read_records(csv.as_slice()).unwrap(), corpus.to_records());
    }
}
