use ktrace_core::heads::{
    concept_forward, crossval_head, pair_metrics, train_head, with_negatives, HeadParams, HeadTrainConfig,
};
use ktrace_core::synthetic::planted_model;

#[test]
fn concept_head_beats_chance_on_planted_embeddings() {
    let (theta, q) = planted_model(24, 4, 3);
    let positives: Vec<(usize, usize)> = (0..24)
        .flat_map(|j| q.concepts_of(j).iter().map(move |&k| (j, k)))
        .collect();
    let pairs = with_negatives(&positives, 24, 4, 2, 9).unwrap();
    let (e_e, e_c) = (theta.response.e_e.clone(), theta.response.e_c.clone());
    let report = train_head(&pairs, &e_e, &e_c, HeadParams::init(4, 1), &HeadTrainConfig::default()).unwrap();
    let test = report.test.unwrap();
    assert!(test.auc > 0.5, "held-out AUC {}", test.auc);
    // embeddings are only read
    assert_eq!(theta.response.e_e, e_e);
    assert_eq!(theta.response.e_c, e_c);
    for j in 0..24 {
        for k in 0..4 {
            let p = concept_forward(j, k, &e_e, &e_c, &report.head).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }
}

#[test]
fn zero_steps_report_the_initial_head() {
    let (theta, q) = planted_model(8, 2, 1);
    let positives: Vec<(usize, usize)> = (0..8).map(|j| (j, q.concepts_of(j)[0])).collect();
    let pairs = with_negatives(&positives, 8, 2, 1, 2).unwrap();
    let (e_e, e_c) = (&theta.response.e_e, &theta.response.e_c);
    let init = HeadParams::init(2, 7);
    let cfg = HeadTrainConfig {
        steps: 0,
        train_fraction: 1.0,
        ..HeadTrainConfig::default()
    };
    let report = train_head(&pairs, e_e, e_c, init.clone(), &cfg).unwrap();
    assert_eq!(report.head, init);
    assert!(report.losses.is_empty());
    assert!(report.test.is_none());
    let direct = pair_metrics(&init, &pairs, e_e, e_c).unwrap();
    assert_eq!(report.train.acc, direct.acc);
    assert!((report.train.rmse - direct.rmse).abs() < 1e-12);
}

#[test]
fn head_crossval_is_deterministic() {
    let (theta, q) = planted_model(12, 3, 5);
    let positives: Vec<(usize, usize)> = (0..12).map(|j| (j, q.concepts_of(j)[0])).collect();
    let pairs = with_negatives(&positives, 12, 3, 2, 3).unwrap();
    let cfg = HeadTrainConfig {
        steps: 20,
        ..HeadTrainConfig::default()
    };
    let (e_e, e_c) = (&theta.response.e_e, &theta.response.e_c);
    let a = crossval_head(&pairs, e_e, e_c, &cfg, 5).unwrap();
    assert_eq!(a.len(), 5);
    let b = crossval_head(&pairs, e_e, e_c, &cfg, 5).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}
