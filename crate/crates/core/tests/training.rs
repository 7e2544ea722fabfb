use ktrace_core::dataset::Corpus;
use ktrace_core::error::ModelError;
use ktrace_core::evaluate::{crossval_evaluate, mastery_trajectory, predict_corpus};
use ktrace_core::kernel::params::to_bundle;
use ktrace_core::synthetic::{planted_corpus, SampleConfig};
use ktrace_core::trainer::{
    load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig, TrainState, TrainingData,
};

fn corpus(students: usize, steps: usize, seed: u64) -> Corpus {
    let cfg = SampleConfig {
        students,
        steps,
        seed,
        ..SampleConfig::default()
    };
    planted_corpus(6, &cfg, 2).unwrap().0
}

fn small_config() -> TrainConfig {
    TrainConfig {
        d_e: 4,
        d_p: Some(6),
        iters: 2,
        lr: 0.02,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let c = corpus(8, 6, 1);
    let state = train(&c, &small_config()).unwrap();
    let ckpt = Checkpoint::from_state(&state, &c);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let again = Checkpoint::from_state(&loaded.to_state().unwrap(), &c);
    assert_eq!(again.to_json().unwrap(), ckpt.to_json().unwrap());
}

#[test]
fn tampered_version_is_rejected() {
    let c = corpus(4, 4, 2);
    let ckpt = Checkpoint::from_state(&train(&c, &TrainConfig { iters: 0, ..small_config() }).unwrap(), &c);
    let text = ckpt.to_json().unwrap().replacen("\"version\": 1", "\"version\": 99", 1);
    assert!(matches!(
        Checkpoint::from_json(&text),
        Err(ModelError::VersionMismatch { found: 99, expected: 1 })
    ));
    assert!(matches!(Checkpoint::from_json("{not json"), Err(ModelError::CorruptFile(_))));
}

#[test]
fn zero_iterations_give_the_initial_parameters() {
    let c = corpus(4, 4, 3);
    let config = TrainConfig { iters: 0, ..small_config() };
    let state = train(&c, &config).unwrap();
    let init = TrainState::init(&config, c.num_problems(), c.num_concepts()).unwrap();
    assert_eq!(state.theta, init.theta);
    assert_eq!(state.phi, init.phi);
    assert_eq!(state.predictor, init.predictor);
    assert!(state.history.is_empty());
}

#[test]
fn thread_count_does_not_change_results() {
    let c = corpus(10, 6, 4);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| Checkpoint::from_state(&train(&c, &small_config()).unwrap(), &c).to_json().unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn phases_update_only_their_own_parameters() {
    let c = corpus(6, 5, 5);
    let config = small_config();
    let mut state = TrainState::init(&config, c.num_problems(), c.num_concepts()).unwrap();
    let data = TrainingData::new(&c, &state.theta, config.delta_hat).unwrap();
    let batch: Vec<usize> = (0..6).collect();

    let before = state.clone();
    state.wake_step(&c.qmatrix, &data, &batch, 1).unwrap();
    assert_ne!(state.theta, before.theta);
    assert_eq!(state.phi, before.phi);
    assert_eq!(state.predictor, before.predictor);

    let before = state.clone();
    state.sleep_step(&c.qmatrix, &data, &batch, 2).unwrap();
    assert_eq!(state.theta, before.theta);
    assert_ne!(state.phi, before.phi);

    let before = state.clone();
    state.train_predictor(&c.qmatrix, &data, 1).unwrap();
    assert_eq!(state.theta, before.theta);
    assert_eq!(state.phi, before.phi);
    assert_ne!(to_bundle(&state.predictor, "p"), to_bundle(&before.predictor, "p"));
}

#[test]
fn non_finite_parameters_stop_training() {
    let c = corpus(4, 4, 6);
    let config = small_config();
    let mut state = TrainState::init(&config, c.num_problems(), c.num_concepts()).unwrap();
    state.theta.response.mu.data_mut()[0] = f64::NAN;
    let data = TrainingData::new(&c, &state.theta, config.delta_hat).unwrap();
    assert!(matches!(
        state.iterate(&c.qmatrix, &data),
        Err(ModelError::NonFiniteLoss { phase: "wake", .. })
    ));
}

#[test]
fn predictions_ignore_later_records() {
    let c = corpus(3, 8, 7);
    let state = train(&c, &small_config()).unwrap();
    let full = mastery_trajectory(&state, &c.qmatrix, &c.sequences[0]).unwrap();
    let mut seq = c.sequences[0].clone();
    seq.records.truncate(5);
    let prefix = mastery_trajectory(&state, &c.qmatrix, &seq).unwrap();
    assert_eq!(&full.y_pred[..5], &prefix.y_pred[..]);
    assert_eq!(&full.posterior[..5], &prefix.posterior[..]);
    assert_eq!(&full.predicted[..5], &prefix.predicted[..]);
    for p in full.prior.iter().chain(&full.posterior).chain(&full.predicted).flatten() {
        assert!((0.0..=1.0).contains(p));
    }
    let rows = predict_corpus(&state, &c).unwrap();
    assert_eq!(rows.len(), c.num_records());
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.y_pred)));
}

#[test]
fn five_fold_crossval_is_deterministic() {
    let c = corpus(10, 6, 8);
    let config = TrainConfig { iters: 1, ..small_config() };
    let a = crossval_evaluate(&c, &config, 5).unwrap();
    assert_eq!(a.labeled_rows().len(), 6);
    assert!(a.folds.iter().all(|r| r.auc.is_nan() || (0.0..=1.0).contains(&r.auc)));
    assert_eq!(a, crossval_evaluate(&c, &config, 5).unwrap());
}
