//! Held-out prediction, cross-validation and per-student mastery
//! trajectories.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{split_folds, Corpus, IdMaps, QMatrix, StudentSequence};
use crate::model::ModelTheta;
use crate::error::Result;
use crate::metrics::MetricRow;
use crate::predictor::{predict_sequence, predictor_features};
use crate::trainer::{train, TrainConfig, TrainState};

/// One response prediction; `step` counts from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub student: usize,
    pub step: usize,
    pub y_pred: f64,
    pub r_actual: u8,
}

/// Per-step mastery views for one student.
#[derive(Clone, Debug, PartialEq)]
pub struct MasteryTrajectory {
    pub times: Vec<i64>,
    pub problems: Vec<usize>,
    /// Prior `p(u^t)` before any response is seen.
    pub prior: Vec<Vec<f64>>,
    /// Posterior-network estimate after the step's response.
    pub posterior: Vec<Vec<f64>>,
    /// Forecast for the step from the previous posterior.
    pub predicted: Vec<Vec<f64>>,
    /// Predicted probability of a correct response at the step.
    pub y_pred: Vec<f64>,
}

pub fn mastery_trajectory(state: &TrainState, q: &QMatrix, seq: &StudentSequence) -> Result<MasteryTrajectory> {
    let model = state.model(q);
    let tl = model.sequence_timeline(seq)?;
    let responses = seq.responses();
    let feats = predictor_features(&model, &state.phi, &tl, &responses)?;
    Ok(MasteryTrajectory {
        times: tl.skeleton.times.clone(),
        problems: tl.skeleton.problems.clone(),
        prior: model.prior_trajectory(&tl),
        y_pred: predict_sequence(&state.predictor, &feats.inputs)?,
        posterior: feats.posterior,
        predicted: feats.forecast,
    })
}

/// Predictions for every step of every student.
pub fn predict_corpus(state: &TrainState, corpus: &Corpus) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::with_capacity(corpus.num_records());
    for seq in &corpus.sequences {
        let traj = mastery_trajectory(state, &corpus.qmatrix, seq)?;
        for (t, (y, rec)) in traj.y_pred.iter().zip(&seq.records).enumerate() {
            rows.push(PredictionRow {
                student: seq.student,
                step: t + 1,
                y_pred: *y,
                r_actual: rec.response,
            });
        }
    }
    Ok(rows)
}

/// Scores and labels from the second step of each sequence onward.
pub fn scored_steps(rows: &[PredictionRow]) -> (Vec<f64>, Vec<u8>) {
    rows.iter()
        .filter(|r| r.step >= 2)
        .map(|r| (r.y_pred, r.r_actual))
        .unzip()
}

pub fn evaluate_state(state: &TrainState, corpus: &Corpus) -> Result<MetricRow> {
    let (scores, labels) = scored_steps(&predict_corpus(state, corpus)?);
    Ok(MetricRow::evaluate(&scores, &labels)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossvalReport {
    pub folds: Vec<MetricRow>,
    pub mean: MetricRow,
}

impl CrossvalReport {
    /// Rows labeled `1..=n` followed by `mean`.
    pub fn labeled_rows(&self) -> Vec<(String, MetricRow)> {
        let mut rows: Vec<(String, MetricRow)> = self
            .folds
            .iter()
            .enumerate()
            .map(|(i, r)| ((i + 1).to_string(), *r))
            .collect();
        rows.push(("mean".into(), self.mean));
        rows
    }
}

/// Trains on each fold's training students and scores its test students.
pub fn crossval_evaluate(corpus: &Corpus, config: &TrainConfig, n_folds: usize) -> Result<CrossvalReport> {
    let split = split_folds(corpus, n_folds, config.seed)?;
    let mut folds = Vec::with_capacity(n_folds);
    for fold in &split.folds {
        let train_set: Vec<usize> = fold.train.iter().copied().collect();
        let test_set: Vec<usize> = fold.test.iter().copied().collect();
        let state = train(&corpus.subset(&train_set), config)?;
        folds.push(evaluate_state(&state, &corpus.subset(&test_set))?);
    }
    let mean = MetricRow::mean(&folds).expect("at least two folds");
    Ok(CrossvalReport { folds, mean })
}

pub fn write_predictions_csv<W: Write>(out: W, corpus: &Corpus, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "step", "y_pred", "r_actual"])?;
    for r in rows {
        w.write_record([
            corpus.ids.students[r.student].clone(),
            r.step.to_string(),
            r.y_pred.to_string(),
            r.r_actual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per step: `student_id,step,timestamp,problem_id,y_pred`, then
/// `prior_<c>`, `posterior_<c>` and `predicted_<c>` blocks over concepts.
pub fn write_trajectory_csv<W: Write>(out: W, student_id: &str, ids: &IdMaps, traj: &MasteryTrajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["student_id", "step", "timestamp", "problem_id", "y_pred"]
        .map(String::from)
        .to_vec();
    for block in ["prior", "posterior", "predicted"] {
        header.extend(ids.concepts.iter().map(|c| format!("{block}_{c}")));
    }
    w.write_record(&header)?;
    for t in 0..traj.times.len() {
        let mut row = vec![
            student_id.to_string(),
            (t + 1).to_string(),
            traj.times[t].to_string(),
            ids.problems[traj.problems[t]].clone(),
            traj.y_pred[t].to_string(),
        ];
        for block in [&traj.prior, &traj.posterior, &traj.predicted] {
            row.extend(block[t].iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Student states `Σ_k q_k E_c[k]` for each step, plus every problem and
/// concept embedding: `kind,id,step,v0..v{d-1}` with an empty step for
/// problems and concepts.
pub fn write_embeddings_csv<W: Write>(
    out: W,
    student_id: &str,
    ids: &IdMaps,
    theta: &ModelTheta,
    traj: &MasteryTrajectory,
) -> Result<()> {
    let e_c = &theta.response.e_c;
    let e_e = &theta.response.e_e;
    let d = e_c.cols();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["kind", "id", "step"].map(String::from).to_vec();
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    let mut write = |kind: &str, id: &str, step: String, v: &[f64]| -> Result<()> {
        let mut row = vec![kind.to_string(), id.to_string(), step];
        row.extend(v.iter().map(f64::to_string));
        w.write_record(&row)?;
        Ok(())
    };
    for (t, q) in traj.posterior.iter().enumerate() {
        let mut state = vec![0.0; d];
        for (k, &qk) in q.iter().enumerate() {
            for (s, e) in state.iter_mut().zip(e_c.row(k)) {
                *s += qk * e;
            }
        }
        write("student", student_id, (t + 1).to_string(), &state)?;
    }
    for (j, id) in ids.problems.iter().enumerate() {
        write("problem", id, String::new(), e_e.row(j))?;
    }
    for (k, id) in ids.concepts.iter().enumerate() {
        write("concept", id, String::new(), e_c.row(k))?;
    }
    w.flush()?;
    Ok(())
}
