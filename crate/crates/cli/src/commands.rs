use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ktrace_core::dataset::{
    filter_corpus, infer_concepts, parse_qmatrix, parse_records, read_corpus, write_corpus, write_records_csv, Corpus,
    FilterConfig, IdMaps, Interaction, StudentSequence,
};
use ktrace_core::error::ModelError;
use ktrace_core::evaluate::{
    crossval_evaluate, evaluate_state, mastery_trajectory, write_embeddings_csv, write_trajectory_csv,
};
use ktrace_core::generative::ENUMERATION_LIMIT;
use ktrace_core::heads::{crossval_head, read_pairs, train_head, with_negatives, HeadParams, HeadTrainConfig, LabeledPair};
use ktrace_core::metrics::{write_metrics_csv, MetricRow};
use ktrace_core::rng;
use ktrace_core::synthetic::{oracle_check, sample_corpus, SampleConfig};
use ktrace_core::trainer::{load_checkpoint, save_checkpoint, train_with_progress, write_loss_csv, Checkpoint};

use crate::error::{CliError, Result};
use crate::plot;
use crate::{
    Cli, Command, EvaluateArgs, HeadKind, HeadsArgs, IngestArgs, OracleArgs, PlotArgs, PlotKind, PredictArgs,
    SampleArgs, TrainArgs,
};

/// Largest loglik or marginal difference `oracle-check` accepts.
pub const ORACLE_TOLERANCE: f64 = 1e-8;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a, cli.seed),
        Command::Evaluate(a) => evaluate(a, cli.seed),
        Command::Predict(a) => predict(a),
        Command::Sample(a) => sample(a, cli.seed),
        Command::OracleCheck(a) => oracle(a),
        Command::Plot(a) => plot_cmd(a),
        Command::Heads(a) => heads(a, cli.seed),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let records = parse_records(&a.records)?;
    let concepts = match a.concepts {
        Some(k) => k,
        None => infer_concepts(&a.qmatrix)?,
    };
    let q = parse_qmatrix(&a.qmatrix, concepts)?;
    let corpus = Corpus::assemble(&records, &q)?;
    let cfg = FilterConfig {
        min_records: a.min_records,
        min_accept: a.min_accept,
        min_problem_records: a.min_problem_records,
        fixpoint: a.fixpoint,
    };
    let filtered = filter_corpus(&corpus, &cfg)?;
    println!("students: {} -> {}", corpus.num_students(), filtered.num_students());
    println!("problems: {} -> {}", corpus.num_problems(), filtered.num_problems());
    println!("records: {} -> {}", corpus.num_records(), filtered.num_records());
    println!("concepts: {}", filtered.num_concepts());
    write_corpus(&a.out, &filtered)?;
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let corpus = read_corpus(path)?;
    if corpus.num_records() == 0 {
        return Err(CliError::Empty(format!("{} has no records", path.display())));
    }
    Ok(corpus)
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let config = a.model.config(seed);
    let every = (config.iters / 10).max(1);
    let state = train_with_progress(&corpus, &config, |r| {
        if r.iteration % every == 0 || r.iteration == config.iters {
            println!("iter {:>5}  wake {:.4}  sleep {:.4}", r.iteration, r.wake_loss, r.sleep_loss);
        }
    })?;
    if let Some(last) = state.predictor_history.last() {
        println!("predictor: {} epochs, final loss {last:.4}", state.predictor_history.len());
    }
    save_checkpoint(&Checkpoint::from_state(&state, &corpus), &a.out)?;
    let loss_path = a.loss_out.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_loss_csv(create(&loss_path)?, &state.history)?;
    println!("wrote {} and {}", a.out.display(), loss_path.display());
    Ok(())
}

/// Re-indexes problems of `corpus` into the checkpoint's problem ids and
/// adopts its Q-matrix.
fn align(corpus: Corpus, ckpt: &Checkpoint) -> Result<Corpus> {
    let mut map = Vec::with_capacity(corpus.num_problems());
    for id in &corpus.ids.problems {
        let j = ckpt
            .id_maps
            .problem_index(id)
            .ok_or_else(|| CliError::Usage(format!("problem {id:?} does not appear in the checkpoint")))?;
        map.push(j);
    }
    let sequences = corpus
        .sequences
        .into_iter()
        .map(|s| StudentSequence {
            student: s.student,
            records: s
                .records
                .into_iter()
                .map(|r| Interaction {
                    problem: map[r.problem],
                    ..r
                })
                .collect(),
        })
        .collect();
    Ok(Corpus {
        sequences,
        qmatrix: ckpt.qmatrix.clone(),
        ids: IdMaps {
            students: corpus.ids.students,
            problems: ckpt.id_maps.problems.clone(),
            concepts: ckpt.id_maps.concepts.clone(),
        },
    })
}

fn print_metrics(rows: &[(String, MetricRow)]) {
    println!("{:>6} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "fold", "auc", "acc", "pre", "rec", "rmse", "mae");
    for (label, r) in rows {
        println!(
            "{label:>6} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            r.auc, r.acc, r.pre, r.rec, r.rmse, r.mae
        );
    }
}

fn evaluate(a: &EvaluateArgs, seed: u64) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let rows = match (&a.ckpt, a.folds) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            let state = ckpt.to_state()?;
            let corpus = align(corpus, &ckpt)?;
            vec![("all".to_string(), evaluate_state(&state, &corpus)?)]
        }
        (None, Some(folds)) => crossval_evaluate(&corpus, &a.model.config(seed), folds)?.labeled_rows(),
        (None, None) => return Err(CliError::Usage("one of --ckpt or --folds is required".into())),
    };
    print_metrics(&rows);
    write_metrics_csv(create(&a.out)?, &rows)?;
    Ok(())
}

fn predict(a: &PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let state = ckpt.to_state()?;
    let corpus = align(load_corpus(&a.corpus)?, &ckpt)?;
    let index = corpus
        .ids
        .student_index(&a.student)
        .ok_or_else(|| ModelError::UnknownStudent(a.student.clone()))?;
    let seq = corpus
        .sequences
        .iter()
        .find(|s| s.student == index)
        .ok_or_else(|| ModelError::UnknownStudent(a.student.clone()))?;
    let traj = mastery_trajectory(&state, &corpus.qmatrix, seq)?;
    write_trajectory_csv(create(&a.out)?, &a.student, &corpus.ids, &traj)?;
    if let Some(path) = &a.embeddings_out {
        write_embeddings_csv(create(path)?, &a.student, &corpus.ids, &state.theta, &traj)?;
    }
    println!("{}: {} steps written to {}", a.student, traj.times.len(), a.out.display());
    Ok(())
}

fn sample(a: &SampleArgs, seed: u64) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let state = ckpt.to_state()?;
    let cfg = SampleConfig {
        students: a.students,
        steps: a.steps,
        min_gap: a.min_gap,
        max_gap: a.max_gap,
        delta_hat: ckpt.config.delta_hat,
        seed,
    };
    let corpus = sample_corpus(&state.theta, &ckpt.qmatrix, &ckpt.id_maps.problems, &cfg)?;
    let mut out = create(&a.out)?;
    write_records_csv(&mut out, &corpus.to_records())?;
    out.flush()?;
    println!("sampled {} students x {} steps", a.students, a.steps);
    Ok(())
}

fn oracle(a: &OracleArgs) -> Result<()> {
    if a.k == 0 || a.t == 0 || a.k * a.t > ENUMERATION_LIMIT {
        return Err(CliError::Usage(format!(
            "need k >= 1, t >= 1 and k*t <= {ENUMERATION_LIMIT}, got k={} t={}",
            a.k, a.t
        )));
    }
    let report = oracle_check(a.k, a.t, a.seeds)?;
    println!("instances: {}", report.instances);
    println!("max |loglik delta|: {:.3e}", report.max_loglik_delta);
    println!("max |marginal delta|: {:.3e}", report.max_marginal_delta);
    let worst = report.max_loglik_delta.max(report.max_marginal_delta);
    if !(worst <= ORACLE_TOLERANCE) {
        return Err(CliError::OracleMismatch(format!("{worst:.3e} exceeds {ORACLE_TOLERANCE:e}")));
    }
    println!("pass");
    Ok(())
}

fn plot_cmd(a: &PlotArgs) -> Result<()> {
    let input = File::open(&a.input)?;
    let svg = match a.kind {
        PlotKind::Mastery => plot::mastery_svg(input)?,
        PlotKind::Trajectory => plot::trajectory_svg(input)?,
    };
    let mut out = create(&a.out)?;
    out.write_all(svg.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn heads(a: &HeadsArgs, seed: u64) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let state = ckpt.to_state()?;
    let e_c = &state.theta.response.e_c;
    let (left_table, left_ids) = match a.kind {
        HeadKind::Relation => (e_c, &ckpt.id_maps.concepts),
        HeadKind::Concept => (&state.theta.response.e_e, &ckpt.id_maps.problems),
    };
    let right_ids = &ckpt.id_maps.concepts;
    let lookup = |ids: &[String], raw: &str| {
        ids.iter()
            .position(|x| x == raw)
            .ok_or_else(|| CliError::Usage(format!("id {raw:?} does not appear in the checkpoint")))
    };
    let raw = read_pairs(File::open(&a.pairs)?)?;
    if raw.is_empty() {
        return Err(CliError::Empty(format!("{} has no pairs", a.pairs.display())));
    }
    let mut pairs = Vec::with_capacity(raw.len());
    for (l, r, label) in &raw {
        pairs.push(LabeledPair {
            left: lookup(left_ids, l)?,
            right: lookup(right_ids, r)?,
            label: *label,
        });
    }
    if pairs.iter().all(|p| p.label == 1) {
        let positives: Vec<(usize, usize)> = pairs.iter().map(|p| (p.left, p.right)).collect();
        pairs = with_negatives(&positives, left_ids.len(), right_ids.len(), a.neg_ratio, rng::derive_tag(seed, "negatives"))?;
    }
    let cfg = HeadTrainConfig {
        steps: a.steps,
        lr: a.lr,
        seed,
        ..HeadTrainConfig::default()
    };
    let rows: Vec<(String, MetricRow)> = match a.folds {
        Some(folds) => crossval_head(&pairs, left_table, e_c, &cfg, folds)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| ((i + 1).to_string(), r))
            .collect(),
        None => {
            let init = HeadParams::init(e_c.cols(), rng::derive_tag(seed, "head"));
            let report = train_head(&pairs, left_table, e_c, init, &cfg)?;
            let mut rows = vec![("train".to_string(), report.train)];
            rows.extend(report.test.map(|t| ("test".to_string(), t)));
            rows
        }
    };
    print_metrics(&rows);
    write_metrics_csv(create(&a.out)?, &rows)?;
    Ok(())
}
