//! Pairwise MLP heads over frozen embeddings: concept-relation and
//! concept-of-problem prediction.

use std::collections::HashSet;
use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, ModelError, Result};
use crate::kernel::params::{join, Decay, ParamSet};
use crate::kernel::{dense_forward, Array, DenseParams, DenseVars, Optimizer, Tape, Var};
use crate::metrics::{auc, threshold_metrics, MetricRow};
use crate::rng;

pub const HEAD_HIDDEN: usize = 30;

/// `σ(W_o tanh(W_h [a, b, a - b] + b_h) + b_o)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub hidden: DenseParams,
    pub out: DenseParams,
}

pub type RelationHeadParams = HeadParams;
pub type ConceptHeadParams = HeadParams;

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub hidden: DenseVars,
    pub out: DenseVars,
}

impl HeadParams {
    pub fn init(dim: usize, seed: u64) -> Self {
        HeadParams {
            hidden: DenseParams::glorot(HEAD_HIDDEN, 3 * dim, rng::derive_tag(seed, "hidden")),
            out: DenseParams::glorot(1, HEAD_HIDDEN, rng::derive_tag(seed, "out")),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        HeadParams {
            hidden: DenseParams::zeros(HEAD_HIDDEN, 3 * dim),
            out: DenseParams::zeros(1, HEAD_HIDDEN),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden.in_dim() / 3
    }

    pub fn bind(&self, tape: &Tape, prefix: &str, trainable: bool) -> HeadVars {
        HeadVars {
            hidden: self.hidden.bind(tape, &join(prefix, "hidden"), trainable),
            out: self.out.bind(tape, &join(prefix, "out"), trainable),
        }
    }

    /// Probability for one pair of embedding vectors.
    pub fn forward(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let tape = Tape::new();
        let v = self.bind(&tape, "", false);
        let logit = head_logit_on_tape(&tape, &v, a, b)?;
        Ok(tape.item(tape.sigmoid(logit)))
    }
}

impl ParamSet for HeadParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

/// `[a, b, a - b]`.
pub fn pair_features(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * a.len());
    x.extend_from_slice(a);
    x.extend_from_slice(b);
    x.extend(a.iter().zip(b).map(|(p, q)| p - q));
    x
}

pub fn head_logit_on_tape(tape: &Tape, v: &HeadVars, a: &[f64], b: &[f64]) -> Result<Var> {
    if a.len() != b.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "pair embeddings have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let x = tape.constant_vec(pair_features(a, b));
    let h = tape.tanh(dense_forward(tape, &v.hidden, x)?);
    let y = dense_forward(tape, &v.out, h)?;
    Ok(tape.index(y, 0))
}

/// Does concept `i` include concept `j`, from concept embeddings `e`.
pub fn relation_forward(i: usize, j: usize, e: &Array, head: &RelationHeadParams) -> Result<f64> {
    check_index("concept", i, e.rows())?;
    check_index("concept", j, e.rows())?;
    head.forward(e.row(i), e.row(j))
}

/// Does problem `p` involve concept `k`.
pub fn concept_forward(p: usize, k: usize, e_e: &Array, e_c: &Array, head: &ConceptHeadParams) -> Result<f64> {
    check_index("problem", p, e_e.rows())?;
    check_index("concept", k, e_c.rows())?;
    head.forward(e_e.row(p), e_c.row(k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub left: usize,
    pub right: usize,
    pub label: u8,
}

/// For each positive pair, draws `ratio` uniform pairs from
/// `left_size × right_size` that are not positive, labeled 0.
pub fn negative_sample(
    positives: &[(usize, usize)],
    left_size: usize,
    right_size: usize,
    ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let positive_set: HashSet<(usize, usize)> = positives.iter().copied().collect();
    if positives.is_empty() || ratio == 0 {
        return Ok(Vec::new());
    }
    if positive_set.len() >= left_size * right_size {
        return Err(ModelError::UniverseExhausted);
    }
    let mut r = rng::rng(rng::derive_tag(seed, "negatives"));
    let mut out = Vec::with_capacity(positives.len() * ratio);
    for _ in 0..positives.len() * ratio {
        loop {
            let pair = (r.random_range(0..left_size), r.random_range(0..right_size));
            if !positive_set.contains(&pair) {
                out.push(LabeledPair {
                    left: pair.0,
                    right: pair.1,
                    label: 0,
                });
                break;
            }
        }
    }
    Ok(out)
}

/// Positives labeled 1 followed by `ratio` sampled negatives per positive.
pub fn with_negatives(
    positives: &[(usize, usize)],
    left_size: usize,
    right_size: usize,
    ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let mut pairs: Vec<LabeledPair> = positives
        .iter()
        .map(|&(left, right)| LabeledPair { left, right, label: 1 })
        .collect();
    pairs.extend(negative_sample(positives, left_size, right_size, ratio, seed)?);
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
    /// Fraction of pairs used for training; the rest is held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            steps: 200,
            lr: 0.01,
            l2: 0.0,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// AUC is NaN when the evaluated pairs hold a single class.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadReport {
    pub head: HeadParams,
    pub train: MetricRow,
    pub test: Option<MetricRow>,
    pub losses: Vec<f64>,
}

/// Mean binary cross-entropy of the head over `pairs`.
pub fn head_loss_on_tape(
    tape: &Tape,
    head: &HeadParams,
    prefix: &str,
    pairs: &[LabeledPair],
    left: &Array,
    right: &Array,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let v = head.bind(tape, prefix, true);
    let mut terms = Vec::with_capacity(pairs.len());
    for p in pairs {
        check_index("left id", p.left, left.rows())?;
        check_index("right id", p.right, right.rows())?;
        let logit = head_logit_on_tape(tape, &v, left.row(p.left), right.row(p.right))?;
        let signed = if p.label == 1 { logit } else { tape.neg(logit) };
        terms.push(tape.neg(tape.log_sigmoid(signed)));
    }
    Ok(tape.scale(tape.add_all(&terms), 1.0 / pairs.len() as f64))
}

pub fn score_pairs(head: &HeadParams, pairs: &[LabeledPair], left: &Array, right: &Array) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            check_index("left id", p.left, left.rows())?;
            check_index("right id", p.right, right.rows())?;
            head.forward(left.row(p.left), right.row(p.right))
        })
        .collect()
}

pub fn pair_metrics(head: &HeadParams, pairs: &[LabeledPair], left: &Array, right: &Array) -> Result<MetricRow> {
    let scores = score_pairs(head, pairs, left, right)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let t = threshold_metrics(&scores, &labels, 0.5)?;
    Ok(MetricRow {
        auc: auc(&scores, &labels).unwrap_or(f64::NAN),
        acc: t.acc,
        pre: t.pre,
        rec: t.rec,
        rmse: t.rmse,
        mae: t.mae,
    })
}

/// Full-batch Adam on `pairs`; returns the head and the loss before each step.
pub fn fit_head(
    pairs: &[LabeledPair],
    left: &Array,
    right: &Array,
    init: HeadParams,
    cfg: &HeadTrainConfig,
) -> Result<(HeadParams, Vec<f64>)> {
    let mut head = init;
    let mut opt = Optimizer::adam(cfg.lr, cfg.l2);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let tape = Tape::new();
        let loss = head_loss_on_tape(&tape, &head, "head", pairs, left, right)?;
        let value = tape.item(loss);
        let grads = tape.backward(loss)?;
        if !value.is_finite() || !grads.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                phase: "head",
                iteration: step,
            });
        }
        losses.push(value);
        opt.step(&mut head, "head", &grads)?;
    }
    Ok((head, losses))
}

/// Shuffles the pairs, trains on the first `train_fraction` and reports
/// metrics on both parts. Embedding tables are only read.
pub fn train_head(
    pairs: &[LabeledPair],
    left: &Array,
    right: &Array,
    init: HeadParams,
    cfg: &HeadTrainConfig,
) -> Result<HeadReport> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut rng::rng(rng::derive_tag(cfg.seed, "head-split")));
    let n_train = ((pairs.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, pairs.len());
    let (train, test) = shuffled.split_at(n_train);
    let (head, losses) = fit_head(train, left, right, init, cfg)?;
    Ok(HeadReport {
        train: pair_metrics(&head, train, left, right)?,
        test: if test.is_empty() {
            None
        } else {
            Some(pair_metrics(&head, test, left, right)?)
        },
        head,
        losses,
    })
}

/// Held-out metrics of a freshly initialized head per fold.
pub fn crossval_head(
    pairs: &[LabeledPair],
    left: &Array,
    right: &Array,
    cfg: &HeadTrainConfig,
    n_folds: usize,
) -> Result<Vec<MetricRow>> {
    if n_folds < 2 || pairs.len() < n_folds {
        return Err(ModelError::ShapeMismatch(format!(
            "{} pairs cannot be split into {n_folds} folds",
            pairs.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng::rng(rng::derive_tag(cfg.seed, "head-folds")));
    let dim = left.cols();
    (0..n_folds)
        .map(|f| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (pos, &i) in order.iter().enumerate() {
                if pos % n_folds == f { test.push(pairs[i]) } else { train.push(pairs[i]) }
            }
            let init = HeadParams::init(dim, rng::derive(rng::derive_tag(cfg.seed, "head-init"), &[f as u64]));
            let (head, _) = fit_head(&train, left, right, init, cfg)?;
            pair_metrics(&head, &test, left, right)
        })
        .collect()
}

/// Reads `left_id,right_id,label` rows.
pub fn read_pairs<R: Read>(input: R) -> Result<Vec<(String, String, u8)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(["left_id", "right_id", "label"]) {
        return Err(ModelError::CorruptFile("pair file header must be left_id,right_id,label".into()));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let label = match row.get(2) {
            Some("0") => 0,
            Some("1") => 1,
            _ => {
                return Err(ModelError::CorruptFile(format!(
                    "bad label at line {}",
                    row.position().map_or(0, |p| p.line())
                )))
            }
        };
        out.push((row[0].to_string(), row[1].to_string(), label));
    }
    Ok(out)
}
