//! Classification and regression metrics, and a two-component PCA.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("AUC needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("no scores to evaluate")]
    EmptyInput,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("PCA needs at least 2 vectors of dimension >= 2 with equal lengths")]
    BadPcaInput,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from the rank-sum statistic with midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * midrank;
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub rmse: f64,
    pub mae: f64,
    /// No score reached the threshold, so precision was reported as 0.
    pub precision_undefined: bool,
}

/// Accuracy, precision and recall of `score >= threshold`, and RMSE/MAE of
/// the raw scores. Recall with no positive labels is reported as 0.
pub fn threshold_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ThresholdMetrics, MetricsError> {
    check_lengths(scores, labels)?;
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    let (mut se, mut ae) = (0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        let predicted = s >= threshold;
        let actual = l == 1;
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if predicted == actual {
            correct += 1;
        }
        let err = s - f64::from(l);
        se += err * err;
        ae += err.abs();
    }
    let n = scores.len() as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ThresholdMetrics {
        acc: correct as f64 / n,
        pre: ratio(tp, tp + fp),
        rec: ratio(tp, tp + fneg),
        rmse: (se / n).sqrt(),
        mae: ae / n,
        precision_undefined: tp + fp == 0,
    })
}

/// The six reported metrics for one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub auc: f64,
    pub acc: f64,
    pub pre: f64,
    pub rec: f64,
    pub rmse: f64,
    pub mae: f64,
}

impl MetricRow {
    pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<Self, MetricsError> {
        let t = threshold_metrics(scores, labels, 0.5)?;
        Ok(MetricRow {
            auc: auc(scores, labels)?,
            acc: t.acc,
            pre: t.pre,
            rec: t.rec,
            rmse: t.rmse,
            mae: t.mae,
        })
    }

    pub fn mean(rows: &[MetricRow]) -> Option<MetricRow> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(MetricRow {
            auc: avg(|r| r.auc),
            acc: avg(|r| r.acc),
            pre: avg(|r| r.pre),
            rec: avg(|r| r.rec),
            rmse: avg(|r| r.rmse),
            mae: avg(|r| r.mae),
        })
    }
}

/// Writes `fold,auc,acc,pre,rec,rmse,mae` rows; `label` fills the fold column.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[(String, MetricRow)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fold", "auc", "acc", "pre", "rec", "rmse", "mae"])?;
    for (label, r) in rows {
        w.write_record([
            label.clone(),
            r.auc.to_string(),
            r.acc.to_string(),
            r.pre.to_string(),
            r.rec.to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    /// Unit principal directions, by decreasing eigenvalue.
    pub components: [Vec<f64>; 2],
    /// Eigenvalues of the sample covariance for the two components.
    pub explained: [f64; 2],
    pub mean: Vec<f64>,
    /// The centered data has rank below 2; the second coordinate is zero.
    pub rank_deficient: bool,
}

impl Projection {
    pub fn project(&self, v: &[f64]) -> [f64; 2] {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        [dot(&centered, &self.components[0]), dot(&centered, &self.components[1])]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Dominant eigenpair of a symmetric positive semi-definite matrix.
fn power_iteration(m: &[Vec<f64>], seed: u64) -> (f64, Vec<f64>) {
    let d = m.len();
    let mut r = rng::rng(seed);
    let mut v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    normalize(&mut v);
    for _ in 0..PCA_MAX_ITERS {
        let mut next = matvec(m, &v);
        if normalize(&mut next) == 0.0 {
            return (0.0, v);
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < PCA_TOLERANCE {
            break;
        }
    }
    let lambda = dot(&v, &matvec(m, &v));
    (lambda, v)
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Projects mean-centered vectors onto their top two principal directions,
/// found by power iteration with deflation.
pub fn pca_project(vectors: &[Vec<f64>]) -> Result<Projection, MetricsError> {
    let n = vectors.len();
    let d = vectors.first().map_or(0, Vec::len);
    if n < 2 || d < 2 || vectors.iter().any(|v| v.len() != d) {
        return Err(MetricsError::BadPcaInput);
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for c in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j] / (n - 1) as f64;
            }
        }
    }
    let scale = (0..d).map(|i| cov[i][i]).sum::<f64>();

    let (l1, mut v1) = power_iteration(&cov, 1);
    fix_sign(&mut v1);
    for i in 0..d {
        for j in 0..d {
            cov[i][j] -= l1 * v1[i] * v1[j];
        }
    }
    let (mut l2, mut v2) = power_iteration(&cov, 2);
    let rank_deficient = !(l2 > 1e-12 * scale.max(f64::MIN_POSITIVE)) || l1 <= 0.0;
    if rank_deficient {
        l2 = 0.0;
        v2 = vec![0.0; d];
    } else {
        // remove any drift back toward the first direction
        let overlap = dot(&v2, &v1);
        for (a, b) in v2.iter_mut().zip(&v1) {
            *a -= overlap * b;
        }
        normalize(&mut v2);
        fix_sign(&mut v2);
    }
    let coords = centered
        .iter()
        .map(|c| [dot(c, &v1), if rank_deficient { 0.0 } else { dot(c, &v2) }])
        .collect();
    Ok(Projection {
        coords,
        components: [v1, v2],
        explained: [l1, l2],
        mean,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.4, 0.3], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.5, 0.6], &[1, 1]), Err(MetricsError::DegenerateLabels));
    }

    #[test]
    fn threshold_examples() {
        let m = threshold_metrics(&[1.0, 0.0, 1.0], &[1, 0, 1], 0.5).unwrap();
        assert_eq!((m.acc, m.rmse, m.mae), (1.0, 0.0, 0.0));
        let m = threshold_metrics(&[0.6, 0.4], &[1, 0], 0.5).unwrap();
        assert_eq!((m.acc, m.pre, m.rec), (1.0, 1.0, 1.0));
        let m = threshold_metrics(&[0.6, 0.6], &[1, 0], 0.5).unwrap();
        assert_eq!((m.rec, m.pre), (1.0, 0.5));
        let m = threshold_metrics(&[0.1, 0.2], &[1, 0], 0.5).unwrap();
        assert!(m.precision_undefined && m.pre == 0.0);
        assert_eq!(threshold_metrics(&[], &[], 0.5), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn pca_on_a_line() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| {
            let t = i as f64;
            vec![t, 2.0 * t, -t]
        }).collect();
        let p = pca_project(&pts).unwrap();
        assert!(p.rank_deficient);
        assert!(p.coords.iter().all(|c| c[1].abs() <= 1e-8));
    }

    #[test]
    fn pca_sign_convention() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 1.0], vec![-3.0, -1.0], vec![1.0, -2.0]];
        let p = pca_project(&pts).unwrap();
        for c in &p.components {
            let big = c.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(big > 0.0);
        }
        assert!(p.explained[0] >= p.explained[1]);
    }
}
