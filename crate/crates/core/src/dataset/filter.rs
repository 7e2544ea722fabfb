use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, IdMaps, StudentSequence};

/// Thresholds for [`filter_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_records: usize,
    /// Minimum fraction of a student's records with response 1.
    pub min_accept: f64,
    pub min_problem_records: usize,
    /// Repeat the student and problem passes until nothing changes.
    pub fixpoint: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_records: 30,
            min_accept: 0.10,
            min_problem_records: 30,
            fixpoint: false,
        }
    }
}

/// Drops sparse or low-acceptance students, then rarely attempted problems,
/// then re-densifies student and problem indices (concepts are kept).
pub fn filter_corpus(corpus: &Corpus, cfg: &FilterConfig) -> Result<Corpus, DatasetError> {
    let mut current = corpus.clone();
    loop {
        let next = filter_once(&current, cfg)?;
        if !cfg.fixpoint || next == current {
            return Ok(next);
        }
        current = next;
    }
}

fn filter_once(corpus: &Corpus, cfg: &FilterConfig) -> Result<Corpus, DatasetError> {
    let students: Vec<&StudentSequence> = corpus
        .sequences
        .iter()
        .filter(|s| s.len() >= cfg.min_records && s.acceptance_rate() >= cfg.min_accept)
        .collect();

    let mut problem_counts = vec![0usize; corpus.num_problems()];
    for s in &students {
        for r in &s.records {
            problem_counts[r.problem] += 1;
        }
    }

    // new problem index in first-appearance order over surviving records
    let mut remap: Vec<Option<usize>> = vec![None; corpus.num_problems()];
    let mut kept_problems = Vec::new();
    let mut sequences = Vec::new();
    let mut kept_students = Vec::new();
    for s in students {
        let mut records = Vec::new();
        for r in &s.records {
            if problem_counts[r.problem] < cfg.min_problem_records {
                continue;
            }
            let p = *remap[r.problem].get_or_insert_with(|| {
                kept_problems.push(r.problem);
                kept_problems.len() - 1
            });
            records.push(super::Interaction { problem: p, ..*r });
        }
        if !records.is_empty() {
            sequences.push(StudentSequence {
                student: sequences.len(),
                records,
            });
            kept_students.push(s.student);
        }
    }
    if sequences.is_empty() {
        return Err(DatasetError::EmptyAfterFilter);
    }
    let ids = IdMaps {
        students: kept_students
            .iter()
            .map(|&s| corpus.ids.students[s].clone())
            .collect(),
        problems: kept_problems
            .iter()
            .map(|&p| corpus.ids.problems[p].clone())
            .collect(),
        concepts: corpus.ids.concepts.clone(),
    };
    Ok(Corpus {
        sequences,
        qmatrix: corpus.qmatrix.select_rows(&kept_problems),
        ids,
    })
}
