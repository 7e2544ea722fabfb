//! Exercise logs, the problem/concept Q-matrix, filtering and fold splits.

mod filter;
mod folds;
mod io;

pub use filter::{filter_corpus, FilterConfig};
pub use folds::{split_folds, Fold, FoldSplit};
pub use io::{
    infer_concepts, parse_qmatrix, parse_records, read_corpus, read_qmatrix, read_records, write_corpus,
    write_qmatrix_csv, write_records_csv, LabeledQMatrix, CORPUS_VERSION,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("concept {concept} at line {line} is outside 0..{concepts}")]
    UnknownConcept {
        line: u64,
        concept: String,
        concepts: usize,
    },
    #[error("nothing remains after filtering")]
    EmptyAfterFilter,
    #[error("need at least {needed} students for {folds} folds, have {have}")]
    TooFewStudents {
        needed: usize,
        have: usize,
        folds: usize,
    },
    #[error("unsupported corpus archive version {0}")]
    VersionMismatch(u32),
    #[error("invalid corpus: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One raw log line: who submitted what, when, and whether it was accepted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExerciseRecord {
    pub student: String,
    pub problem: String,
    pub time: i64,
    pub response: u8,
}

/// A record after densification; the student is implied by the owning sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub problem: usize,
    pub time: i64,
    pub response: u8,
}

impl Interaction {
    pub fn correct(&self) -> bool {
        self.response == 1
    }
}

/// One student's time-ordered interactions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSequence {
    pub student: usize,
    pub records: Vec<Interaction>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn responses(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.response).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.correct()).count() as f64 / self.records.len() as f64
    }
}

/// Binary problem × concept incidence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "QMatrixRepr", try_from = "QMatrixRepr")]
pub struct QMatrix {
    problems: usize,
    concepts: usize,
    incidence: Vec<u8>,
    lists: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct QMatrixRepr {
    problems: usize,
    concepts: usize,
    incidence: Vec<Vec<u8>>,
}

impl From<QMatrix> for QMatrixRepr {
    fn from(q: QMatrix) -> Self {
        QMatrixRepr {
            problems: q.problems,
            concepts: q.concepts,
            incidence: (0..q.problems).map(|j| q.row(j).to_vec()).collect(),
        }
    }
}

impl TryFrom<QMatrixRepr> for QMatrix {
    type Error = String;

    fn try_from(r: QMatrixRepr) -> Result<Self, String> {
        if r.incidence.len() != r.problems {
            return Err(format!(
                "qmatrix has {} rows, expected {}",
                r.incidence.len(),
                r.problems
            ));
        }
        let mut q = QMatrix::zeros(r.problems, r.concepts);
        for (j, row) in r.incidence.iter().enumerate() {
            if row.len() != r.concepts {
                return Err(format!("qmatrix row {j} has {} entries", row.len()));
            }
            for (k, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => q.set(j, k),
                    _ => return Err(format!("qmatrix entry ({j},{k}) = {v} is not binary")),
                }
            }
        }
        Ok(q)
    }
}

impl QMatrix {
    pub fn zeros(problems: usize, concepts: usize) -> Self {
        QMatrix {
            problems,
            concepts,
            incidence: vec![0; problems * concepts],
            lists: vec![Vec::new(); problems],
        }
    }

    /// Builds from per-problem concept lists.
    pub fn from_lists(concepts: usize, lists: &[Vec<usize>]) -> Self {
        let mut q = QMatrix::zeros(lists.len(), concepts);
        for (j, ks) in lists.iter().enumerate() {
            for &k in ks {
                q.set(j, k);
            }
        }
        q
    }

    pub fn set(&mut self, problem: usize, concept: usize) {
        assert!(problem < self.problems && concept < self.concepts);
        let cell = &mut self.incidence[problem * self.concepts + concept];
        if *cell == 0 {
            *cell = 1;
            let list = &mut self.lists[problem];
            list.push(concept);
            list.sort_unstable();
        }
    }

    pub fn problems(&self) -> usize {
        self.problems
    }

    pub fn concepts(&self) -> usize {
        self.concepts
    }

    pub fn get(&self, problem: usize, concept: usize) -> u8 {
        self.incidence[problem * self.concepts + concept]
    }

    pub fn row(&self, problem: usize) -> &[u8] {
        &self.incidence[problem * self.concepts..(problem + 1) * self.concepts]
    }

    /// Row as `f64` weights, for use as a constant on a tape.
    pub fn row_f64(&self, problem: usize) -> Vec<f64> {
        self.row(problem).iter().map(|&v| f64::from(v)).collect()
    }

    /// Concepts of `problem`, ascending.
    pub fn concepts_of(&self, problem: usize) -> &[usize] {
        &self.lists[problem]
    }

    /// Keeps only the listed problem rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> QMatrix {
        let lists: Vec<Vec<usize>> = rows.iter().map(|&j| self.lists[j].clone()).collect();
        QMatrix::from_lists(self.concepts, &lists)
    }
}

/// Raw id ↔ dense index maps; dense indices follow first appearance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct IdMaps {
    pub students: Vec<String>,
    pub problems: Vec<String>,
    pub concepts: Vec<String>,
}

impl IdMaps {
    pub fn student_index(&self, raw: &str) -> Option<usize> {
        self.students.iter().position(|s| s == raw)
    }

    pub fn problem_index(&self, raw: &str) -> Option<usize> {
        self.problems.iter().position(|s| s == raw)
    }
}

/// Dense sequences plus the Q-matrix they index into.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sequences: Vec<StudentSequence>,
    pub qmatrix: QMatrix,
    pub ids: IdMaps,
}

/// Appends `raw` to `list` on first sight and returns its dense index.
fn intern(index: &mut HashMap<String, usize>, list: &mut Vec<String>, raw: &str) -> usize {
    if let Some(&i) = index.get(raw) {
        return i;
    }
    let i = list.len();
    index.insert(raw.to_string(), i);
    list.push(raw.to_string());
    i
}

impl Corpus {
    /// Groups records by student, sorts each student's records by time
    /// (stable, so timestamp ties keep file order) and densifies ids in
    /// first-appearance order. Problems missing from the Q-matrix file get an
    /// all-zero row.
    pub fn assemble(records: &[ExerciseRecord], q: &LabeledQMatrix) -> Result<Corpus, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::EmptyFile);
        }
        let mut ids = IdMaps {
            concepts: (0..q.qmatrix.concepts()).map(|k| k.to_string()).collect(),
            ..IdMaps::default()
        };
        let mut student_index = HashMap::new();
        let mut problem_index = HashMap::new();
        let mut per_student: Vec<Vec<Interaction>> = Vec::new();
        for r in records {
            let s = intern(&mut student_index, &mut ids.students, &r.student);
            let p = intern(&mut problem_index, &mut ids.problems, &r.problem);
            if s == per_student.len() {
                per_student.push(Vec::new());
            }
            per_student[s].push(Interaction {
                problem: p,
                time: r.time,
                response: r.response,
            });
        }
        let q_rows: HashMap<&str, usize> = q
            .problem_ids
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let lists: Vec<Vec<usize>> = ids
            .problems
            .iter()
            .map(|p| {
                q_rows
                    .get(p.as_str())
                    .map(|&row| q.qmatrix.concepts_of(row).to_vec())
                    .unwrap_or_default()
            })
            .collect();
        let qmatrix = QMatrix::from_lists(q.qmatrix.concepts(), &lists);
        let sequences = per_student
            .into_iter()
            .enumerate()
            .map(|(student, mut records)| {
                records.sort_by_key(|r| r.time);
                StudentSequence { student, records }
            })
            .collect();
        Ok(Corpus {
            sequences,
            qmatrix,
            ids,
        })
    }

    pub fn num_students(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_problems(&self) -> usize {
        self.qmatrix.problems()
    }

    pub fn num_concepts(&self) -> usize {
        self.qmatrix.concepts()
    }

    pub fn num_records(&self) -> usize {
        self.sequences.iter().map(StudentSequence::len).sum()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Invalid(m));
        if self.ids.students.len() != self.sequences.len() {
            return bad("student id map does not match sequence count".into());
        }
        if self.ids.problems.len() != self.qmatrix.problems() {
            return bad("problem id map does not match Q-matrix rows".into());
        }
        if self.ids.concepts.len() != self.qmatrix.concepts() {
            return bad("concept id map does not match Q-matrix columns".into());
        }
        for (i, seq) in self.sequences.iter().enumerate() {
            if seq.student != i {
                return bad(format!("sequence {i} carries student index {}", seq.student));
            }
            if seq.records.is_empty() {
                return bad(format!("student {i} has no records"));
            }
            for w in seq.records.windows(2) {
                if w[1].time < w[0].time {
                    return bad(format!("student {i} records out of time order"));
                }
            }
            for r in &seq.records {
                if r.problem >= self.qmatrix.problems() || r.response > 1 || r.time < 0 {
                    return bad(format!("student {i} has an invalid record {r:?}"));
                }
            }
        }
        Ok(())
    }

    /// Sub-corpus of the given students (dense indices), re-densified.
    /// Problems and concepts are kept so parameter shapes stay compatible.
    pub fn subset(&self, students: &[usize]) -> Corpus {
        let sequences = students
            .iter()
            .enumerate()
            .map(|(new, &old)| StudentSequence {
                student: new,
                records: self.sequences[old].records.clone(),
            })
            .collect();
        let ids = IdMaps {
            students: students.iter().map(|&s| self.ids.students[s].clone()).collect(),
            problems: self.ids.problems.clone(),
            concepts: self.ids.concepts.clone(),
        };
        Corpus {
            sequences,
            qmatrix: self.qmatrix.clone(),
            ids,
        }
    }

    /// Raw records in student order, for export.
    pub fn to_records(&self) -> Vec<ExerciseRecord> {
        self.sequences
            .iter()
            .flat_map(|s| {
                s.records.iter().map(move |r| ExerciseRecord {
                    student: self.ids.students[s.student].clone(),
                    problem: self.ids.problems[r.problem].clone(),
                    time: r.time,
                    response: r.response,
                })
            })
            .collect()
    }
}
