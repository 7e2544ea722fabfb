use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, ExerciseRecord, IdMaps, QMatrix, StudentSequence};

pub const CORPUS_VERSION: u32 = 1;

const RECORDS_HEADER: [&str; 4] = ["student_id", "problem_id", "timestamp", "response"];
const QMATRIX_HEADER: [&str; 2] = ["problem_id", "concept_id"];

/// A Q-matrix as read from file, rows labeled with raw problem ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledQMatrix {
    pub problem_ids: Vec<String>,
    pub qmatrix: QMatrix,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), DatasetError> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(DatasetError::MalformedRow {
            line: 1,
            reason: format!("expected header {}", expected.join(",")),
        });
    }
    Ok(())
}

/// Reads a records CSV (`student_id,problem_id,timestamp,response`).
pub fn parse_records(path: impl AsRef<Path>) -> Result<Vec<ExerciseRecord>, DatasetError> {
    read_records(BufReader::new(File::open(path)?))
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<ExerciseRecord>, DatasetError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &RECORDS_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |reason: String| DatasetError::MalformedRow { line, reason };
        if row.len() != 4 {
            return Err(malformed(format!("expected 4 fields, found {}", row.len())));
        }
        let time: i64 = row[2]
            .parse()
            .map_err(|_| malformed(format!("timestamp {:?} is not an integer", &row[2])))?;
        if time < 0 {
            return Err(malformed(format!("negative timestamp {time}")));
        }
        let response = match &row[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(malformed(format!("response {other:?} is not 0 or 1"))),
        };
        if row[0].is_empty() || row[1].is_empty() {
            return Err(malformed("empty id".into()));
        }
        out.push(ExerciseRecord {
            student: row[0].to_string(),
            problem: row[1].to_string(),
            time,
            response,
        });
    }
    if out.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(out)
}

/// Reads a Q-matrix CSV (`problem_id,concept_id`) with `concepts` columns.
///
/// Concept ids are integer column indices in `0..concepts`. Problem rows are
/// numbered in first-appearance order; duplicate pairs are harmless.
pub fn parse_qmatrix(path: impl AsRef<Path>, concepts: usize) -> Result<LabeledQMatrix, DatasetError> {
    read_qmatrix(BufReader::new(File::open(path)?), concepts)
}

pub fn read_qmatrix<R: Read>(input: R, concepts: usize) -> Result<LabeledQMatrix, DatasetError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &QMATRIX_HEADER)?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut problem_ids = Vec::new();
    let mut pairs = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 2 || row[0].is_empty() {
            return Err(DatasetError::MalformedRow {
                line,
                reason: "expected problem_id,concept_id".into(),
            });
        }
        let concept: usize = row[1].parse().map_err(|_| DatasetError::UnknownConcept {
            line,
            concept: row[1].to_string(),
            concepts,
        })?;
        if concept >= concepts {
            return Err(DatasetError::UnknownConcept {
                line,
                concept: row[1].to_string(),
                concepts,
            });
        }
        let j = *index.entry(row[0].to_string()).or_insert_with(|| {
            problem_ids.push(row[0].to_string());
            problem_ids.len() - 1
        });
        pairs.push((j, concept));
    }
    let mut qmatrix = QMatrix::zeros(problem_ids.len(), concepts);
    for (j, k) in pairs {
        qmatrix.set(j, k);
    }
    Ok(LabeledQMatrix {
        problem_ids,
        qmatrix,
    })
}

/// Number of concept columns implied by a Q-matrix file: largest integer
/// concept id plus one.
pub fn infer_concepts(path: impl AsRef<Path>) -> Result<usize, DatasetError> {
    let mut rdr = reader(BufReader::new(File::open(path)?));
    check_header(&mut rdr, &QMATRIX_HEADER)?;
    let mut concepts = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let k: usize = row.get(1).and_then(|c| c.parse().ok()).ok_or_else(|| DatasetError::MalformedRow {
            line,
            reason: "concept_id must be a non-negative integer".into(),
        })?;
        concepts = concepts.max(k + 1);
    }
    if concepts == 0 {
        return Err(DatasetError::EmptyFile);
    }
    Ok(concepts)
}

pub fn write_records_csv<W: Write>(out: W, records: &[ExerciseRecord]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record([
            r.student.as_str(),
            r.problem.as_str(),
            &r.time.to_string(),
            &r.response.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_qmatrix_csv<W: Write>(out: W, q: &QMatrix, ids: &IdMaps) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(QMATRIX_HEADER)?;
    for j in 0..q.problems() {
        for &k in q.concepts_of(j) {
            w.write_record([ids.problems[j].as_str(), &k.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CorpusArchive {
    version: u32,
    students: Vec<StudentSequence>,
    qmatrix: QMatrix,
    id_maps: IdMaps,
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<(), DatasetError> {
    let archive = CorpusArchive {
        version: CORPUS_VERSION,
        students: corpus.sequences.clone(),
        qmatrix: corpus.qmatrix.clone(),
        id_maps: corpus.ids.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &archive)?;
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus, DatasetError> {
    let archive: CorpusArchive = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if archive.version != CORPUS_VERSION {
        return Err(DatasetError::VersionMismatch(archive.version));
    }
    let corpus = Corpus {
        sequences: archive.students,
        qmatrix: archive.qmatrix,
        ids: archive.id_maps,
    };
    corpus.validate()?;
    Ok(corpus)
}
