//! Shared domain types: concept catalog, Q-matrix, student registry, response
//! logs and knowledge states, plus dataset validation and the on-disk formats.
//!
//! Loaded values are not trusted: deserialization never enforces invariants.
//! [`validate_dataset`] reports every violation, and [`Dataset::new`] is the
//! gate the diagnosis code goes through.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Forget,
    Retain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub kind: ConceptKind,
    #[serde(default)]
    pub domain: String,
}

impl Concept {
    pub fn new(id: impl Into<String>, kind: ConceptKind, domain: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            domain: domain.into(),
        }
    }
}

/// Ordered list of knowledge concepts. Position in the list is the column
/// index used by every per-concept vector in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptCatalog {
    concepts: Vec<Concept>,
}

impl ConceptCatalog {
    pub fn new(concepts: Vec<Concept>) -> Result<Self> {
        let catalog = Self { concepts };
        match catalog.violations().into_iter().next() {
            Some(v) => Err(Error::InvalidDataset(1, v.to_string())),
            None => Ok(catalog),
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(|c| c.id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.id == id)
    }

    pub fn index_map(&self) -> HashMap<String, usize> {
        self.concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect()
    }

    pub fn forget_indices(&self) -> Vec<usize> {
        self.indices_of_kind(ConceptKind::Forget)
    }

    pub fn indices_of_kind(&self, kind: ConceptKind) -> Vec<usize> {
        self.concepts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for (i, c) in self.concepts.iter().enumerate() {
            if c.id.is_empty() {
                out.push(Violation::EmptyConceptId { index: i });
            } else if !seen.insert(c.id.as_str()) {
                out.push(Violation::DuplicateConcept(c.id.clone()));
            }
        }
        if !self.concepts.iter().any(|c| c.kind == ConceptKind::Forget) {
            out.push(Violation::NoForgetConcept);
        }
        out
    }
}

/// Binary exercise-by-concept incidence matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QMatrix {
    exercises: Vec<String>,
    concepts: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl QMatrix {
    pub fn new(exercises: Vec<String>, concepts: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        let q = Self {
            exercises,
            concepts,
            rows,
        };
        match q.violations(None).into_iter().next() {
            Some(v) => Err(Error::InvalidDataset(1, v.to_string())),
            None => Ok(q),
        }
    }

    pub fn n_exercises(&self) -> usize {
        self.exercises.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn exercise_ids(&self) -> &[String] {
        &self.exercises
    }

    pub fn concept_ids(&self) -> &[String] {
        &self.concepts
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn row(&self, exercise: usize) -> &[u8] {
        &self.rows[exercise]
    }

    #[inline]
    pub fn tests(&self, exercise: usize, concept: usize) -> bool {
        self.rows[exercise][concept] == 1
    }

    pub fn tested_concepts(&self, exercise: usize) -> Vec<usize> {
        self.rows[exercise]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn exercise_index(&self, id: &str) -> Option<usize> {
        self.exercises.iter().position(|e| e == id)
    }

    pub fn exercise_index_map(&self) -> HashMap<String, usize> {
        self.exercises
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect()
    }

    /// Reorders columns to follow the catalog. Fails if the concept sets differ.
    pub fn aligned_to(&self, catalog: &ConceptCatalog) -> Result<Self> {
        let own: HashMap<&str, usize> = self
            .concepts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        if own.len() != catalog.len() {
            return Err(Error::Dimension(format!(
                "q-matrix has {} concepts, catalog has {}",
                own.len(),
                catalog.len()
            )));
        }
        let mut perm = Vec::with_capacity(catalog.len());
        for id in catalog.ids() {
            perm.push(*own.get(id).ok_or_else(|| {
                Error::Dimension(format!("catalog concept `{id}` missing from q-matrix"))
            })?);
        }
        let rows = self
            .rows
            .iter()
            .map(|r| perm.iter().map(|&j| r.get(j).copied().unwrap_or(0)).collect())
            .collect();
        Ok(Self {
            exercises: self.exercises.clone(),
            concepts: catalog.ids().map(str::to_owned).collect(),
            rows,
        })
    }

    fn violations(&self, catalog: Option<&ConceptCatalog>) -> Vec<Violation> {
        let mut out = Vec::new();
        let k = catalog.map_or(self.concepts.len(), |c| c.len());
        if let Some(cat) = catalog {
            if !self.concepts.iter().map(String::as_str).eq(cat.ids()) {
                out.push(Violation::ConceptColumnsMismatch);
            }
        }
        if self.rows.len() != self.exercises.len() {
            out.push(Violation::RowCountMismatch {
                rows: self.rows.len(),
                exercises: self.exercises.len(),
            });
        }
        let mut seen = HashSet::new();
        for (i, id) in self.exercises.iter().enumerate() {
            if id.is_empty() {
                out.push(Violation::EmptyExerciseId { index: i });
            } else if !seen.insert(id.as_str()) {
                out.push(Violation::DuplicateExercise(id.clone()));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            let name = self.exercises.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            if row.len() != k {
                out.push(Violation::RowWidth {
                    exercise: name.clone(),
                    width: row.len(),
                    expected: k,
                });
            }
            if row.iter().any(|&v| v > 1) {
                out.push(Violation::NonBinaryQEntry(name.clone()));
            }
            if !row.contains(&1) {
                out.push(Violation::ExerciseTestsNoConcept(name));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub method: String,
    pub step: u32,
}

/// A diagnosed "student": a model checkpoint, a simulated agent, or a
/// synthetic resample of another student's log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
    #[serde(default)]
    pub synthetic: bool,
}

impl StudentRecord {
    pub fn plain(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            lineage: None,
            synthetic: false,
        }
    }

    pub fn checkpoint(id: impl Into<String>, method: impl Into<String>, step: u32) -> Self {
        Self {
            id: id.into(),
            lineage: Some(Lineage {
                method: method.into(),
                step,
            }),
            synthetic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub student: String,
    pub exercise: String,
    pub score: u8,
}

impl Response {
    pub fn new(student: impl Into<String>, exercise: impl Into<String>, correct: bool) -> Self {
        Self {
            student: student.into(),
            exercise: exercise.into(),
            score: u8::from(correct),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseLog {
    entries: Vec<Response>,
}

impl ResponseLog {
    pub fn new(entries: Vec<Response>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[Response] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, r: Response) {
        self.entries.push(r);
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = Response>) {
        self.entries.extend(other);
    }

    pub fn for_student<'a>(&'a self, student: &'a str) -> impl Iterator<Item = &'a Response> + 'a {
        self.entries.iter().filter(move |r| r.student == student)
    }

    /// Student ids in order of first appearance.
    pub fn student_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|r| seen.insert(r.student.as_str()))
            .map(|r| r.student.clone())
            .collect()
    }

    pub fn into_entries(self) -> Vec<Response> {
        self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosisMethod {
    Ncdm,
    Icdm,
    #[serde(rename = "fewshot")]
    FewShot,
}

impl DiagnosisMethod {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ncdm => "ncdm",
            Self::Icdm => "icdm",
            Self::FewShot => "fewshot",
        }
    }
}

impl fmt::Display for DiagnosisMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for DiagnosisMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ncdm" => Ok(Self::Ncdm),
            "icdm" => Ok(Self::Icdm),
            "fewshot" | "few-shot" | "fs" => Ok(Self::FewShot),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Per-concept mastery vector for one student, indexed by catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub student_id: String,
    pub values: Vec<f64>,
    pub method: DiagnosisMethod,
}

/// Restricts a state to the forget concepts, keeping catalog order.
pub fn slice_forget(state: &KnowledgeState, catalog: &ConceptCatalog) -> Result<Vec<f64>> {
    if state.values.len() != catalog.len() {
        return Err(Error::Dimension(format!(
            "state has {} values, catalog has {} concepts",
            state.values.len(),
            catalog.len()
        )));
    }
    let idx = catalog.forget_indices();
    if idx.is_empty() {
        return Err(Error::NoForgetConcepts);
    }
    Ok(idx.into_iter().map(|k| state.values[k]).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyConceptId { index: usize },
    DuplicateConcept(String),
    NoForgetConcept,
    ConceptColumnsMismatch,
    RowCountMismatch { rows: usize, exercises: usize },
    EmptyExerciseId { index: usize },
    DuplicateExercise(String),
    RowWidth { exercise: String, width: usize, expected: usize },
    NonBinaryQEntry(String),
    ExerciseTestsNoConcept(String),
    EmptyStudentId,
    DuplicateStudent(String),
    UnresolvedStudent(String),
    UnresolvedExercise(String),
    DuplicateResponse { student: String, exercise: String },
    NonBinaryScore { student: String, exercise: String, score: u8 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyConceptId { index } => write!(f, "empty concept id at position {index}"),
            Self::DuplicateConcept(id) => write!(f, "duplicate concept `{id}`"),
            Self::NoForgetConcept => write!(f, "catalog has no forget concept"),
            Self::ConceptColumnsMismatch => {
                write!(f, "q-matrix concept columns do not match catalog order")
            }
            Self::RowCountMismatch { rows, exercises } => {
                write!(f, "q-matrix has {rows} rows for {exercises} exercises")
            }
            Self::EmptyExerciseId { index } => write!(f, "empty exercise id at row {index}"),
            Self::DuplicateExercise(id) => write!(f, "duplicate exercise `{id}`"),
            Self::RowWidth {
                exercise,
                width,
                expected,
            } => write!(f, "q-matrix row `{exercise}` has width {width}, expected {expected}"),
            Self::NonBinaryQEntry(id) => write!(f, "q-matrix row `{id}` has non-binary entry"),
            Self::ExerciseTestsNoConcept(id) => write!(f, "exercise tests no concept: `{id}`"),
            Self::EmptyStudentId => write!(f, "empty student id"),
            Self::DuplicateStudent(id) => write!(f, "duplicate student `{id}`"),
            Self::UnresolvedStudent(id) => write!(f, "unresolved student `{id}`"),
            Self::UnresolvedExercise(id) => write!(f, "unresolved exercise `{id}`"),
            Self::DuplicateResponse { student, exercise } => {
                write!(f, "duplicate response for (`{student}`, `{exercise}`)")
            }
            Self::NonBinaryScore {
                student,
                exercise,
                score,
            } => write!(f, "non-binary score {score} for (`{student}`, `{exercise}`)"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "dataset is consistent");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Lists every invariant violation across the four inputs. An empty registry
/// means "derive students from the log", so unresolved-student checks are
/// skipped in that case.
pub fn validate_dataset(
    catalog: &ConceptCatalog,
    qmatrix: &QMatrix,
    registry: &[StudentRecord],
    log: &ResponseLog,
) -> ValidationReport {
    let mut violations = catalog.violations();
    violations.extend(qmatrix.violations(Some(catalog)));

    let mut students = HashSet::new();
    for s in registry {
        if s.id.is_empty() {
            violations.push(Violation::EmptyStudentId);
        } else if !students.insert(s.id.as_str()) {
            violations.push(Violation::DuplicateStudent(s.id.clone()));
        }
    }

    let exercises: HashSet<&str> = qmatrix.exercises.iter().map(String::as_str).collect();
    let mut pairs = HashSet::new();
    let mut reported_students = HashSet::new();
    let mut reported_exercises = HashSet::new();
    for r in &log.entries {
        if r.student.is_empty() {
            violations.push(Violation::EmptyStudentId);
        } else if !registry.is_empty()
            && !students.contains(r.student.as_str())
            && reported_students.insert(r.student.as_str())
        {
            violations.push(Violation::UnresolvedStudent(r.student.clone()));
        }
        if !exercises.contains(r.exercise.as_str()) && reported_exercises.insert(r.exercise.as_str())
        {
            violations.push(Violation::UnresolvedExercise(r.exercise.clone()));
        }
        if r.score > 1 {
            violations.push(Violation::NonBinaryScore {
                student: r.student.clone(),
                exercise: r.exercise.clone(),
                score: r.score,
            });
        }
        if !pairs.insert((r.student.as_str(), r.exercise.as_str())) {
            violations.push(Violation::DuplicateResponse {
                student: r.student.clone(),
                exercise: r.exercise.clone(),
            });
        }
    }
    ValidationReport { violations }
}

/// One response with ids resolved to registry and Q-matrix positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub student: usize,
    pub exercise: usize,
    pub correct: bool,
}

/// A validated, index-resolved dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    catalog: ConceptCatalog,
    qmatrix: QMatrix,
    students: Vec<StudentRecord>,
    log: ResponseLog,
    student_index: HashMap<String, usize>,
    observations: Vec<Observation>,
}

impl Dataset {
    /// Validates and indexes. When `students` is empty the registry is derived
    /// from the log in order of first appearance.
    pub fn new(
        catalog: ConceptCatalog,
        qmatrix: QMatrix,
        students: Vec<StudentRecord>,
        log: ResponseLog,
    ) -> Result<Self> {
        let report = validate_dataset(&catalog, &qmatrix, &students, &log);
        if let Some(first) = report.violations.first() {
            return Err(Error::InvalidDataset(report.len(), first.to_string()));
        }
        let students = if students.is_empty() {
            log.student_ids().into_iter().map(StudentRecord::plain).collect()
        } else {
            students
        };
        let student_index: HashMap<String, usize> = students
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        let exercise_index = qmatrix.exercise_index_map();
        let observations = log
            .entries
            .iter()
            .map(|r| Observation {
                student: student_index[&r.student],
                exercise: exercise_index[&r.exercise],
                correct: r.score == 1,
            })
            .collect();
        Ok(Self {
            catalog,
            qmatrix,
            students,
            log,
            student_index,
            observations,
        })
    }

    pub fn catalog(&self) -> &ConceptCatalog {
        &self.catalog
    }

    pub fn qmatrix(&self) -> &QMatrix {
        &self.qmatrix
    }

    pub fn students(&self) -> &[StudentRecord] {
        &self.students
    }

    pub fn log(&self) -> &ResponseLog {
        &self.log
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.student_index.get(id).copied()
    }

    /// Students with no responses, by id.
    pub fn silent_students(&self) -> Vec<&str> {
        let mut seen = vec![false; self.students.len()];
        for o in &self.observations {
            seen[o.student] = true;
        }
        self.students
            .iter()
            .zip(seen)
            .filter(|(_, s)| !s)
            .map(|(r, _)| r.id.as_str())
            .collect()
    }
}

/// Response log behind a read/write lock: many readers, one appender.
#[derive(Debug, Default)]
pub struct LogStore {
    inner: RwLock<ResponseLog>,
}

impl LogStore {
    pub fn new(log: ResponseLog) -> Self {
        Self {
            inner: RwLock::new(log),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, ResponseLog> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn append(&self, entries: impl IntoIterator<Item = Response>) {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        guard.extend(entries);
    }

    pub fn snapshot(&self) -> ResponseLog {
        self.read().clone()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn load_catalog(path: &Path) -> Result<ConceptCatalog> {
    read_json(path)
}

pub fn load_qmatrix(path: &Path) -> Result<QMatrix> {
    read_json(path)
}

pub fn load_registry(path: &Path) -> Result<Vec<StudentRecord>> {
    read_json(path)
}

/// Parses JSON Lines; blank lines are skipped, line numbers are 1-based.
pub fn parse_logs(reader: impl BufRead, source_name: &str) -> Result<ResponseLog> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            source_name: source_name.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Response = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: source_name.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(r);
    }
    Ok(ResponseLog::new(entries))
}

pub fn load_logs(path: &Path) -> Result<ResponseLog> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    parse_logs(BufReader::new(file), &path.display().to_string())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_logs(path: &Path, log: &ResponseLog) -> Result<()> {
    let mut buf = Vec::with_capacity(log.len() * 48);
    for r in &log.entries {
        serde_json::to_writer(&mut buf, r).expect("serializable response");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> (ConceptCatalog, QMatrix, Vec<StudentRecord>, ResponseLog) {
        let catalog = ConceptCatalog::new(vec![
            Concept::new("recon", ConceptKind::Forget, "attack"),
            Concept::new("exfil", ConceptKind::Forget, "attack"),
            Concept::new("sorting", ConceptKind::Retain, "cs"),
        ])
        .unwrap();
        let q = QMatrix::new(
            ["e1", "e2", "e3", "e4"].map(String::from).to_vec(),
            ["recon", "exfil", "sorting"].map(String::from).to_vec(),
            vec![vec![1, 0, 0], vec![0, 1, 0], vec![1, 1, 0], vec![0, 0, 1]],
        )
        .unwrap();
        let students = vec![
            StudentRecord::checkpoint("base", "GA", 0),
            StudentRecord::checkpoint("ga-1", "GA", 1),
            StudentRecord::plain("other"),
        ];
        let mut log = ResponseLog::default();
        for (i, s) in ["base", "ga-1", "other"].iter().enumerate() {
            for (j, e) in ["e1", "e2", "e3", "e4"].iter().enumerate() {
                log.push(Response::new(*s, *e, (i + j) % 2 == 0));
            }
        }
        (catalog, q, students, log)
    }

    #[test]
    fn consistent_toy_has_empty_report() {
        let (c, q, s, l) = toy();
        let report = validate_dataset(&c, &q, &s, &l);
        assert!(report.is_empty(), "{report}");
        // idempotent
        assert_eq!(report, validate_dataset(&c, &q, &s, &l));
    }

    #[test]
    fn unknown_exercise_is_one_violation() {
        let (c, q, s, mut l) = toy();
        l.push(Response::new("base", "e99", true));
        let report = validate_dataset(&c, &q, &s, &l);
        assert_eq!(report.violations, vec![Violation::UnresolvedExercise("e99".into())]);
        assert!(report.to_string().contains("unresolved exercise"));
    }

    #[test]
    fn zero_row_is_one_violation() {
        let (c, _, s, l) = toy();
        let q: QMatrix = serde_json::from_str(
            r#"{"exercises":["e1","e2","e3","e4"],"concepts":["recon","exfil","sorting"],
                "rows":[[1,0,0],[0,1,0],[0,0,0],[0,0,1]]}"#,
        )
        .unwrap();
        let report = validate_dataset(&c, &q, &s, &l);
        assert_eq!(report.violations, vec![Violation::ExerciseTestsNoConcept("e3".into())]);
        assert!(report.to_string().contains("exercise tests no concept"));
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let (c, q, s, mut l) = toy();
        l.push(Response::new("base", "e1", false));
        let report = validate_dataset(&c, &q, &s, &l);
        assert_eq!(report.len(), 1);
        assert!(matches!(report.violations[0], Violation::DuplicateResponse { .. }));
        assert!(Dataset::new(c, q, s, l).is_err());
    }

    #[test]
    fn non_binary_and_unresolved_student() {
        let (c, q, s, mut l) = toy();
        l.push(Response {
            student: "ghost".into(),
            exercise: "e1".into(),
            score: 2,
        });
        let report = validate_dataset(&c, &q, &s, &l);
        assert_eq!(report.len(), 2);
    }

    #[test]
    fn catalog_without_forget_rejected() {
        let err = ConceptCatalog::new(vec![Concept::new("a", ConceptKind::Retain, "")]);
        assert!(err.is_err());
    }

    #[test]
    fn slice_forget_selection() {
        let catalog = ConceptCatalog::new(vec![
            Concept::new("a", ConceptKind::Forget, ""),
            Concept::new("b", ConceptKind::Retain, ""),
            Concept::new("c", ConceptKind::Forget, ""),
        ])
        .unwrap();
        let state = KnowledgeState {
            student_id: "s".into(),
            values: vec![0.2, 0.9, 0.4],
            method: DiagnosisMethod::Ncdm,
        };
        assert_eq!(slice_forget(&state, &catalog).unwrap(), vec![0.2, 0.4]);

        let all_forget: ConceptCatalog = serde_json::from_str(
            r#"[{"id":"a","kind":"forget","domain":""},{"id":"b","kind":"forget","domain":""},
                {"id":"c","kind":"forget","domain":""}]"#,
        )
        .unwrap();
        assert_eq!(slice_forget(&state, &all_forget).unwrap(), state.values);

        let all_retain: ConceptCatalog = serde_json::from_str(
            r#"[{"id":"a","kind":"retain","domain":""},{"id":"b","kind":"retain","domain":""},
                {"id":"c","kind":"retain","domain":""}]"#,
        )
        .unwrap();
        assert!(matches!(
            slice_forget(&state, &all_retain),
            Err(Error::NoForgetConcepts)
        ));
    }

    #[test]
    fn concept_index_is_bijection() {
        let (c, ..) = toy();
        let map = c.index_map();
        assert_eq!(map.len(), c.len());
        for (i, id) in c.ids().enumerate() {
            assert_eq!(map[id], i);
            assert_eq!(c.index_of(id), Some(i));
        }
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let text = "{\"student\":\"a\",\"exercise\":\"e1\",\"score\":1}\n\n{\"student\":\"a\",\"exercise\":\n";
        match parse_logs(text.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn aligned_to_reorders_columns() {
        let (c, ..) = toy();
        let q = QMatrix::new(
            vec!["x".into()],
            ["sorting", "recon", "exfil"].map(String::from).to_vec(),
            vec![vec![1, 0, 1]],
        )
        .unwrap();
        let aligned = q.aligned_to(&c).unwrap();
        assert_eq!(aligned.row(0), &[0, 1, 1]);
        assert_eq!(aligned.concept_ids(), &["recon", "exfil", "sorting"]);
    }

    #[test]
    fn log_store_concurrent_readers() {
        let (.., l) = toy();
        let store = LogStore::new(l);
        std::thread::scope(|scope| {
            for _ in 0..4 {
                scope.spawn(|| assert_eq!(store.read().len(), 12));
            }
        });
        store.append([Response::new("x", "e1", true)]);
        assert_eq!(store.snapshot().len(), 13);
    }

    #[test]
    fn types_are_shareable() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<ConceptCatalog>();
        assert_send_sync::<QMatrix>();
        assert_send_sync::<ResponseLog>();
        assert_send_sync::<KnowledgeState>();
        assert_send_sync::<Dataset>();
        assert_send_sync::<LogStore>();
    }
}
