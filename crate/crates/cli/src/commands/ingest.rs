use std::path::{Path, PathBuf};

use cogdiag::model::{write_json, write_logs};
use cogdiag::{Response, ResponseLog};

use super::{ensure_dir, read_inputs};
use crate::error::CliResult;

pub struct IngestArgs<'a> {
    pub catalog: &'a Path,
    pub qmatrix: &'a Path,
    pub logs: &'a Path,
    pub registry: Option<&'a Path>,
    pub out: &'a Path,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub students: usize,
    pub exercises: usize,
    pub concepts: usize,
    pub responses: usize,
    pub files: Vec<PathBuf>,
}

/// Validates the inputs and writes the canonical dataset: Q-matrix columns
/// in catalog order, an explicit registry, and log entries sorted by
/// registry position then exercise position.
pub fn run(args: &IngestArgs<'_>) -> CliResult<IngestSummary> {
    let data = read_inputs(args.catalog, args.qmatrix, args.logs, args.registry)?.into_dataset()?;
    ensure_dir(args.out)?;

    let q = data.qmatrix();
    let mut obs: Vec<_> = data.observations().to_vec();
    obs.sort_by_key(|o| (o.student, o.exercise));
    let log = ResponseLog::new(
        obs.iter()
            .map(|o| Response::new(&data.students()[o.student].id, &q.exercise_ids()[o.exercise], o.correct))
            .collect(),
    );

    let files = ["catalog.json", "qmatrix.json", "registry.json", "logs.jsonl"].map(|f| args.out.join(f));
    write_json(&files[0], data.catalog())?;
    write_json(&files[1], q)?;
    write_json(&files[2], data.students())?;
    write_logs(&files[3], &log)?;
    Ok(IngestSummary {
        students: data.n_students(),
        exercises: q.n_exercises(),
        concepts: data.catalog().len(),
        responses: log.len(),
        files: files.to_vec(),
    })
}
