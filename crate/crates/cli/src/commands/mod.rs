pub mod correlate;
pub mod diagnose;
pub mod doa;
pub mod ingest;
pub mod objectives;
pub mod report;
pub mod simulate;

use std::path::Path;

use cogdiag::model::{load_catalog, load_logs, load_qmatrix, load_registry};
use cogdiag::{validate_dataset, ConceptCatalog, Dataset, QMatrix, ResponseLog, StudentRecord};

use crate::error::{CliError, CliResult};

/// Raw inputs as read from disk, before validation.
pub struct Inputs {
    pub catalog: ConceptCatalog,
    pub qmatrix: QMatrix,
    pub registry: Vec<StudentRecord>,
    pub log: ResponseLog,
}

pub fn read_inputs(catalog: &Path, qmatrix: &Path, logs: &Path, registry: Option<&Path>) -> CliResult<Inputs> {
    let catalog = load_catalog(catalog)?;
    let qmatrix = load_qmatrix(qmatrix)?;
    let qmatrix = qmatrix.aligned_to(&catalog).unwrap_or(qmatrix);
    let registry = match registry {
        Some(p) => load_registry(p)?,
        None => Vec::new(),
    };
    let log = load_logs(logs)?;
    Ok(Inputs {
        catalog,
        qmatrix,
        registry,
        log,
    })
}

impl Inputs {
    /// Checks every invariant and lists all violations on failure.
    pub fn into_dataset(self) -> CliResult<Dataset> {
        let report = validate_dataset(&self.catalog, &self.qmatrix, &self.registry, &self.log);
        if !report.is_empty() {
            return Err(CliError::Validation(report.to_string().trim_end().to_string()));
        }
        Ok(Dataset::new(self.catalog, self.qmatrix, self.registry, self.log)?)
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}
