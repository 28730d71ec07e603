use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::report::{load_checked, render_summary, DiagnosisReport};

/// Renders the summary of a saved report. With `check`, the schema and the
/// content hash are verified first.
pub fn run(path: &Path, check: bool) -> CliResult<String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let report: DiagnosisReport = if check {
        load_checked(&text)?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
    };
    let mut out = render_summary(&report);
    if check {
        out.push_str(&format!(
            "\nschema version {} ok, content hash {}\n",
            report.schema_version,
            report.provenance.as_ref().map_or("-", |p| p.content_sha256.as_str())
        ));
    }
    Ok(out)
}
