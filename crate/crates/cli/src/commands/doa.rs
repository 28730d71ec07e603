use std::path::Path;

use cogdiag::metrics::{doa_report, DoaReport};
use cogdiag::{DiagnosisMethod, KnowledgeState};

use super::read_inputs;
use crate::error::{CliError, CliResult};

/// Reads knowledge states from a `student,method,<concepts...>` table,
/// keeping rows of `method`. Concept columns must follow `concepts`.
pub fn read_states(text: &str, method: Option<DiagnosisMethod>, concepts: &[String]) -> CliResult<Vec<KnowledgeState>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Parse(format!("states header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 2 || names[0] != "student" || names[1] != "method" {
        return Err(CliError::Parse("states table must start with `student,method`".into()));
    }
    if names[2..] != concepts.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        return Err(CliError::Validation(
            "state columns do not match the catalog's concepts in order".into(),
        ));
    }
    let mut states = Vec::new();
    let mut seen_methods = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::Parse(format!("states line {line}: {e}")))?;
        let m: DiagnosisMethod = rec[1]
            .parse()
            .map_err(|e: cogdiag::Error| CliError::Parse(format!("states line {line}: {e}")))?;
        if !seen_methods.contains(&m) {
            seen_methods.push(m);
        }
        if method.is_some_and(|want| want != m) {
            continue;
        }
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Parse(format!("states line {line}: {e}")))?;
        states.push(KnowledgeState {
            student_id: rec[0].to_string(),
            values,
            method: m,
        });
    }
    if method.is_none() && seen_methods.len() > 1 {
        return Err(CliError::Parse(
            "states table holds several methods; pick one with --method".into(),
        ));
    }
    Ok(states)
}

pub struct DoaArgs<'a> {
    pub states: &'a Path,
    pub catalog: &'a Path,
    pub qmatrix: &'a Path,
    pub logs: &'a Path,
    pub registry: Option<&'a Path>,
    pub method: Option<DiagnosisMethod>,
}

pub fn run(args: &DoaArgs<'_>) -> CliResult<DoaReport> {
    let data = read_inputs(args.catalog, args.qmatrix, args.logs, args.registry)?.into_dataset()?;
    let text = std::fs::read_to_string(args.states)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", args.states.display())))?;
    let concepts: Vec<String> = data.catalog().ids().map(str::to_owned).collect();
    let states = read_states(&text, args.method, &concepts)?;
    if let Some(s) = states.iter().find(|s| data.student_index(&s.student_id).is_none()) {
        return Err(cogdiag::Error::UnknownStudent(s.student_id.clone()).into());
    }
    Ok(doa_report(&states, data.log(), data.qmatrix(), data.catalog())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_table_round_trip() {
        let concepts = vec!["a".to_string(), "b".to_string()];
        let text = "student,method,a,b\ns1,ncdm,0.1,0.2\ns1,icdm,0.3,0.4\ns2,ncdm,0.5,0.6\n";
        let ncdm = read_states(text, Some(DiagnosisMethod::Ncdm), &concepts).unwrap();
        assert_eq!(ncdm.len(), 2);
        assert_eq!(ncdm[1].values, vec![0.5, 0.6]);
        assert!(read_states(text, None, &concepts).is_err());
        let swapped = vec!["b".to_string(), "a".to_string()];
        assert_eq!(read_states(text, None, &swapped).unwrap_err().exit_code(), 3);
    }
}
