use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::report::{correlate_pair, pairwise, CorrelationEntry, DiagnosisReport};

pub type Columns = BTreeMap<String, Vec<Option<f64>>>;

/// Numeric columns of a CSV table. Lines starting with `#` are comments;
/// empty cells are missing values; columns with any non-numeric cell are
/// dropped.
pub fn read_csv_columns(text: &str) -> CliResult<Columns> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Parse(format!("csv header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut cols: Vec<Option<Vec<Option<f64>>>> = vec![Some(Vec::new()); headers.len()];
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(format!("csv record {}: {e}", i + 1)))?;
        for (c, cell) in rec.iter().enumerate() {
            let Some(Some(col)) = cols.get_mut(c) else { continue };
            if cell.is_empty() {
                col.push(None);
            } else if let Ok(v) = cell.parse::<f64>() {
                col.push(Some(v));
            } else {
                cols[c] = None;
            }
        }
    }
    Ok(headers
        .into_iter()
        .zip(cols)
        .filter_map(|(h, c)| c.map(|c| (h, c)))
        .collect())
}

/// Loads columns from a CSV table or a diagnosis report (`.json`).
pub fn load_columns(path: &Path) -> CliResult<Columns> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let report: DiagnosisReport =
            serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Ok(report.columns())
    } else {
        read_csv_columns(&text)
    }
}

/// Parses `x:y,x:z` into column pairs.
pub fn parse_pairs(spec: &str) -> CliResult<Vec<(String, String)>> {
    spec.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once(':') {
            Some((x, y)) if !x.trim().is_empty() && !y.trim().is_empty() => {
                Ok((x.trim().to_string(), y.trim().to_string()))
            }
            _ => Err(CliError::Parse(format!("bad column pair `{p}`, expected x:y"))),
        })
        .collect()
}

/// Which pairs to compute.
pub enum Selection {
    All,
    Against(String),
    Pairs(Vec<(String, String)>),
}

/// Correlates the selected pairs. Any pair with fewer than three complete
/// rows is an error.
pub fn correlate(columns: &Columns, selection: &Selection) -> CliResult<Vec<CorrelationEntry>> {
    let get = |name: &str| {
        columns.get(name).ok_or_else(|| {
            let known: Vec<&str> = columns.keys().map(String::as_str).collect();
            CliError::Validation(format!("unknown column `{name}` (numeric columns: {})", known.join(", ")))
        })
    };
    let rows = match selection {
        Selection::All => pairwise(columns),
        Selection::Against(x) => {
            let xs = get(x)?;
            columns
                .iter()
                .filter(|(name, _)| *name != x)
                .map(|(name, ys)| correlate_pair(x, xs, name, ys))
                .collect()
        }
        Selection::Pairs(pairs) => pairs
            .iter()
            .map(|(x, y)| Ok(correlate_pair(x, get(x)?, y, get(y)?)))
            .collect::<CliResult<_>>()?,
    };
    if let Some(short) = rows.iter().find(|r| r.n < 3) {
        return Err(CliError::Validation(format!(
            "insufficient rows for {} vs {}: {} complete rows, need at least 3",
            short.x, short.y, short.n
        )));
    }
    Ok(rows)
}
