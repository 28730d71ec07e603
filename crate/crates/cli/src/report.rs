//! The diagnosis report and its companion files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use cogdiag::metrics::{pearson, DoaReport};
use cogdiag::{Concept, Lineage};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub schema_version: u32,
    pub dataset: DatasetSummary,
    pub concepts: Vec<Concept>,
    pub methods: Vec<MethodStatus>,
    pub students: Vec<StudentSummary>,
    /// Keyed by method label.
    pub doa: BTreeMap<String, DoaReport>,
    pub correlations: Vec<CorrelationEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub concepts: usize,
    pub forget_concepts: usize,
    pub retain_concepts: usize,
    pub exercises: usize,
    pub students: usize,
    pub synthetic_students: usize,
    pub responses: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStatus {
    pub method: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_accuracy: Option<f64>,
}

/// QA accuracies in percent; `None` when the slice has no entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSummary {
    pub all: Option<f64>,
    pub forget: Option<f64>,
    pub retain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodState {
    /// Knowledge state in catalog order.
    pub state: Vec<f64>,
    /// Mean over forget concepts.
    pub mastery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSummary {
    pub ms_fs: Option<f64>,
    pub raw: BTreeMap<String, f64>,
    pub cumulative: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub id: String,
    pub synthetic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
    pub qa: QaSummary,
    /// Keyed by method label.
    pub methods: BTreeMap<String, MethodState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fewshot: Option<FewShotSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub prompt_version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub generated_at_unix: u64,
    /// SHA-256 of the report serialized without this block.
    pub content_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

impl DiagnosisReport {
    pub fn body_json(&self) -> String {
        let body = DiagnosisReport {
            provenance: None,
            ..self.clone()
        };
        let mut text = serde_json::to_string_pretty(&body).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(self.body_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Per-student metric columns over non-synthetic students, in student order.
    pub fn columns(&self) -> BTreeMap<String, Vec<Option<f64>>> {
        let real: Vec<&StudentSummary> = self.students.iter().filter(|s| !s.synthetic).collect();
        let mut cols = BTreeMap::new();
        cols.insert("qa_forget".to_string(), real.iter().map(|s| s.qa.forget).collect());
        cols.insert("qa_retain".to_string(), real.iter().map(|s| s.qa.retain).collect());
        for m in self.methods.iter().filter(|m| m.status == Status::Ok) {
            cols.insert(
                format!("ms_{}", m.method),
                real.iter()
                    .map(|s| s.methods.get(&m.method).map(|st| st.mastery))
                    .collect(),
            );
        }
        if self.students.iter().any(|s| s.fewshot.is_some()) {
            cols.insert(
                "ms_fs".to_string(),
                real.iter()
                    .map(|s| s.fewshot.as_ref().and_then(|f| f.ms_fs))
                    .collect(),
            );
        }
        cols.retain(|_, v: &mut Vec<Option<f64>>| v.iter().any(Option::is_some));
        cols
    }
}

/// Pearson r and p for one column pair over rows where both are present.
pub fn correlate_pair(x_name: &str, x: &[Option<f64>], y_name: &str, y: &[Option<f64>]) -> CorrelationEntry {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .unzip();
    let n = xs.len();
    match pearson(&xs, &ys) {
        Ok(c) => CorrelationEntry {
            x: x_name.into(),
            y: y_name.into(),
            n,
            r: Some(c.r),
            p: Some(c.p),
            note: None,
        },
        Err(e) => CorrelationEntry {
            x: x_name.into(),
            y: y_name.into(),
            n,
            r: None,
            p: None,
            note: Some(e.to_string()),
        },
    }
}

/// Every unordered pair of columns, in key order.
pub fn pairwise(columns: &BTreeMap<String, Vec<Option<f64>>>) -> Vec<CorrelationEntry> {
    let names: Vec<&String> = columns.keys().collect();
    let mut out = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            out.push(correlate_pair(a, &columns[*a], b, &columns[*b]));
        }
    }
    out
}

pub fn correlations_csv(rows: &[CorrelationEntry]) -> String {
    let mut s = String::from("x,y,n,r,p\n");
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for c in rows {
        let _ = writeln!(s, "{},{},{},{},{}", c.x, c.y, c.n, fmt(c.r), fmt(c.p));
    }
    s
}

/// `student,method,<concept ids...>` with one row per student and method.
pub fn states_csv(report: &DiagnosisReport) -> String {
    let mut s = String::from("student,method");
    for c in &report.concepts {
        s.push(',');
        s.push_str(&c.id);
    }
    s.push('\n');
    for st in &report.students {
        for (method, ms) in &st.methods {
            let _ = write!(s, "{},{}", st.id, method);
            for v in &ms.state {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
    }
    s
}

pub fn doa_csv(report: &DoaReport) -> String {
    let mut s = String::from("concept,doa,comparisons\n");
    for c in &report.per_concept {
        let doa = c.doa.map_or(String::new(), |d| format!("{d:.6}"));
        let _ = writeln!(s, "{},{},{}", c.concept, doa, c.z);
    }
    let overall = report.overall.map_or(String::new(), |d| format!("{d:.6}"));
    let _ = writeln!(s, "overall,{overall},");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub method: String,
    pub lineage: String,
    pub step: u32,
    pub student: String,
    pub values: Vec<f64>,
}

/// Chart-ready knowledge states of checkpoint students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarData {
    pub concepts: Vec<String>,
    pub series: Vec<RadarSeries>,
}

pub fn radar(report: &DiagnosisReport) -> RadarData {
    let mut series: Vec<RadarSeries> = report
        .students
        .iter()
        .filter(|s| !s.synthetic)
        .filter_map(|s| s.lineage.as_ref().map(|l| (s, l)))
        .flat_map(|(s, l)| {
            s.methods.iter().map(move |(m, st)| RadarSeries {
                method: m.clone(),
                lineage: l.method.clone(),
                step: l.step,
                student: s.id.clone(),
                values: st.state.clone(),
            })
        })
        .collect();
    series.sort_by(|a, b| (&a.method, &a.lineage, a.step, &a.student).cmp(&(&b.method, &b.lineage, b.step, &b.student)));
    RadarData {
        concepts: report.concepts.iter().map(|c| c.id.clone()).collect(),
        series,
    }
}

/// Structural check of a report document against the current schema.
/// Returns every problem found.
pub fn check_schema(doc: &Value) -> Vec<String> {
    let mut problems = Vec::new();
    let mut structural = Vec::new();
    let Some(obj) = doc.as_object() else {
        return vec!["report is not a JSON object".into()];
    };
    match obj.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => problems.push(format!("unsupported schema_version {v}")),
        None => problems.push("missing schema_version".into()),
    }
    let expect = |key: &str, ok: fn(&Value) -> bool, what: &str, problems: &mut Vec<String>| match obj.get(key) {
        Some(v) if ok(v) => {}
        Some(_) => problems.push(format!("`{key}` is not {what}")),
        None => problems.push(format!("missing `{key}`")),
    };
    expect("dataset", Value::is_object, "an object", &mut structural);
    expect("concepts", Value::is_array, "an array", &mut structural);
    expect("methods", Value::is_array, "an array", &mut structural);
    expect("students", Value::is_array, "an array", &mut structural);
    expect("doa", Value::is_object, "an object", &mut structural);
    expect("correlations", Value::is_array, "an array", &mut structural);
    expect("provenance", Value::is_object, "an object", &mut structural);
    if !structural.is_empty() {
        problems.extend(structural);
        return problems;
    }
    let k = obj["concepts"].as_array().map_or(0, Vec::len);
    let method_labels: Vec<&str> = obj["methods"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|m| m.get("method").and_then(Value::as_str))
        .collect();
    for (i, s) in obj["students"].as_array().into_iter().flatten().enumerate() {
        let Some(methods) = s.get("methods").and_then(Value::as_object) else {
            problems.push(format!("students[{i}] has no methods map"));
            continue;
        };
        for (m, st) in methods {
            if !method_labels.contains(&m.as_str()) {
                problems.push(format!("students[{i}] reports unknown method `{m}`"));
            }
            if st.get("state").and_then(Value::as_array).map(Vec::len) != Some(k) {
                problems.push(format!("students[{i}].methods.{m}.state does not have {k} values"));
            }
            if st.get("mastery").is_none() {
                problems.push(format!("students[{i}].methods.{m} has no mastery"));
            }
        }
        if s.get("qa").and_then(Value::as_object).is_none() {
            problems.push(format!("students[{i}] has no qa block"));
        }
    }
    let prov = &obj["provenance"];
    for key in ["tool_version", "config_sha256", "seeds", "inputs", "content_sha256"] {
        if prov.get(key).is_none() {
            problems.push(format!("provenance is missing `{key}`"));
        }
    }
    problems
}

/// Parses a report file, validating schema and content hash.
pub fn load_checked(text: &str) -> CliResult<DiagnosisReport> {
    let doc: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(format!("report: {e}")))?;
    let problems = check_schema(&doc);
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }
    let report: DiagnosisReport =
        serde_json::from_value(doc).map_err(|e| CliError::Parse(format!("report: {e}")))?;
    let recorded = report
        .provenance
        .as_ref()
        .map(|p| p.content_sha256.clone())
        .unwrap_or_default();
    let actual = report.content_hash();
    if recorded != actual {
        return Err(CliError::Validation(format!(
            "content hash mismatch: recorded {recorded}, computed {actual}"
        )));
    }
    Ok(report)
}

/// Report text with the trailing provenance block cut off.
pub fn strip_provenance(text: &str) -> &str {
    match text.find("\n  \"provenance\"") {
        Some(i) => &text[..i],
        None => text,
    }
}

/// Plain-text summary table for the `report` command.
pub fn render_summary(report: &DiagnosisReport) -> String {
    let methods: Vec<&str> = report
        .methods
        .iter()
        .filter(|m| m.status == Status::Ok)
        .map(|m| m.method.as_str())
        .collect();
    let mut s = String::new();
    let d = &report.dataset;
    let _ = writeln!(
        s,
        "{} students ({} synthetic), {} exercises, {} concepts ({} forget, {} retain), {} responses",
        d.students, d.synthetic_students, d.exercises, d.concepts, d.forget_concepts, d.retain_concepts, d.responses
    );
    for m in &report.methods {
        match &m.error {
            Some(e) => {
                let _ = writeln!(s, "method {}: failed ({e})", m.method);
            }
            None => {
                let doa = report
                    .doa
                    .get(&m.method)
                    .and_then(|r| r.overall)
                    .map_or("n/a".to_string(), |v| format!("{v:.3}"));
                let _ = writeln!(s, "method {}: ok, DOA {doa}", m.method);
            }
        }
    }
    let _ = write!(s, "\n{:<28} {:>9} {:>9}", "student", "qa_forget", "qa_retain");
    for m in &methods {
        let _ = write!(s, " {:>10}", format!("ms_{m}"));
    }
    s.push('\n');
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    for st in report.students.iter().filter(|s| !s.synthetic) {
        let _ = write!(s, "{:<28} {:>9} {:>9}", st.id, pct(st.qa.forget), pct(st.qa.retain));
        for m in &methods {
            let v = st.methods.get(*m).map(|x| 100.0 * x.mastery);
            let _ = write!(s, " {:>10}", pct(v));
        }
        s.push('\n');
    }
    if !report.correlations.is_empty() {
        s.push_str("\ncorrelations\n");
        for c in &report.correlations {
            match (c.r, c.p) {
                (Some(r), Some(p)) => {
                    let _ = writeln!(s, "  {} vs {}: r = {r:.3}, p = {p:.3} (n = {})", c.x, c.y, c.n);
                }
                _ => {
                    let _ = writeln!(s, "  {} vs {}: undefined (n = {})", c.x, c.y, c.n);
                }
            }
        }
    }
    s
}
