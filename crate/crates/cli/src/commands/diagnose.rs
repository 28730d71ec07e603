use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cogdiag::icdm::{self, TrainedIcdm};
use cogdiag::metrics::doa_report;
use cogdiag::ncdm::{self, TrainedCdm};
use cogdiag::tracer::{self, FewShotScores, TraceConfig, TranscriptEntry, PROMPT_VERSION};
use cogdiag::{ConceptKind, Dataset, DiagnosisMethod, KnowledgeState, Response};

use super::{ensure_dir, read_inputs, write_text};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{
    doa_csv, pairwise, radar, sha256_hex, states_csv, correlations_csv, DatasetSummary, DiagnosisReport,
    FewShotSummary, InputDigest, MethodState, MethodStatus, Provenance, QaSummary, Status, StudentSummary,
    SCHEMA_VERSION,
};

/// Result of one diagnose run. `failure` carries the error of the first
/// failed method; the report is complete either way.
pub struct DiagnoseRun {
    pub report: DiagnosisReport,
    pub failure: Option<CliError>,
    pub files: Vec<PathBuf>,
}

enum Outcome {
    Ncdm(TrainedCdm),
    Icdm(TrainedIcdm),
    FewShot(Vec<FewShotScores>),
}

fn is_transport_error(attempt: &str) -> bool {
    attempt.starts_with("<error:")
}

/// Traces every eligible student. The transcript collected so far is
/// returned even when the run fails.
fn run_fewshot(data: &Dataset, config: &RunConfig) -> (CliResult<Vec<FewShotScores>>, Vec<TranscriptEntry>) {
    let mut transcript = Vec::new();
    let scores = trace_students(data, config, &mut transcript);
    (scores, transcript)
}

fn trace_students(
    data: &Dataset,
    config: &RunConfig,
    transcript: &mut Vec<TranscriptEntry>,
) -> CliResult<Vec<FewShotScores>> {
    let judge = config.fewshot.judge.build()?;
    let map = config.fewshot.label_scores.resolve()?;
    let mut per_student: HashMap<&str, Vec<Response>> = HashMap::new();
    for r in data.log().entries() {
        per_student.entry(r.student.as_str()).or_default().push(r.clone());
    }
    let mut scores = Vec::new();
    for s in data.students() {
        if s.synthetic && !config.fewshot.include_synthetic {
            continue;
        }
        let Some(entries) = per_student.get(s.id.as_str()) else {
            continue;
        };
        let trace_config = TraceConfig {
            sample_size: config.fewshot.trace.sample_size.min(entries.len()),
            ..config.fewshot.trace.clone()
        };
        let result = tracer::trace(entries, data.qmatrix(), judge.as_ref(), &trace_config)?;
        transcript.extend(result.transcript.iter().cloned());
        let unreachable = result
            .transcript
            .iter()
            .find(|t| !t.attempts.is_empty() && t.attempts.iter().all(|a| is_transport_error(a)));
        if let Some(t) = unreachable {
            return Err(CliError::Judge(format!(
                "no reply for `{}` on `{}`: {}",
                t.student_id,
                t.exercise_id,
                t.error.as_deref().unwrap_or("unknown error")
            )));
        }
        if !result.verdicts.is_empty() {
            scores.push(tracer::score_states(&s.id, &result.verdicts, &map, data.catalog())?);
        }
    }
    Ok(scores)
}

fn run_method(method: DiagnosisMethod, data: &Dataset, config: &RunConfig) -> (CliResult<Outcome>, Vec<TranscriptEntry>) {
    match method {
        DiagnosisMethod::Ncdm => (ncdm::train(data, &config.ncdm).map(Outcome::Ncdm).map_err(Into::into), Vec::new()),
        DiagnosisMethod::Icdm => (
            icdm::train_inductive(data, &config.icdm).map(Outcome::Icdm).map_err(Into::into),
            Vec::new(),
        ),
        DiagnosisMethod::FewShot => {
            let (scores, transcript) = run_fewshot(data, config);
            (scores.map(Outcome::FewShot), transcript)
        }
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    n: usize,
    correct: usize,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
    }

    fn percent(self) -> Option<f64> {
        (self.n > 0).then(|| 100.0 * self.correct as f64 / self.n as f64)
    }
}

/// QA accuracy per student in one pass over the log.
fn qa_by_student(data: &Dataset) -> Vec<QaSummary> {
    let q = data.qmatrix();
    let kinds: Vec<ConceptKind> = data.catalog().concepts().iter().map(|c| c.kind).collect();
    let admits = |e: usize, kind: ConceptKind| q.tested_concepts(e).into_iter().any(|k| kinds[k] == kind);
    let forget: Vec<bool> = (0..q.n_exercises()).map(|e| admits(e, ConceptKind::Forget)).collect();
    let retain: Vec<bool> = (0..q.n_exercises()).map(|e| admits(e, ConceptKind::Retain)).collect();
    let mut tallies = vec![[Tally::default(); 3]; data.n_students()];
    for o in data.observations() {
        let t = &mut tallies[o.student];
        t[0].add(o.correct);
        if forget[o.exercise] {
            t[1].add(o.correct);
        }
        if retain[o.exercise] {
            t[2].add(o.correct);
        }
    }
    tallies
        .into_iter()
        .map(|[all, f, r]| QaSummary {
            all: all.percent(),
            forget: f.percent(),
            retain: r.percent(),
        })
        .collect()
}

fn file_digest(role: &str, path: &Path) -> CliResult<InputDigest> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    Ok(InputDigest {
        role: role.into(),
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_hex(&bytes),
    })
}

fn mastery_of(values: &[f64], forget: &[usize]) -> f64 {
    forget.iter().map(|&k| values[k]).sum::<f64>() / forget.len() as f64
}

/// Runs every configured method and assembles the report. Nothing is written.
pub fn diagnose(config: &RunConfig) -> CliResult<(DiagnosisReport, Vec<MethodArtifacts>, Option<CliError>)> {
    config.validate()?;
    let data = read_inputs(&config.catalog, &config.qmatrix, &config.logs, config.registry.as_deref())?.into_dataset()?;
    let forget = data.catalog().forget_indices();
    if forget.is_empty() {
        return Err(cogdiag::Error::NoForgetConcepts.into());
    }

    let outcomes: Vec<(DiagnosisMethod, CliResult<Outcome>, Vec<TranscriptEntry>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .methods
            .iter()
            .map(|&m| {
                let data = &data;
                (m, scope.spawn(move || run_method(m, data, config)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(m, h)| {
                let (res, transcript) = h.join().unwrap_or_else(|_| {
                    (Err(CliError::Runtime(format!("{m} worker panicked"))), Vec::new())
                });
                (m, res, transcript)
            })
            .collect()
    });

    let students = data.students();
    let qa = qa_by_student(&data);
    let mut summaries: Vec<StudentSummary> = students
        .iter()
        .zip(qa)
        .map(|(s, qa)| StudentSummary {
            id: s.id.clone(),
            synthetic: s.synthetic,
            lineage: s.lineage.clone(),
            qa,
            methods: BTreeMap::new(),
            fewshot: None,
        })
        .collect();

    let mut statuses = Vec::new();
    let mut doa = BTreeMap::new();
    let mut artifacts = Vec::new();
    let mut failure = None;
    for (method, outcome, transcript) in outcomes {
        if method == DiagnosisMethod::FewShot {
            artifacts.push(MethodArtifacts::Transcript(transcript));
        }
        let label = method.label().to_string();
        let mut status = MethodStatus {
            method: label.clone(),
            status: Status::Ok,
            error: None,
            epochs: None,
            final_train_loss: None,
            validation_accuracy: None,
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                status.status = Status::Failed;
                status.error = Some(e.to_string());
                statuses.push(status);
                failure.get_or_insert(e);
                continue;
            }
        };
        let states: Vec<KnowledgeState> = match &outcome {
            Outcome::Ncdm(t) => {
                status.epochs = Some(t.trace.epochs().len());
                status.final_train_loss = t.trace.last().map(|r| r.train_loss);
                status.validation_accuracy = t.trace.last().and_then(|r| r.val_acc);
                ncdm::extract_states(&t.params)
            }
            Outcome::Icdm(t) => {
                status.epochs = Some(t.trace.epochs().len());
                status.final_train_loss = t.trace.last().map(|r| r.train_loss);
                status.validation_accuracy = t.trace.last().and_then(|r| r.val_acc);
                t.model.extract_states()
            }
            Outcome::FewShot(scores) => scores.iter().map(|s| s.state.clone()).collect(),
        };
        if let Outcome::FewShot(scores) = &outcome {
            for sc in scores {
                if let Some(i) = data.student_index(&sc.state.student_id) {
                    summaries[i].fewshot = Some(FewShotSummary {
                        ms_fs: sc.ms_fs,
                        raw: sc.raw.clone(),
                        cumulative: sc.cumulative.clone(),
                    });
                }
            }
        }
        for st in &states {
            if let Some(i) = data.student_index(&st.student_id) {
                summaries[i].methods.insert(
                    label.clone(),
                    MethodState {
                        mastery: mastery_of(&st.values, &forget),
                        state: st.values.clone(),
                    },
                );
            }
        }
        if method != DiagnosisMethod::FewShot {
            if let Ok(r) = doa_report(&states, data.log(), data.qmatrix(), data.catalog()) {
                doa.insert(label.clone(), r);
            }
        }
        statuses.push(status);
        match outcome {
            Outcome::Ncdm(t) => artifacts.push(MethodArtifacts::Ncdm(Box::new(t))),
            Outcome::Icdm(t) => artifacts.push(MethodArtifacts::Icdm(Box::new(t))),
            Outcome::FewShot(_) => {}
        }
    }

    let catalog = data.catalog();
    let mut report = DiagnosisReport {
        schema_version: SCHEMA_VERSION,
        dataset: DatasetSummary {
            concepts: catalog.len(),
            forget_concepts: forget.len(),
            retain_concepts: catalog.indices_of_kind(ConceptKind::Retain).len(),
            exercises: data.qmatrix().n_exercises(),
            students: students.len(),
            synthetic_students: students.iter().filter(|s| s.synthetic).count(),
            responses: data.log().len(),
        },
        concepts: catalog.concepts().to_vec(),
        methods: statuses,
        students: summaries,
        doa,
        correlations: Vec::new(),
        provenance: None,
    };
    report.correlations = pairwise(&report.columns());

    let mut inputs = vec![
        file_digest("catalog", &config.catalog)?,
        file_digest("qmatrix", &config.qmatrix)?,
        file_digest("logs", &config.logs)?,
    ];
    if let Some(r) = &config.registry {
        inputs.push(file_digest("registry", r)?);
    }
    let config_json = serde_json::to_string(config).expect("config serializes");
    report.provenance = Some(Provenance {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        prompt_version: PROMPT_VERSION.into(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        seeds: BTreeMap::from([
            ("global".to_string(), config.seed),
            ("ncdm".to_string(), config.ncdm.seed),
            ("icdm".to_string(), config.icdm.seed),
            ("fewshot".to_string(), config.fewshot.trace.seed),
        ]),
        inputs,
        generated_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        content_sha256: report.content_hash(),
    });
    Ok((report, artifacts, failure))
}

/// Per-method outputs written next to the report.
pub enum MethodArtifacts {
    Ncdm(Box<TrainedCdm>),
    Icdm(Box<TrainedIcdm>),
    Transcript(Vec<TranscriptEntry>),
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    text
}

/// Runs [`diagnose`] and writes every output file into `config.output_dir`.
pub fn run(config: &RunConfig) -> CliResult<DiagnoseRun> {
    let (report, artifacts, failure) = diagnose(config)?;
    let out = &config.output_dir;
    ensure_dir(out)?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> CliResult<()> {
        let p = out.join(name);
        write_text(&p, text)?;
        files.push(p);
        Ok(())
    };
    put("report.json", &report.to_json())?;
    put("states.csv", &states_csv(&report))?;
    put("radar.json", &pretty(&radar(&report)))?;
    put("correlations.csv", &correlations_csv(&report.correlations))?;
    for (method, r) in &report.doa {
        put(&format!("doa_{method}.csv"), &doa_csv(r))?;
    }
    for a in &artifacts {
        match a {
            MethodArtifacts::Ncdm(t) => {
                put("ncdm_params.json", &pretty(&t.params))?;
                put("ncdm_trace.csv", &t.trace.to_csv())?;
            }
            MethodArtifacts::Icdm(t) => {
                put("icdm_model.json", &pretty(&t.model))?;
                put("icdm_trace.csv", &t.trace.to_csv())?;
                put("graph_summary.csv", &t.graph.summary_csv())?;
            }
            MethodArtifacts::Transcript(entries) => {
                let mut text = String::new();
                for e in entries {
                    text.push_str(&serde_json::to_string(e).expect("transcript serializes"));
                    text.push('\n');
                }
                put("transcripts.jsonl", &text)?;
            }
        }
    }
    Ok(DiagnoseRun {
        report,
        failure,
        files,
    })
}
