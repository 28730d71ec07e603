//! Training-free few-shot knowledge tracing.
//!
//! A judge sees a handful of solved exercises, predicts the outcome of a
//! target exercise and labels the concepts it can assess. Labels are then
//! mapped to numbers and folded into a knowledge state.

mod judge;
mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

pub use judge::{HttpJudge, Judge, MockJudge, MockPolicy, TOKEN_ENV};
pub use prompt::{parse_prompt, parse_verdict, render, Shot, PROMPT_VERSION};

use crate::error::{Error, Result};
use crate::model::{ConceptCatalog, DiagnosisMethod, KnowledgeState, QMatrix, Response};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Good,
    Fair,
    Bad,
    Unknown,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Good => "good",
            Label::Fair => "fair",
            Label::Bad => "bad",
            Label::Unknown => "unknown",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "good" => Ok(Label::Good),
            "fair" => Ok(Label::Fair),
            "bad" => Ok(Label::Bad),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

/// Numeric value of each label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScoreMap {
    pub good: f64,
    pub fair: f64,
    pub bad: f64,
    pub unknown: f64,
}

impl Default for LabelScoreMap {
    fn default() -> Self {
        Self {
            good: 1.0,
            fair: 0.5,
            bad: -1.0,
            unknown: 0.0,
        }
    }
}

impl LabelScoreMap {
    /// Same as the default except that `fair` scores 0.
    pub fn appendix() -> Self {
        Self {
            fair: 0.0,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "appendix" => Ok(Self::appendix()),
            other => Err(Error::InvalidArgument(format!("unknown label preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.good, self.fair, self.bad, self.unknown];
        if all.iter().any(|v| !v.is_finite()) || !(self.good > self.fair && self.fair > self.bad) {
            return Err(Error::InvalidArgument(
                "label scores must be finite with good > fair > bad".into(),
            ));
        }
        Ok(())
    }

    pub fn score(&self, label: Label) -> f64 {
        match label {
            Label::Good => self.good,
            Label::Fair => self.fair,
            Label::Bad => self.bad,
            Label::Unknown => self.unknown,
        }
    }

    /// Rescales `[bad, good]` onto `[0, 1]`.
    pub fn normalize(&self, raw: f64) -> f64 {
        ((raw - self.bad) / (self.good - self.bad)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub exercise_id: String,
    pub predicted_correct: bool,
    pub labels: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JudgeVerdict {
    /// Placeholder recorded when the judge never produced a usable reply.
    pub fn unknown(exercise_id: &str, concepts: &[String], error: String) -> Self {
        Self {
            exercise_id: exercise_id.to_string(),
            predicted_correct: false,
            labels: concepts.iter().map(|c| (c.clone(), Label::Unknown)).collect(),
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub shots: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub max_in_flight: usize,
    pub max_retries: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            shots: 4,
            sample_size: 8,
            seed: 0,
            max_in_flight: 4,
            max_retries: 2,
        }
    }
}

/// Audit record of one judge interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub student_id: String,
    pub index: usize,
    pub exercise_id: String,
    pub prompt_version: String,
    pub prompt: String,
    /// Raw replies (or transport errors) in attempt order.
    pub attempts: Vec<String>,
    pub actual_correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub verdicts: Vec<JudgeVerdict>,
    pub transcript: Vec<TranscriptEntry>,
}

fn concept_ids(qmatrix: &QMatrix, exercise: usize) -> Vec<String> {
    qmatrix
        .tested_concepts(exercise)
        .into_iter()
        .map(|k| qmatrix.concept_ids()[k].clone())
        .collect()
}

struct Job {
    index: usize,
    target: usize,
    target_concepts: Vec<String>,
    allowed: BTreeSet<String>,
    prompt: String,
}

/// Traces one student. `entries` are that student's responses in log order.
pub fn trace(entries: &[Response], qmatrix: &QMatrix, judge: &dyn Judge, config: &TraceConfig) -> Result<TraceResult> {
    if config.sample_size > entries.len() {
        return Err(Error::InvalidArgument(format!(
            "sample_size {} exceeds the {} available entries",
            config.sample_size,
            entries.len()
        )));
    }
    if config.sample_size == 0 {
        return Ok(TraceResult {
            verdicts: Vec::new(),
            transcript: Vec::new(),
        });
    }
    let student = entries[0].student.clone();
    if entries.iter().any(|r| r.student != student) {
        return Err(Error::InvalidArgument("entries span several students".into()));
    }
    let exercise_index = qmatrix.exercise_index_map();
    let resolved: Vec<usize> = entries
        .iter()
        .map(|r| {
            exercise_index
                .get(&r.exercise)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("unresolved exercise `{}`", r.exercise)))
        })
        .collect::<Result<_>>()?;

    let stream = rng::hash_str(&student);
    let mut r = rng::stream(config.seed, stream);
    let mut targets = index::sample(&mut r, entries.len(), config.sample_size).into_vec();
    targets.sort_unstable();

    let mut jobs = Vec::with_capacity(targets.len());
    let mut seen = BTreeSet::new();
    for (i, &t) in targets.iter().enumerate() {
        let mut pool: Vec<usize> = (0..entries.len()).filter(|&j| j != t).collect();
        pool.shuffle(&mut rng::stream(config.seed, stream ^ (i as u64 + 1).wrapping_mul(0x9e37)));
        pool.truncate(config.shots);
        pool.sort_unstable();
        let shots: Vec<Shot> = pool
            .iter()
            .map(|&j| Shot {
                exercise_id: entries[j].exercise.clone(),
                concepts: concept_ids(qmatrix, resolved[j]),
                correct: entries[j].score == 1,
            })
            .collect();
        let target_concepts = concept_ids(qmatrix, resolved[t]);
        let mut allowed = seen.clone();
        allowed.extend(target_concepts.iter().cloned());
        allowed.extend(shots.iter().flat_map(|s| s.concepts.iter().cloned()));
        let prompt = render(&shots, &entries[t].exercise, &target_concepts, &allowed);
        seen.extend(target_concepts.iter().cloned());
        jobs.push(Job {
            index: i,
            target: t,
            target_concepts,
            allowed,
            prompt,
        });
    }

    let results: Mutex<Vec<Option<(JudgeVerdict, TranscriptEntry)>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = config.max_in_flight.max(1).min(jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let out = run_job(job, entries, &student, judge, config.max_retries);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(out);
            });
        }
    });
    let (verdicts, transcript) = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|o| o.expect("every job ran"))
        .unzip();
    Ok(TraceResult { verdicts, transcript })
}

fn run_job(
    job: &Job,
    entries: &[Response],
    student: &str,
    judge: &dyn Judge,
    max_retries: usize,
) -> (JudgeVerdict, TranscriptEntry) {
    let exercise_id = &entries[job.target].exercise;
    let mut attempts = Vec::new();
    let mut last_error = String::new();
    let mut verdict = None;
    for _ in 0..=max_retries {
        match judge.complete(&job.prompt) {
            Ok(text) => {
                let parsed = parse_verdict(&text, exercise_id, Some(&job.allowed));
                attempts.push(text);
                match parsed {
                    Ok(v) => {
                        verdict = Some(v);
                        break;
                    }
                    Err(e) => last_error = format!("malformed reply: {e}"),
                }
            }
            Err(e) => {
                last_error = e.to_string();
                attempts.push(format!("<error: {last_error}>"));
            }
        }
    }
    let verdict = verdict
        .unwrap_or_else(|| JudgeVerdict::unknown(exercise_id, &job.target_concepts, last_error));
    let entry = TranscriptEntry {
        student_id: student.to_string(),
        index: job.index,
        exercise_id: exercise_id.clone(),
        prompt_version: PROMPT_VERSION.to_string(),
        prompt: job.prompt.clone(),
        attempts,
        actual_correct: entries[job.target].score == 1,
        error: verdict.error.clone(),
    };
    (verdict, entry)
}

pub fn write_transcripts(path: &Path, entries: &[TranscriptEntry]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for e in entries {
        let line = serde_json::to_string(e).expect("transcript entries serialize");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Numbers derived from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotScores {
    /// Score of the latest label per labeled concept.
    pub raw: BTreeMap<String, f64>,
    /// Sum of the scores of every label per labeled concept.
    pub cumulative: BTreeMap<String, f64>,
    /// Latest-label scores rescaled to `[0,1]`; unlabeled concepts sit at 0.5.
    pub state: KnowledgeState,
    /// Mean of `state` over forget concepts.
    pub mastery: f64,
    /// Mean raw score over labeled forget concepts, times 100.
    pub ms_fs: Option<f64>,
}

pub fn score_states(
    student_id: &str,
    verdicts: &[JudgeVerdict],
    map: &LabelScoreMap,
    catalog: &ConceptCatalog,
) -> Result<FewShotScores> {
    if verdicts.is_empty() {
        return Err(Error::Empty("verdicts"));
    }
    map.validate()?;
    let mut raw = BTreeMap::new();
    let mut cumulative = BTreeMap::new();
    for v in verdicts {
        for (concept, &label) in &v.labels {
            if catalog.index_of(concept).is_none() {
                continue;
            }
            let s = map.score(label);
            raw.insert(concept.clone(), s);
            *cumulative.entry(concept.clone()).or_insert(0.0) += s;
        }
    }
    let values: Vec<f64> = catalog
        .ids()
        .map(|id| raw.get(id).map_or(0.5, |&s| map.normalize(s)))
        .collect();
    let forget = catalog.forget_indices();
    if forget.is_empty() {
        return Err(Error::NoForgetConcepts);
    }
    let mastery = forget.iter().map(|&k| values[k]).sum::<f64>() / forget.len() as f64;
    let ids: Vec<&str> = catalog.ids().collect();
    let labeled: Vec<f64> = forget.iter().filter_map(|&k| raw.get(ids[k]).copied()).collect();
    let ms_fs = (!labeled.is_empty()).then(|| 100.0 * labeled.iter().sum::<f64>() / labeled.len() as f64);
    Ok(FewShotScores {
        raw,
        cumulative,
        state: KnowledgeState {
            student_id: student_id.to_string(),
            values,
            method: DiagnosisMethod::FewShot,
        },
        mastery,
        ms_fs,
    })
}

#[cfg(test)]
mod tests;
