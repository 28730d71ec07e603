use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cogdiag::model::{write_json, write_logs};
use cogdiag::rng::derive_seed;
use cogdiag::simulate::{
    augment_students, default_catalog, match_uniform_decay, random_qmatrix, run_trajectory, sample_cohort,
    sample_responses, ResponseModel, TrajectoryMode, TrajectorySpec, TrueStudent,
};
use cogdiag::{Concept, ConceptCatalog, QMatrix, ResponseLog, StudentRecord};
use serde::{Deserialize, Serialize};

use super::ensure_dir;
use crate::config::read_structured;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub seed: u64,
    /// Defaults to the built-in 14-concept catalog.
    pub concepts: Option<Vec<Concept>>,
    pub exercises: usize,
    pub max_concepts_per_exercise: usize,
    pub difficulty_range: [f64; 2],
    pub discrimination: f64,
    pub cohort: CohortSpec,
    /// Mastery of the base checkpoint on every concept.
    pub base_mastery: f64,
    pub trajectories: Vec<TrajectoryEntry>,
    pub augment: AugmentSpec,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            concepts: None,
            exercises: 200,
            max_concepts_per_exercise: 2,
            difficulty_range: [0.2, 0.8],
            discrimination: 8.0,
            cohort: CohortSpec::default(),
            base_mastery: 0.9,
            trajectories: vec![TrajectoryEntry {
                label: "uniform".into(),
                mode: TrajectoryMode::Uniform,
                steps: 4,
                targeted: Vec::new(),
                decay_rate: Some(0.3),
                match_accuracy_of: None,
            }],
            augment: AugmentSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub students: usize,
    pub separation: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            students: 50,
            separation: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEntry {
    pub label: String,
    pub mode: TrajectoryMode,
    #[serde(default = "default_steps")]
    pub steps: u32,
    /// Concept ids (Selective only).
    #[serde(default)]
    pub targeted: Vec<String>,
    #[serde(default)]
    pub decay_rate: Option<f64>,
    /// Uniform only: solve the decay so the final expected accuracy equals
    /// that of the named trajectory.
    #[serde(default)]
    pub match_accuracy_of: Option<String>,
}

fn default_steps() -> u32 {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    /// Synthetic copies per trajectory checkpoint.
    pub copies: usize,
    pub fraction: f64,
    /// Also augment cohort students.
    pub include_cohort: bool,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            copies: 0,
            fraction: 0.5,
            include_cohort: false,
        }
    }
}

/// One generated student with its expected and realized accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub student_id: String,
    pub trajectory: Option<String>,
    pub step: Option<u32>,
    pub decay_rate: Option<f64>,
    pub expected_accuracy: f64,
    pub realized_accuracy: f64,
}

#[derive(Debug)]
pub struct SimOutput {
    pub catalog: ConceptCatalog,
    pub qmatrix: QMatrix,
    pub registry: Vec<StudentRecord>,
    pub log: ResponseLog,
    pub truth: Vec<TrueStudent>,
    pub rows: Vec<SummaryRow>,
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("invalid simulation spec: {e}"))
}

fn resolve_trajectories(
    spec: &SimSpec,
    catalog: &ConceptCatalog,
    base: &[f64],
    qmatrix: &QMatrix,
    model: &ResponseModel,
) -> CliResult<Vec<TrajectorySpec>> {
    let mut labels = std::collections::HashSet::new();
    for t in &spec.trajectories {
        if t.label.is_empty() || t.label.contains('/') || !labels.insert(t.label.as_str()) {
            return Err(invalid(format!("trajectory label `{}` is empty, contains `/` or repeats", t.label)));
        }
    }
    let direct = |t: &TrajectoryEntry| -> CliResult<TrajectorySpec> {
        let targeted = t
            .targeted
            .iter()
            .map(|id| catalog.index_of(id).ok_or_else(|| invalid(format!("unknown concept `{id}`"))))
            .collect::<CliResult<Vec<_>>>()?;
        let decay = t
            .decay_rate
            .ok_or_else(|| invalid(format!("trajectory `{}` needs decay_rate", t.label)))?;
        let s = TrajectorySpec {
            label: t.label.clone(),
            steps: t.steps,
            mode: t.mode,
            targeted,
            decay_rate: decay,
        };
        s.validate(catalog.len()).map_err(invalid)?;
        Ok(s)
    };
    spec.trajectories
        .iter()
        .map(|t| match &t.match_accuracy_of {
            None => direct(t),
            Some(other) => {
                if t.mode != TrajectoryMode::Uniform || t.decay_rate.is_some() {
                    return Err(invalid(format!(
                        "trajectory `{}`: match_accuracy_of needs a uniform trajectory without decay_rate",
                        t.label
                    )));
                }
                let reference = spec
                    .trajectories
                    .iter()
                    .find(|r| &r.label == other && r.match_accuracy_of.is_none())
                    .ok_or_else(|| invalid(format!("no directly specified trajectory `{other}`")))?;
                let reference = direct(reference)?;
                let target = model.expected_accuracy(&reference.mastery_at(base, reference.steps), qmatrix);
                let rate = match_uniform_decay(base, t.steps, target, qmatrix, model).map_err(invalid)?;
                let s = TrajectorySpec {
                    steps: t.steps,
                    ..TrajectorySpec::uniform(t.label.clone(), rate)
                };
                s.validate(catalog.len()).map_err(invalid)?;
                Ok(s)
            }
        })
        .collect()
}

/// Generates the whole world described by `spec`.
pub fn generate(spec: &SimSpec) -> CliResult<SimOutput> {
    let catalog = match &spec.concepts {
        Some(c) => ConceptCatalog::new(c.clone()).map_err(invalid)?,
        None => default_catalog(),
    };
    if spec.exercises == 0 {
        return Err(invalid("exercises must be positive"));
    }
    let [lo, hi] = spec.difficulty_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(invalid("difficulty_range must be an ordered pair"));
    }
    if !(spec.discrimination > 0.0 && spec.discrimination.is_finite()) {
        return Err(invalid("discrimination must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.base_mastery) {
        return Err(invalid("base_mastery must be in [0,1]"));
    }
    let k = catalog.len();
    let qmatrix = random_qmatrix(&catalog, spec.exercises, spec.max_concepts_per_exercise, derive_seed(spec.seed, 1));
    let model = ResponseModel::random(spec.exercises, (lo, hi), spec.discrimination, derive_seed(spec.seed, 2));
    let response_seed = derive_seed(spec.seed, 4);

    let mut truth = Vec::new();
    let mut registry = Vec::new();
    let mut log = ResponseLog::default();
    let mut rows = Vec::new();
    let mut augment_sources = Vec::new();

    if spec.cohort.students > 0 {
        let cohort = sample_cohort(spec.cohort.students, k, derive_seed(spec.seed, 3), spec.cohort.separation)
            .map_err(invalid)?;
        let cohort_log = sample_responses(&cohort, &qmatrix, &model, response_seed).map_err(invalid)?;
        log.extend(cohort_log.into_entries());
        for s in cohort {
            registry.push(s.record());
            if spec.augment.include_cohort {
                augment_sources.push(s.record());
            }
            rows.push((s.clone(), None::<(String, u32, f64)>));
            truth.push(s);
        }
    }

    let base = TrueStudent {
        student_id: "base".into(),
        mastery: vec![spec.base_mastery; k],
        lineage: None,
    };
    let trajectories = resolve_trajectories(spec, &catalog, &base.mastery, &qmatrix, &model)?;
    for t in &trajectories {
        for (student, slog) in run_trajectory(&base, t, &qmatrix, &model, response_seed).map_err(invalid)? {
            log.extend(slog.into_entries());
            registry.push(student.record());
            augment_sources.push(student.record());
            let step = student.lineage.as_ref().map_or(0, |l| l.step);
            rows.push((student.clone(), Some((t.label.clone(), step, t.decay_rate))));
            truth.push(student);
        }
    }

    if spec.augment.copies > 0 {
        let seed = derive_seed(spec.seed, 5);
        for src in &augment_sources {
            let (records, extended) =
                augment_students(&log, src, spec.augment.copies, spec.augment.fraction, seed).map_err(invalid)?;
            log = extended;
            registry.extend(records);
        }
    }

    let realized = |id: &str| {
        let (n, c) = log
            .for_student(id)
            .fold((0usize, 0usize), |(n, c), r| (n + 1, c + usize::from(r.score == 1)));
        c as f64 / n.max(1) as f64
    };
    let rows = rows
        .into_iter()
        .map(|(s, traj)| SummaryRow {
            realized_accuracy: realized(&s.student_id),
            expected_accuracy: model.expected_accuracy(&s.mastery, &qmatrix),
            trajectory: traj.as_ref().map(|t| t.0.clone()),
            step: traj.as_ref().map(|t| t.1),
            decay_rate: traj.map(|t| t.2),
            student_id: s.student_id,
        })
        .collect();
    Ok(SimOutput {
        catalog,
        qmatrix,
        registry,
        log,
        truth,
        rows,
    })
}

pub fn load_spec(path: Option<&Path>) -> CliResult<SimSpec> {
    match path {
        Some(p) => read_structured(p),
        None => Ok(SimSpec::default()),
    }
}

/// Writes catalog, Q-matrix, registry, logs and the ground-truth sidecar.
pub fn write(out: &SimOutput, dir: &Path) -> CliResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let files = ["catalog.json", "qmatrix.json", "registry.json", "logs.jsonl", "truth.json"].map(|f| dir.join(f));
    write_json(&files[0], &out.catalog)?;
    write_json(&files[1], &out.qmatrix)?;
    write_json(&files[2], &out.registry)?;
    write_logs(&files[3], &out.log)?;
    write_json(&files[4], &out.truth)?;
    Ok(files.to_vec())
}

/// Trajectory rows in full, cohort students as one aggregate line.
pub fn render_summary(out: &SimOutput) -> String {
    let mut s = String::new();
    let synthetic = out.registry.iter().filter(|r| r.synthetic).count();
    let _ = writeln!(
        s,
        "{} students ({} synthetic), {} exercises, {} concepts, {} responses",
        out.registry.len(),
        synthetic,
        out.qmatrix.n_exercises(),
        out.catalog.len(),
        out.log.len()
    );
    let cohort: Vec<&SummaryRow> = out.rows.iter().filter(|r| r.trajectory.is_none()).collect();
    if !cohort.is_empty() {
        let n = cohort.len() as f64;
        let _ = writeln!(
            s,
            "cohort: {} students, mean expected accuracy {:.4}, mean realized accuracy {:.4}",
            cohort.len(),
            cohort.iter().map(|r| r.expected_accuracy).sum::<f64>() / n,
            cohort.iter().map(|r| r.realized_accuracy).sum::<f64>() / n
        );
    }
    let _ = writeln!(
        s,
        "{:<24} {:<12} {:>4} {:>8} {:>9} {:>9}",
        "student", "trajectory", "step", "decay", "expected", "realized"
    );
    for r in out.rows.iter().filter(|r| r.trajectory.is_some()) {
        let _ = writeln!(
            s,
            "{:<24} {:<12} {:>4} {:>8.4} {:>9.4} {:>9.4}",
            r.student_id,
            r.trajectory.as_deref().unwrap_or(""),
            r.step.unwrap_or(0),
            r.decay_rate.unwrap_or(0.0),
            r.expected_accuracy,
            r.realized_accuracy
        );
    }
    s
}
