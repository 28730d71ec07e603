//! Ground-truth simulation: students with known mastery, seeded response
//! sampling, unlearning trajectories where each checkpoint becomes a student,
//! and synthetic-student augmentation by resampling a student's log.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::sigmoid;
use crate::model::{
    Concept, ConceptCatalog, ConceptKind, Lineage, QMatrix, Response, ResponseLog, StudentRecord,
};
use crate::rng;

/// Within-component standard deviation of simulated mastery.
pub const COMPONENT_SD: f64 = 0.1;

/// Fourteen forget concepts named after common attack-stage categories.
pub const DEFAULT_CONCEPTS: [&str; 14] = [
    "reconnaissance",
    "resource-development",
    "initial-access",
    "execution",
    "persistence",
    "privilege-escalation",
    "defense-evasion",
    "credential-access",
    "discovery",
    "lateral-movement",
    "collection",
    "command-and-control",
    "exfiltration",
    "impact",
];

pub fn default_catalog() -> ConceptCatalog {
    ConceptCatalog::new(
        DEFAULT_CONCEPTS
            .iter()
            .map(|id| Concept::new(*id, ConceptKind::Forget, "attack"))
            .collect(),
    )
    .expect("default catalog is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueStudent {
    pub student_id: String,
    pub mastery: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

impl TrueStudent {
    pub fn record(&self) -> StudentRecord {
        StudentRecord {
            id: self.student_id.clone(),
            lineage: self.lineage.clone(),
            synthetic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    Uniform,
    Selective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub label: String,
    pub steps: u32,
    pub mode: TrajectoryMode,
    /// Concept indices decayed by a selective trajectory.
    #[serde(default)]
    pub targeted: Vec<usize>,
    pub decay_rate: f64,
}

impl TrajectorySpec {
    pub fn uniform(label: impl Into<String>, decay_rate: f64) -> Self {
        Self {
            label: label.into(),
            steps: 4,
            mode: TrajectoryMode::Uniform,
            targeted: Vec::new(),
            decay_rate,
        }
    }

    pub fn selective(label: impl Into<String>, targeted: Vec<usize>, decay_rate: f64) -> Self {
        Self {
            label: label.into(),
            steps: 4,
            mode: TrajectoryMode::Selective,
            targeted,
            decay_rate,
        }
    }

    pub fn validate(&self, concepts: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("trajectory needs at least one step".into()));
        }
        if !(0.0..=1.0).contains(&self.decay_rate) {
            return Err(Error::InvalidArgument("decay_rate must be in [0,1]".into()));
        }
        if self.mode == TrajectoryMode::Selective && self.targeted.is_empty() {
            return Err(Error::InvalidArgument(
                "selective trajectory needs targeted concepts".into(),
            ));
        }
        if let Some(&k) = self.targeted.iter().find(|&&k| k >= concepts) {
            return Err(Error::InvalidArgument(format!("targeted concept {k} out of range")));
        }
        Ok(())
    }

    fn affects(&self, k: usize) -> bool {
        match self.mode {
            TrajectoryMode::Uniform => true,
            TrajectoryMode::Selective => self.targeted.contains(&k),
        }
    }

    /// Mastery after `step` decay steps.
    pub fn mastery_at(&self, base: &[f64], step: u32) -> Vec<f64> {
        let factor = (1.0 - self.decay_rate).powi(step as i32);
        base.iter()
            .enumerate()
            .map(|(k, &m)| if self.affects(k) { m * factor } else { m })
            .collect()
    }
}

/// Two-parameter logistic oracle: `p = sigmoid(a * (mean tested mastery - d_e))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    pub difficulty: Vec<f64>,
    pub discrimination: f64,
}

impl ResponseModel {
    pub fn random(exercises: usize, range: (f64, f64), discrimination: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, 11);
        Self {
            difficulty: (0..exercises).map(|_| r.gen_range(range.0..=range.1)).collect(),
            discrimination,
        }
    }

    pub fn probability(&self, mastery: &[f64], qmatrix: &QMatrix, exercise: usize) -> f64 {
        let row = qmatrix.row(exercise);
        let (sum, n) = row
            .iter()
            .zip(mastery)
            .filter(|(&q, _)| q == 1)
            .fold((0.0, 0usize), |(s, n), (_, &m)| (s + m, n + 1));
        let mean = sum / n.max(1) as f64;
        sigmoid(self.discrimination * (mean - self.difficulty[exercise]))
    }

    /// Expected fraction correct over all exercises.
    pub fn expected_accuracy(&self, mastery: &[f64], qmatrix: &QMatrix) -> f64 {
        let m = qmatrix.n_exercises();
        (0..m).map(|e| self.probability(mastery, qmatrix, e)).sum::<f64>() / m as f64
    }
}

/// Random Q-matrix where each exercise tests between 1 and `max_concepts`
/// concepts. The first `K` exercises cover each concept once.
pub fn random_qmatrix(
    catalog: &ConceptCatalog,
    exercises: usize,
    max_concepts: usize,
    seed: u64,
) -> QMatrix {
    let k = catalog.len();
    let max_concepts = max_concepts.clamp(1, k);
    let mut r = rng::stream(seed, 12);
    let mut rows = Vec::with_capacity(exercises);
    for e in 0..exercises {
        let mut row = vec![0u8; k];
        let count = r.gen_range(1..=max_concepts);
        if e < k {
            row[e] = 1;
        }
        let mut picks: Vec<usize> = (0..k).collect();
        picks.shuffle(&mut r);
        for c in picks {
            if row.iter().filter(|&&v| v == 1).count() >= count {
                break;
            }
            row[c] = 1;
        }
        rows.push(row);
    }
    let width = exercises.to_string().len().max(4);
    QMatrix::new(
        (0..exercises).map(|e| format!("q{e:0width$}")).collect(),
        catalog.ids().map(str::to_owned).collect(),
        rows,
    )
    .expect("generated q-matrix is valid")
}

/// Masteries drawn per concept from a two-component mixture with means
/// `0.5 ± separation / 2`, clamped to `[0,1]`.
pub fn sample_cohort(n: usize, concepts: usize, seed: u64, separation: f64) -> Result<Vec<TrueStudent>> {
    if n == 0 {
        return Err(Error::InvalidArgument("cohort needs at least one student".into()));
    }
    if !(0.0..=1.0).contains(&separation) {
        return Err(Error::InvalidArgument("separation must be in [0,1]".into()));
    }
    let noise = Normal::new(0.0, COMPONENT_SD).expect("valid sd");
    let width = n.to_string().len().max(3);
    Ok((0..n)
        .map(|i| {
            let mut r = rng::stream(seed, 1000 + i as u64);
            let mastery = (0..concepts)
                .map(|_| {
                    let mean = if r.gen_bool(0.5) {
                        0.5 + separation / 2.0
                    } else {
                        0.5 - separation / 2.0
                    };
                    (mean + noise.sample(&mut r)).clamp(0.0, 1.0)
                })
                .collect();
            TrueStudent {
                student_id: format!("s{i:0width$}"),
                mastery,
                lineage: None,
            }
        })
        .collect())
}

/// Every student answers every exercise once. Each student draws from its own
/// stream keyed by id, so adding students does not perturb the others.
pub fn sample_responses(
    students: &[TrueStudent],
    qmatrix: &QMatrix,
    model: &ResponseModel,
    seed: u64,
) -> Result<ResponseLog> {
    if model.difficulty.len() != qmatrix.n_exercises() {
        return Err(Error::Dimension(format!(
            "{} difficulties for {} exercises",
            model.difficulty.len(),
            qmatrix.n_exercises()
        )));
    }
    if let Some(e) = (0..qmatrix.n_exercises()).find(|&e| !qmatrix.row(e).contains(&1)) {
        return Err(Error::InvalidArgument(format!(
            "exercise `{}` tests no concept",
            qmatrix.exercise_ids()[e]
        )));
    }
    let mut log = ResponseLog::default();
    for s in students {
        if s.mastery.len() != qmatrix.n_concepts() {
            return Err(Error::Dimension(format!(
                "student `{}` has {} mastery values, expected {}",
                s.student_id,
                s.mastery.len(),
                qmatrix.n_concepts()
            )));
        }
        let mut r = rng::stream(seed, rng::hash_str(&s.student_id));
        for (e, id) in qmatrix.exercise_ids().iter().enumerate() {
            let p = model.probability(&s.mastery, qmatrix, e);
            log.push(Response::new(&s.student_id, id, r.gen::<f64>() < p));
        }
    }
    Ok(log)
}

/// Checkpoints `0..=steps` of one unlearning run; step 0 is the base model.
pub fn run_trajectory(
    base: &TrueStudent,
    spec: &TrajectorySpec,
    qmatrix: &QMatrix,
    model: &ResponseModel,
    seed: u64,
) -> Result<Vec<(TrueStudent, ResponseLog)>> {
    spec.validate(base.mastery.len())?;
    (0..=spec.steps)
        .map(|t| {
            let student = TrueStudent {
                student_id: format!("{}/{}/{}", base.student_id, spec.label, t),
                mastery: spec.mastery_at(&base.mastery, t),
                lineage: Some(Lineage {
                    method: spec.label.clone(),
                    step: t,
                }),
            };
            let log = sample_responses(std::slice::from_ref(&student), qmatrix, model, seed)?;
            Ok((student, log))
        })
        .collect()
}

/// Uniform decay rate whose final-step expected accuracy equals `target`,
/// found by bisection (expected accuracy is non-increasing in the rate).
pub fn match_uniform_decay(
    base: &[f64],
    steps: u32,
    target: f64,
    qmatrix: &QMatrix,
    model: &ResponseModel,
) -> Result<f64> {
    let acc = |rate: f64| {
        let spec = TrajectorySpec {
            steps,
            ..TrajectorySpec::uniform("", rate)
        };
        model.expected_accuracy(&spec.mastery_at(base, steps), qmatrix)
    };
    let (hi_acc, lo_acc) = (acc(0.0), acc(1.0));
    if target > hi_acc + 1e-12 || target < lo_acc - 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "target accuracy {target:.4} outside reachable range [{lo_acc:.4}, {hi_acc:.4}]"
        )));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if acc(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Resamples `source`'s entries into `n_copies` synthetic students. Each copy
/// receives `round(fraction * n)` (at least one) entries drawn without
/// replacement. The returned log is the input log plus the new entries.
pub fn augment_students(
    log: &ResponseLog,
    source: &StudentRecord,
    n_copies: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<StudentRecord>, ResponseLog)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument("sample_fraction must be in (0,1]".into()));
    }
    let entries: Vec<&Response> = log.for_student(&source.id).collect();
    if entries.is_empty() {
        return Err(Error::UnknownStudent(source.id.clone()));
    }
    let take = ((fraction * entries.len() as f64).round() as usize).clamp(1, entries.len());
    let mut r = rng::stream(seed, rng::hash_str(&source.id) ^ 0xa5a5);
    let mut records = Vec::with_capacity(n_copies);
    let mut out = log.clone();
    for c in 0..n_copies {
        let id = format!("{}#syn{c}", source.id);
        let mut picked = index::sample(&mut r, entries.len(), take).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| Response {
            student: id.clone(),
            exercise: entries[i].exercise.clone(),
            score: entries[i].score,
        }));
        records.push(StudentRecord {
            id,
            lineage: source.lineage.clone(),
            synthetic: true,
        });
    }
    Ok((records, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_q() -> (ConceptCatalog, QMatrix) {
        let c = default_catalog();
        let q = random_qmatrix(&c, 40, 2, 3);
        (c, q)
    }

    #[test]
    fn zero_separation_centers_means() {
        let cohort = sample_cohort(500, 3, 1, 0.0).unwrap();
        let mean: f64 =
            cohort.iter().flat_map(|s| &s.mastery).sum::<f64>() / (500.0 * 3.0);
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn cohort_is_seed_deterministic() {
        assert_eq!(
            sample_cohort(10, 4, 9, 0.6).unwrap(),
            sample_cohort(10, 4, 9, 0.6).unwrap()
        );
        assert_ne!(
            sample_cohort(10, 4, 9, 0.6).unwrap(),
            sample_cohort(10, 4, 10, 0.6).unwrap()
        );
    }

    #[test]
    fn separation_gives_bimodal_moments() {
        // 10k single-concept draws; the mixture has mean 0.5, two modes at
        // 0.1 and 0.9, and variance close to 0.16 + 0.01.
        let cohort = sample_cohort(10_000, 1, 4, 0.8).unwrap();
        let xs: Vec<f64> = cohort.iter().map(|s| s.mastery[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut hist = [0usize; 10];
        for x in &xs {
            hist[((x * 10.0) as usize).min(9)] += 1;
        }
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
        assert!((var - 0.167).abs() < 0.01, "{var}");
        // middle bins are nearly empty, outer bins carry the mass
        assert!(hist[4] + hist[5] < 100, "{hist:?}");
        assert!(hist[0] + hist[1] > 4000 && hist[8] + hist[9] > 4000, "{hist:?}");
    }

    #[test]
    fn probability_limits() {
        let (_, q) = small_q();
        let k = q.n_concepts();
        let model = ResponseModel {
            difficulty: vec![0.4; q.n_exercises()],
            discrimination: 10.0,
        };
        assert!((model.probability(&vec![0.4; k], &q, 0) - 0.5).abs() < 1e-15);
        let easy = ResponseModel {
            difficulty: vec![0.0; q.n_exercises()],
            discrimination: 10.0,
        };
        assert!(easy.probability(&vec![1.0; k], &q, 0) > 0.99);
    }

    #[test]
    fn empirical_rate_matches_probability() {
        let c = ConceptCatalog::new(vec![Concept::new("a", ConceptKind::Forget, "")]).unwrap();
        let q = random_qmatrix(&c, 10_000, 1, 0);
        let model = ResponseModel {
            difficulty: vec![0.3; 10_000],
            discrimination: 4.0,
        };
        let student = TrueStudent {
            student_id: "x".into(),
            mastery: vec![0.45],
            lineage: None,
        };
        let p = model.probability(&student.mastery, &q, 0);
        let log = sample_responses(&[student], &q, &model, 77).unwrap();
        let rate = log.entries().iter().filter(|r| r.score == 1).count() as f64 / 10_000.0;
        assert!((rate - p).abs() < 0.02, "rate {rate} p {p}");
    }

    #[test]
    fn trajectory_identity_and_halving() {
        let (_, q) = small_q();
        let model = ResponseModel::random(q.n_exercises(), (0.2, 0.8), 5.0, 1);
        let base = TrueStudent {
            student_id: "base".into(),
            mastery: vec![0.8; q.n_concepts()],
            lineage: None,
        };
        let still = run_trajectory(&base, &TrajectorySpec::uniform("none", 0.0), &q, &model, 3).unwrap();
        assert_eq!(still.len(), 5);
        for (s, _) in &still {
            assert_eq!(s.mastery, base.mastery);
        }
        let half = TrajectorySpec {
            steps: 1,
            ..TrajectorySpec::uniform("half", 0.5)
        };
        let run = run_trajectory(&base, &half, &q, &model, 3).unwrap();
        assert_eq!(run.len(), 2);
        assert!(run[1].0.mastery.iter().all(|&m| (m - 0.4).abs() < 1e-15));
        assert_eq!(run[1].0.lineage.as_ref().unwrap().step, 1);
    }

    #[test]
    fn selective_spares_untargeted_exactly() {
        let (c, q) = small_q();
        let model = ResponseModel::random(q.n_exercises(), (0.2, 0.8), 5.0, 1);
        let base = TrueStudent {
            student_id: "base".into(),
            mastery: (0..c.len()).map(|k| 0.5 + k as f64 * 0.03).collect(),
            lineage: None,
        };
        let de = c.index_of("defense-evasion").unwrap();
        let run =
            run_trajectory(&base, &TrajectorySpec::selective("ga", vec![de], 0.3), &q, &model, 5).unwrap();
        for (t, (s, _)) in run.iter().enumerate() {
            for k in 0..c.len() {
                if k == de {
                    let want = base.mastery[k] * 0.7f64.powi(t as i32);
                    assert!((s.mastery[k] - want).abs() < 1e-15);
                } else {
                    assert_eq!(s.mastery[k], base.mastery[k]);
                }
            }
        }
        assert!(run[4].0.mastery[de] < run[0].0.mastery[de]);
    }

    #[test]
    fn selective_requires_targets() {
        let spec = TrajectorySpec::selective("x", vec![], 0.3);
        assert!(spec.validate(3).is_err());
    }

    #[test]
    fn bisection_matches_expected_accuracy() {
        let (c, q) = small_q();
        let model = ResponseModel::random(q.n_exercises(), (0.2, 0.8), 6.0, 2);
        let base = vec![0.9; c.len()];
        let sel = TrajectorySpec::selective("sel", (0..11).collect(), 0.5);
        let target = model.expected_accuracy(&sel.mastery_at(&base, 4), &q);
        let rate = match_uniform_decay(&base, 4, target, &q, &model).unwrap();
        let uni = TrajectorySpec::uniform("uni", rate);
        let got = model.expected_accuracy(&uni.mastery_at(&base, 4), &q);
        assert!((got - target).abs() < 1e-9);
        let spared_gap = sel.mastery_at(&base, 4)[12] - uni.mastery_at(&base, 4)[12];
        assert!(spared_gap > 0.3, "{spared_gap}");
    }

    #[test]
    fn augmentation_counts_and_frequency() {
        let mut log = ResponseLog::default();
        for e in 0..10 {
            log.push(Response::new("src", format!("e{e}"), e % 3 == 0));
        }
        log.push(Response::new("other", "e0", true));
        let src = StudentRecord::checkpoint("src", "GA", 2);

        let (recs, full) = augment_students(&log, &src, 3, 1.0, 1).unwrap();
        for r in &recs {
            assert!(r.synthetic);
            let mut got: Vec<_> = full.for_student(&r.id).map(|x| (&x.exercise, x.score)).collect();
            let mut want: Vec<_> = log.for_student("src").map(|x| (&x.exercise, x.score)).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want);
        }

        let (recs, half) = augment_students(&log, &src, 100, 0.5, 2).unwrap();
        let mut counts = std::collections::HashMap::new();
        for r in &recs {
            let entries: Vec<_> = half.for_student(&r.id).collect();
            assert_eq!(entries.len(), 5);
            for x in entries {
                *counts.entry(x.exercise.clone()).or_insert(0usize) += 1;
            }
        }
        for e in 0..10 {
            let freq = counts[&format!("e{e}")] as f64 / 100.0;
            assert!((freq - 0.5).abs() <= 0.15, "e{e}: {freq}");
        }
        // source untouched
        assert_eq!(&half.entries()[..log.len()], log.entries());
    }

    #[test]
    fn augmentation_rejects_missing_source() {
        let log = ResponseLog::default();
        assert!(augment_students(&log, &StudentRecord::plain("x"), 1, 0.5, 0).is_err());
        assert!(augment_students(&log, &StudentRecord::plain("x"), 1, 0.0, 0).is_err());
    }
}
