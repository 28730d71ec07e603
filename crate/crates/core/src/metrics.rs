//! Reliability and agreement metrics: degree of agreement (DOA), prediction
//! and QA accuracy, Pearson correlation with a t-test p-value, Spearman rank
//! correlation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConceptCatalog, ConceptKind, KnowledgeState, Observation, QMatrix, ResponseLog};

/// Anything that scores a (student, exercise) pair by index.
pub trait Predictor {
    fn probability(&self, student: usize, exercise: usize, qmatrix: &QMatrix) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDoa {
    pub concept: String,
    pub doa: Option<f64>,
    /// Number of valid comparisons.
    pub z: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaReport {
    pub per_concept: Vec<ConceptDoa>,
    /// Mean over concepts with a defined DOA.
    pub overall: Option<f64>,
}

/// Response lookup: `responses[s][j]` is `None` when not attempted.
struct ResponseTable {
    responses: Vec<Vec<Option<bool>>>,
}

impl ResponseTable {
    fn new(states: &[KnowledgeState], log: &ResponseLog, qmatrix: &QMatrix) -> Self {
        let rows: HashMap<&str, usize> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.student_id.as_str(), i))
            .collect();
        let exercises = qmatrix.exercise_index_map();
        let mut responses = vec![vec![None; qmatrix.n_exercises()]; states.len()];
        for r in log.entries() {
            if let (Some(&s), Some(&j)) = (rows.get(r.student.as_str()), exercises.get(&r.exercise)) {
                responses[s][j] = Some(r.score == 1);
            }
        }
        Self { responses }
    }
}

fn doa_counts(states: &[KnowledgeState], table: &ResponseTable, qmatrix: &QMatrix, k: usize) -> (u64, u64) {
    let items: Vec<usize> = (0..qmatrix.n_exercises()).filter(|&j| qmatrix.tests(j, k)).collect();
    let mut num = 0u64;
    let mut z = 0u64;
    for (a, sa) in states.iter().enumerate() {
        let ra = &table.responses[a];
        for (b, sb) in states.iter().enumerate() {
            if sa.values[k].partial_cmp(&sb.values[k]) != Some(std::cmp::Ordering::Greater) {
                continue;
            }
            let rb = &table.responses[b];
            for &j in &items {
                if let (Some(x), Some(y)) = (ra[j], rb[j]) {
                    if x != y {
                        z += 1;
                        if x {
                            num += 1;
                        }
                    }
                }
            }
        }
    }
    (num, z)
}

fn check_states(states: &[KnowledgeState], qmatrix: &QMatrix, k: usize) -> Result<()> {
    if states.len() < 2 {
        return Err(Error::InvalidArgument("DOA needs at least two students".into()));
    }
    if k >= qmatrix.n_concepts() {
        return Err(Error::InvalidArgument(format!(
            "concept index {k} out of range ({})",
            qmatrix.n_concepts()
        )));
    }
    if let Some(s) = states.iter().find(|s| s.values.len() != qmatrix.n_concepts()) {
        return Err(Error::Dimension(format!(
            "state for `{}` has {} values",
            s.student_id,
            s.values.len()
        )));
    }
    Ok(())
}

/// Degree of agreement on concept `k`.
///
/// A valid comparison is an ordered pair `(a, b)` with `F_ak > F_bk` and an
/// exercise testing `k` that both attempted with different outcomes. DOA is
/// the fraction of valid comparisons where `a` answered correctly. Returns
/// `None` when there are no valid comparisons.
pub fn doa(states: &[KnowledgeState], log: &ResponseLog, qmatrix: &QMatrix, k: usize) -> Result<Option<f64>> {
    check_states(states, qmatrix, k)?;
    let table = ResponseTable::new(states, log, qmatrix);
    let (num, z) = doa_counts(states, &table, qmatrix, k);
    Ok((z > 0).then(|| num as f64 / z as f64))
}

pub fn doa_report(
    states: &[KnowledgeState],
    log: &ResponseLog,
    qmatrix: &QMatrix,
    catalog: &ConceptCatalog,
) -> Result<DoaReport> {
    check_states(states, qmatrix, 0)?;
    let table = ResponseTable::new(states, log, qmatrix);
    let per_concept: Vec<ConceptDoa> = catalog
        .ids()
        .enumerate()
        .map(|(k, id)| {
            let (num, z) = doa_counts(states, &table, qmatrix, k);
            ConceptDoa {
                concept: id.to_owned(),
                doa: (z > 0).then(|| num as f64 / z as f64),
                z,
            }
        })
        .collect();
    let defined: Vec<f64> = per_concept.iter().filter_map(|c| c.doa).collect();
    let overall = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(DoaReport {
        per_concept,
        overall,
    })
}

/// Fraction of entries where `p >= threshold` matches the observed outcome.
pub fn prediction_accuracy<P: Predictor + ?Sized>(
    model: &P,
    heldout: &[Observation],
    qmatrix: &QMatrix,
    threshold: f64,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Empty("held-out log"));
    }
    let hits = heldout
        .iter()
        .filter(|o| (model.probability(o.student, o.exercise, qmatrix) >= threshold) == o.correct)
        .count();
    Ok(hits as f64 / heldout.len() as f64)
}

/// Which exercises count toward a QA accuracy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaFilter {
    All,
    Kind(ConceptKind),
    Domain(String),
}

impl QaFilter {
    /// An exercise passes if it tests at least one matching concept.
    fn admits(&self, qmatrix: &QMatrix, exercise: usize, catalog: &ConceptCatalog) -> bool {
        let concepts = catalog.concepts();
        qmatrix.tested_concepts(exercise).into_iter().any(|k| match self {
            Self::All => true,
            Self::Kind(kind) => concepts[k].kind == *kind,
            Self::Domain(d) => concepts[k].domain == *d,
        })
    }
}

/// Percentage of correct answers by `student` over exercises admitted by `filter`.
pub fn qa_accuracy(
    log: &ResponseLog,
    student: &str,
    filter: &QaFilter,
    qmatrix: &QMatrix,
    catalog: &ConceptCatalog,
) -> Result<f64> {
    let exercises = qmatrix.exercise_index_map();
    let (mut n, mut correct) = (0usize, 0usize);
    for r in log.for_student(student) {
        let Some(&j) = exercises.get(&r.exercise) else {
            continue;
        };
        if filter.admits(qmatrix, j, catalog) {
            n += 1;
            correct += usize::from(r.score == 1);
        }
    }
    if n == 0 {
        return Err(Error::Empty("no entries after filtering"));
    }
    Ok(100.0 * correct as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value from the t-distribution with `n - 2` degrees of freedom.
    pub p: f64,
    pub n: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation with a two-sided t-test p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("pearson needs n >= 3, got {n}")));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("zero variance input".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if 1.0 - r * r <= 0.0 {
        0.0
    } else {
        let t2 = r * r * df / (1.0 - r * r);
        student_t_two_sided(t2, df)
    };
    Ok(Correlation { r, p, n })
}

/// Two-sided tail probability `P(|T| >= t)` given `t^2`.
pub fn student_t_two_sided(t_squared: f64, df: f64) -> f64 {
    if t_squared.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / (df + t_squared), df / 2.0, 0.5)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the continued fraction converges fast for x < (a+1)/(a+b+2)
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + even * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + even / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + odd * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + odd / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Average ranks (1-based), ties share their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(pearson(&ranks(x), &ranks(y))?.r)
}
