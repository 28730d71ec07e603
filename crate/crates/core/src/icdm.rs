//! Inductive cognitive diagnosis on a signed student/exercise graph.
//!
//! A student's factor vector is not a free parameter. It is read off the
//! graph: responses reachable within `k_hops` of the student are averaged per
//! concept, responses given by students `h` hops away are weighted by
//! `HOP_DECAY^h`, and the signed mean is mapped from `[-1,1]` to `[0,1]`.
//! Only the exercise side and the monotone network are trained, so a student
//! that was never seen during training can be diagnosed by adding their log
//! to the graph.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{
    bce, bce_dlogit, sigmoid, tested_lists, InteractionGrad, InteractionModel, Scratch,
};
use crate::metrics::Predictor;
use crate::model::{Dataset, DiagnosisMethod, KnowledgeState, Observation, QMatrix, ResponseLog};
use crate::ncdm::{evaluate, split, EpochRecord, TrainingTrace};
use crate::rng;

pub const FORMAT_VERSION: u32 = 1;
pub const HOP_DECAY: f64 = 0.5;
/// Value reported for a concept with no reachable evidence.
pub const NO_EVIDENCE: f64 = 0.5;

/// Bipartite response graph. Edge signs are `+1` (correct) and `-1` (wrong).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    students: Vec<String>,
    /// Per student: `(exercise, sign)` sorted.
    student_edges: Vec<Vec<(usize, i8)>>,
    /// Per Q-matrix exercise: `(student, sign)` sorted.
    exercise_edges: Vec<Vec<(usize, i8)>>,
}

/// Builds the graph over `students` (in that order). Every student must have
/// at least one entry and every entry must resolve.
pub fn build_graph(students: &[String], log: &ResponseLog, qmatrix: &QMatrix) -> Result<InteractionGraph> {
    let index: BTreeMap<&str, usize> = students.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if index.len() != students.len() {
        return Err(Error::InvalidArgument("duplicate student id".into()));
    }
    let exercise_index = qmatrix.exercise_index_map();
    let mut student_edges = vec![Vec::new(); students.len()];
    let mut exercise_edges = vec![Vec::new(); qmatrix.n_exercises()];
    for r in log.entries() {
        let s = *index
            .get(r.student.as_str())
            .ok_or_else(|| Error::UnknownStudent(r.student.clone()))?;
        let e = *exercise_index
            .get(&r.exercise)
            .ok_or_else(|| Error::InvalidArgument(format!("unresolved exercise `{}`", r.exercise)))?;
        let sign = if r.score == 1 { 1 } else { -1 };
        student_edges[s].push((e, sign));
        exercise_edges[e].push((s, sign));
    }
    if let Some(s) = student_edges.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!(
            "student `{}` has no responses",
            students[s]
        )));
    }
    student_edges.iter_mut().for_each(|v| v.sort_unstable());
    exercise_edges.iter_mut().for_each(|v| v.sort_unstable());
    Ok(InteractionGraph {
        students: students.to_vec(),
        student_edges,
        exercise_edges,
    })
}

impl InteractionGraph {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let ids: Vec<String> = data.students().iter().map(|s| s.id.clone()).collect();
        build_graph(&ids, data.log(), data.qmatrix())
    }

    /// Graph over every student in `log`, ordered by first appearance.
    pub fn from_log(log: &ResponseLog, qmatrix: &QMatrix) -> Result<Self> {
        build_graph(&log.student_ids(), log, qmatrix)
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.students.iter().position(|s| s == id)
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    /// Exercises with at least one edge.
    pub fn n_exercise_nodes(&self) -> usize {
        self.exercise_edges.iter().filter(|e| !e.is_empty()).count()
    }

    pub fn n_edges(&self) -> usize {
        self.student_edges.iter().map(Vec::len).sum()
    }

    pub fn student_edges(&self, student: usize) -> &[(usize, i8)] {
        &self.student_edges[student]
    }

    pub fn exercise_edges(&self, exercise: usize) -> &[(usize, i8)] {
        &self.exercise_edges[exercise]
    }

    /// Breadth-first distances from `student`, truncated at `max_hops`.
    /// Student nodes sit at even distances and exercise nodes at odd ones.
    pub fn distances(&self, student: usize, max_hops: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let mut ds = vec![None; self.students.len()];
        let mut de = vec![None; self.exercise_edges.len()];
        ds[student] = Some(0);
        let mut queue = VecDeque::from([(student, 0usize)]);
        while let Some((s, d)) = queue.pop_front() {
            if d + 1 > max_hops {
                continue;
            }
            for &(e, _) in &self.student_edges[s] {
                if de[e].is_some() {
                    continue;
                }
                de[e] = Some(d + 1);
                if d + 2 > max_hops {
                    continue;
                }
                for &(peer, _) in &self.exercise_edges[e] {
                    if ds[peer].is_none() {
                        ds[peer] = Some(d + 2);
                        queue.push_back((peer, d + 2));
                    }
                }
            }
        }
        (ds, de)
    }

    /// Node/edge counts and the student degree histogram as `section,key,value` CSV.
    pub fn summary_csv(&self) -> String {
        let positive = self.student_edges.iter().flatten().filter(|(_, s)| *s > 0).count();
        let mut out = String::from("section,key,value\n");
        let _ = writeln!(out, "count,students,{}", self.n_students());
        let _ = writeln!(out, "count,exercises,{}", self.n_exercise_nodes());
        let _ = writeln!(out, "count,edges,{}", self.n_edges());
        let _ = writeln!(out, "count,positive_edges,{positive}");
        let _ = writeln!(out, "count,negative_edges,{}", self.n_edges() - positive);
        let mut hist = BTreeMap::new();
        for edges in &self.student_edges {
            *hist.entry(edges.len()).or_insert(0usize) += 1;
        }
        for (degree, count) in hist {
            let _ = writeln!(out, "student_degree,{degree},{count}");
        }
        out
    }
}

/// Hop-attenuated signed evidence for one student, squashed into `[0,1]`.
pub fn aggregate_student(
    graph: &InteractionGraph,
    qmatrix: &QMatrix,
    student_id: &str,
    k_hops: usize,
) -> Result<Vec<f64>> {
    let s = graph
        .student_index(student_id)
        .ok_or_else(|| Error::UnknownStudent(student_id.to_string()))?;
    let tested = tested_lists(qmatrix);
    Ok(aggregate_index(graph, &tested, &own_stats(graph, &tested), s, k_hops))
}

/// Per student and concept: (sum of signs, count) over the student's own edges.
type Stats = Vec<Vec<(f64, f64)>>;

fn own_stats(graph: &InteractionGraph, tested: &[Vec<usize>]) -> Stats {
    let k = tested.iter().flatten().max().map_or(0, |m| m + 1);
    graph
        .student_edges
        .iter()
        .map(|edges| {
            let mut row = vec![(0.0, 0.0); k];
            for &(e, sign) in edges {
                for &c in &tested[e] {
                    row[c].0 += f64::from(sign);
                    row[c].1 += 1.0;
                }
            }
            row
        })
        .collect()
}

fn aggregate_index(
    graph: &InteractionGraph,
    tested: &[Vec<usize>],
    stats: &Stats,
    student: usize,
    k_hops: usize,
) -> Vec<f64> {
    let k = stats.first().map_or(0, Vec::len);
    let (ds, de) = graph.distances(student, k_hops);
    // levels[h][c] = (sum, count) of edges answered by students h hops away
    let mut levels: Vec<Vec<(f64, f64)>> = vec![vec![(0.0, 0.0); k]; k_hops + 1];
    for (u, d) in ds.iter().enumerate() {
        let Some(h) = *d else { continue };
        let level = &mut levels[h];
        if h < k_hops {
            for (acc, own) in level.iter_mut().zip(&stats[u]) {
                acc.0 += own.0;
                acc.1 += own.1;
            }
        } else {
            for &(e, sign) in &graph.student_edges[u] {
                if de[e].is_some() {
                    for &c in &tested[e] {
                        level[c].0 += f64::from(sign);
                        level[c].1 += 1.0;
                    }
                }
            }
        }
    }
    (0..k)
        .map(|c| {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut w = 1.0;
            for level in &levels {
                let (sum, count) = level[c];
                if count > 0.0 {
                    num += w * sum / count;
                    den += w;
                }
                w *= HOP_DECAY;
            }
            if den == 0.0 {
                NO_EVIDENCE
            } else {
                (num / den + 1.0) / 2.0
            }
        })
        .collect()
}

/// Aggregates every student of the graph, in graph order.
pub fn aggregate_all(graph: &InteractionGraph, qmatrix: &QMatrix, k_hops: usize) -> Vec<Vec<f64>> {
    let tested = tested_lists(qmatrix);
    let stats = own_stats(graph, &tested);
    let n = graph.n_students();
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    let chunk = n.div_ceil(workers).max(1);
    let mut out = vec![Vec::new(); n];
    std::thread::scope(|scope| {
        for (i, slot) in out.chunks_mut(chunk).enumerate() {
            let (tested, stats) = (&tested, &stats);
            scope.spawn(move || {
                for (j, v) in slot.iter_mut().enumerate() {
                    *v = aggregate_index(graph, tested, stats, i * chunk + j, k_hops);
                }
            });
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcdmConfig {
    pub k_hops: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for IcdmConfig {
    fn default() -> Self {
        Self {
            k_hops: 3,
            hidden_width: 64,
            learning_rate: 5.0,
            epochs: 30,
            batch_size: 256,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl IcdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_hops == 0 {
            return Err(Error::InvalidArgument("k_hops must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and hidden_width must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument("validation_fraction must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Trained exercise side plus the aggregated vectors of the training students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcdmModel {
    pub format_version: u32,
    pub k_hops: usize,
    pub students: Vec<String>,
    pub states: Vec<Vec<f64>>,
    #[serde(flatten)]
    pub interaction: InteractionModel,
}

impl IcdmModel {
    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn extract_states(&self) -> Vec<KnowledgeState> {
        self.students
            .iter()
            .zip(&self.states)
            .map(|(id, v)| KnowledgeState {
                student_id: id.clone(),
                values: v.clone(),
                method: DiagnosisMethod::Icdm,
            })
            .collect()
    }

    /// State of any student present in `graph`.
    pub fn diagnose(&self, graph: &InteractionGraph, qmatrix: &QMatrix, student_id: &str) -> Result<KnowledgeState> {
        self.interaction.check_dims(qmatrix).map_err(Error::Dimension)?;
        Ok(KnowledgeState {
            student_id: student_id.to_string(),
            values: aggregate_student(graph, qmatrix, student_id, self.k_hops)?,
            method: DiagnosisMethod::Icdm,
        })
    }

    /// Diagnoses students that only appear in `new_entries` by adding them
    /// to the training graph. No parameter changes.
    pub fn diagnose_unseen(
        &self,
        training_log: &ResponseLog,
        new_entries: &ResponseLog,
        qmatrix: &QMatrix,
    ) -> Result<Vec<KnowledgeState>> {
        let mut combined = training_log.clone();
        combined.extend(new_entries.entries().iter().cloned());
        let graph = InteractionGraph::from_log(&combined, qmatrix)?;
        new_entries
            .student_ids()
            .iter()
            .map(|id| self.diagnose(&graph, qmatrix, id))
            .collect()
    }

    /// Probability for an arbitrary student vector in `[0,1]^K`.
    pub fn probability_for(&self, state: &[f64], exercise: usize, qmatrix: &QMatrix) -> f64 {
        self.interaction
            .probability(state, exercise, &qmatrix.tested_concepts(exercise))
    }
}

impl Predictor for IcdmModel {
    fn probability(&self, student: usize, exercise: usize, qmatrix: &QMatrix) -> f64 {
        self.probability_for(&self.states[student], exercise, qmatrix)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedIcdm {
    pub model: IcdmModel,
    pub graph: InteractionGraph,
    pub trace: TrainingTrace,
    pub validation: Vec<usize>,
}

/// Mean loss and interaction gradient for fixed student vectors `states`.
pub fn gradient(
    interaction: &InteractionModel,
    states: &[Vec<f64>],
    batch: &[Observation],
    qmatrix: &QMatrix,
) -> Result<(f64, InteractionGrad)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    interaction.check_dims(qmatrix).map_err(Error::Dimension)?;
    let tested = tested_lists(qmatrix);
    let mut grad = InteractionGrad::zeros(interaction);
    let mut scratch = Scratch::new(interaction);
    let loss = accumulate(interaction, states, batch, &tested, &mut grad, &mut scratch);
    Ok((loss, grad))
}

fn accumulate(
    interaction: &InteractionModel,
    states: &[Vec<f64>],
    batch: &[Observation],
    tested: &[Vec<usize>],
    grad: &mut InteractionGrad,
    scratch: &mut Scratch,
) -> f64 {
    let scale = 1.0 / batch.len() as f64;
    let mut dstudent = vec![0.0; interaction.n_concepts()];
    let mut total = 0.0;
    for o in batch {
        let t = &tested[o.exercise];
        let student = &states[o.student];
        let p = sigmoid(interaction.logit(student, o.exercise, t, scratch));
        total += bce(p, o.correct);
        let dlogit = bce_dlogit(p, o.correct) * scale;
        interaction.backward(student, o.exercise, t, dlogit, grad, &mut dstudent, scratch);
    }
    total * scale
}

/// Fits exercise factors and the network on graph-aggregated student vectors.
pub fn train_inductive(data: &Dataset, config: &IcdmConfig) -> Result<TrainedIcdm> {
    config.validate()?;
    let qmatrix = data.qmatrix();
    let graph = InteractionGraph::from_dataset(data)?;
    let states = aggregate_all(&graph, qmatrix, config.k_hops);
    let mut init_rng = rng::stream(config.seed, 3);
    let mut interaction = InteractionModel::init(
        &mut init_rng,
        qmatrix.n_exercises(),
        qmatrix.n_concepts(),
        config.hidden_width,
    );
    let obs = data.observations();
    let (train_idx, val_idx) = split(obs.len(), config.validation_fraction, config.seed);
    let tested = tested_lists(qmatrix);
    let mut trace = TrainingTrace::default();

    let mut order = train_idx;
    let mut shuffler = rng::stream(config.seed, 4);
    let mut grad = InteractionGrad::zeros(&interaction);
    let mut scratch = Scratch::new(&interaction);
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| obs[i]));
            let l = accumulate(&interaction, &states, &batch, &tested, &mut grad, &mut scratch);
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, loss: l });
            }
            epoch_loss += l * batch.len() as f64;
            interaction.step(&grad, config.learning_rate);
            grad.clear();
        }
        if !interaction.all_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        let val = evaluate(obs, &val_idx, |o| {
            sigmoid(interaction.logit(&states[o.student], o.exercise, &tested[o.exercise], &mut scratch))
        });
        trace.push(EpochRecord {
            epoch,
            train_loss: if order.is_empty() {
                f64::NAN
            } else {
                epoch_loss / order.len() as f64
            },
            val_loss: val.map(|v| v.0),
            val_acc: val.map(|v| v.1),
        });
    }

    Ok(TrainedIcdm {
        model: IcdmModel {
            format_version: FORMAT_VERSION,
            k_hops: config.k_hops,
            students: graph.students().to_vec(),
            states,
            interaction,
        },
        graph,
        trace,
        validation: val_idx,
    })
}
