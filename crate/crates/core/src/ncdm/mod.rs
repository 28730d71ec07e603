//! Neural cognitive diagnosis: per-student factors `theta` learned jointly with
//! the exercise side through the monotone interaction network. Knowledge
//! states are `sigmoid(theta_raw)`.

mod trace;

pub use trace::{EpochRecord, TrainingTrace};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{
    bce, bce_dlogit, sigmoid, tested_lists, InteractionGrad, InteractionModel, Scratch,
};
use crate::metrics::Predictor;
use crate::model::{
    slice_forget, ConceptCatalog, Dataset, DiagnosisMethod, KnowledgeState, Observation, QMatrix,
};
use crate::rng;

pub const FORMAT_VERSION: u32 = 1;

/// Trainable parameters. `theta_raw` rows follow `students`, exercise rows
/// follow the Q-matrix order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdmParams {
    pub format_version: u32,
    pub students: Vec<String>,
    /// `N x K` pre-activation student factors.
    pub theta_raw: Vec<Vec<f64>>,
    #[serde(flatten)]
    pub interaction: InteractionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5.0,
            epochs: 30,
            batch_size: 256,
            hidden_width: 64,
            seed: 0,
            early_stop_patience: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
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

/// Gradient of the mean loss with respect to every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct CdmGrad {
    pub theta: Vec<Vec<f64>>,
    pub interaction: InteractionGrad,
    touched_students: Vec<usize>,
    marked: Vec<bool>,
}

impl CdmGrad {
    pub fn zeros(params: &CdmParams) -> Self {
        let n = params.theta_raw.len();
        Self {
            theta: vec![vec![0.0; params.interaction.n_concepts()]; n],
            interaction: InteractionGrad::zeros(&params.interaction),
            touched_students: Vec::new(),
            marked: vec![false; n],
        }
    }

    fn clear(&mut self) {
        for &s in &self.touched_students {
            self.theta[s].iter_mut().for_each(|g| *g = 0.0);
            self.marked[s] = false;
        }
        self.touched_students.clear();
        self.interaction.clear();
    }
}

impl CdmParams {
    /// Seeded uniform(-0.1, 0.1) initialization, network weights projected.
    pub fn init(
        students: Vec<String>,
        exercises: usize,
        concepts: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let mut rng = rng::stream(seed, 0);
        let theta_raw = (0..students.len())
            .map(|_| (0..concepts).map(|_| rng.gen_range(-0.1..0.1)).collect())
            .collect();
        let interaction = InteractionModel::init(&mut rng, exercises, concepts, hidden);
        Self {
            format_version: FORMAT_VERSION,
            students,
            theta_raw,
            interaction,
        }
    }

    pub fn n_students(&self) -> usize {
        self.theta_raw.len()
    }

    pub fn student_vector(&self, student: usize) -> Vec<f64> {
        self.theta_raw[student].iter().map(|&t| sigmoid(t)).collect()
    }

    pub fn check_dims(&self, qmatrix: &QMatrix) -> Result<()> {
        self.interaction.check_dims(qmatrix).map_err(Error::Dimension)?;
        if self.students.len() != self.theta_raw.len() {
            return Err(Error::Dimension("student ids and theta rows differ".into()));
        }
        if self.theta_raw.iter().any(|r| r.len() != qmatrix.n_concepts()) {
            return Err(Error::Dimension("theta width differs from concept count".into()));
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.theta_raw.iter().flatten().all(|v| v.is_finite()) && self.interaction.all_finite()
    }
}

impl Predictor for CdmParams {
    fn probability(&self, student: usize, exercise: usize, qmatrix: &QMatrix) -> f64 {
        let tested = qmatrix.tested_concepts(exercise);
        self.interaction
            .probability(&self.student_vector(student), exercise, &tested)
    }
}

/// Probability that `student` answers `exercise` correctly.
pub fn predict(params: &CdmParams, student: usize, exercise: usize, qmatrix: &QMatrix) -> Result<f64> {
    params.check_dims(qmatrix)?;
    if student >= params.n_students() || exercise >= qmatrix.n_exercises() {
        return Err(Error::Dimension(format!(
            "index ({student}, {exercise}) out of range ({}, {})",
            params.n_students(),
            qmatrix.n_exercises()
        )));
    }
    let tested = qmatrix.tested_concepts(exercise);
    Ok(params
        .interaction
        .probability(&params.student_vector(student), exercise, &tested))
}

/// Mean clamped binary cross-entropy over `batch`.
pub fn loss(params: &CdmParams, batch: &[Observation], qmatrix: &QMatrix) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    params.check_dims(qmatrix)?;
    let tested = tested_lists(qmatrix);
    let mut scratch = Scratch::new(&params.interaction);
    let mut student = vec![0.0; qmatrix.n_concepts()];
    let mut total = 0.0;
    for o in batch {
        fill_student(params, o.student, &tested[o.exercise], &mut student);
        let logit = params
            .interaction
            .logit(&student, o.exercise, &tested[o.exercise], &mut scratch);
        total += bce(sigmoid(logit), o.correct);
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss and its full gradient over `batch`.
pub fn gradient(params: &CdmParams, batch: &[Observation], qmatrix: &QMatrix) -> Result<(f64, CdmGrad)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    params.check_dims(qmatrix)?;
    let tested = tested_lists(qmatrix);
    let mut grad = CdmGrad::zeros(params);
    let mut scratch = Scratch::new(&params.interaction);
    let loss = accumulate(params, batch, &tested, &mut grad, &mut scratch);
    Ok((loss, grad))
}

fn fill_student(params: &CdmParams, s: usize, tested: &[usize], out: &mut [f64]) {
    for &k in tested {
        out[k] = sigmoid(params.theta_raw[s][k]);
    }
}

fn accumulate(
    params: &CdmParams,
    batch: &[Observation],
    tested: &[Vec<usize>],
    grad: &mut CdmGrad,
    scratch: &mut Scratch,
) -> f64 {
    let k = params.interaction.n_concepts();
    let scale = 1.0 / batch.len() as f64;
    let mut student = vec![0.0; k];
    let mut dstudent = vec![0.0; k];
    let mut total = 0.0;
    for o in batch {
        let t = &tested[o.exercise];
        fill_student(params, o.student, t, &mut student);
        let logit = params.interaction.logit(&student, o.exercise, t, scratch);
        let p = sigmoid(logit);
        total += bce(p, o.correct);
        let dlogit = bce_dlogit(p, o.correct) * scale;
        for &c in t {
            dstudent[c] = 0.0;
        }
        params.interaction.backward(
            &student,
            o.exercise,
            t,
            dlogit,
            &mut grad.interaction,
            &mut dstudent,
            scratch,
        );
        if !grad.marked[o.student] {
            grad.marked[o.student] = true;
            grad.touched_students.push(o.student);
        }
        let row = &mut grad.theta[o.student];
        for &c in t {
            let s = student[c];
            row[c] += dstudent[c] * s * (1.0 - s);
        }
    }
    total * scale
}

fn apply(params: &mut CdmParams, grad: &CdmGrad, lr: f64) {
    for &s in &grad.touched_students {
        for (p, g) in params.theta_raw[s].iter_mut().zip(&grad.theta[s]) {
            *p -= lr * g;
        }
    }
    params.interaction.step(&grad.interaction, lr);
}

/// Deterministic train/validation split of observation indices.
pub(crate) fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 1));
    let n_val = (fraction * n as f64).round() as usize;
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

pub(crate) fn evaluate<F: FnMut(&Observation) -> f64>(
    obs: &[Observation],
    idx: &[usize],
    mut prob: F,
) -> Option<(f64, f64)> {
    if idx.is_empty() {
        return None;
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for &i in idx {
        let o = &obs[i];
        let p = prob(o);
        loss += bce(p, o.correct);
        if (p >= 0.5) == o.correct {
            hits += 1;
        }
    }
    Some((loss / idx.len() as f64, hits as f64 / idx.len() as f64))
}

#[derive(Debug, Clone)]
pub struct TrainedCdm {
    pub params: CdmParams,
    pub trace: TrainingTrace,
    /// Observation indices held out for validation.
    pub validation: Vec<usize>,
}

/// Mini-batch gradient descent with non-negativity projection after every
/// update. Fully determined by `config.seed`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainedCdm> {
    config.validate()?;
    let qmatrix = data.qmatrix();
    let students = data.students().iter().map(|s| s.id.clone()).collect();
    let params = CdmParams::init(
        students,
        qmatrix.n_exercises(),
        qmatrix.n_concepts(),
        config.hidden_width,
        config.seed,
    );
    train_from(params, data, config)
}

/// Continues training from `params`, which must match the dataset's shape.
/// `config.hidden_width` is ignored in favour of the network in `params`.
pub fn train_from(mut params: CdmParams, data: &Dataset, config: &TrainConfig) -> Result<TrainedCdm> {
    config.validate()?;
    if let Some(s) = data.silent_students().first() {
        return Err(Error::InvalidArgument(format!("student `{s}` has no responses")));
    }
    let qmatrix = data.qmatrix();
    params.check_dims(qmatrix)?;
    if params.n_students() != data.n_students() {
        return Err(Error::Dimension(format!(
            "params cover {} students, dataset has {}",
            params.n_students(),
            data.n_students()
        )));
    }
    let obs = data.observations();
    let (train_idx, val_idx) = split(obs.len(), config.validation_fraction, config.seed);
    let tested = tested_lists(qmatrix);
    let mut trace = TrainingTrace::default();
    if config.epochs == 0 {
        return Ok(TrainedCdm {
            params,
            trace,
            validation: val_idx,
        });
    }

    let mut order = train_idx.clone();
    let mut shuffler = rng::stream(config.seed, 2);
    let mut grad = CdmGrad::zeros(&params);
    let mut scratch = Scratch::new(&params.interaction);
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut best: Option<(f64, CdmParams)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| obs[i]));
            let l = accumulate(&params, &batch, &tested, &mut grad, &mut scratch);
            if !l.is_finite() {
                return Err(Error::Divergence { epoch, loss: l });
            }
            epoch_loss += l * batch.len() as f64;
            apply(&mut params, &grad, config.learning_rate);
            grad.clear();
        }
        if !params.all_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        let train_loss = if order.is_empty() {
            f64::NAN
        } else {
            epoch_loss / order.len() as f64
        };
        let val = evaluate(obs, &val_idx, |o| {
            sigmoid(params.interaction.logit(
                &params.student_vector(o.student),
                o.exercise,
                &tested[o.exercise],
                &mut scratch,
            ))
        });
        trace.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.map(|v| v.0),
            val_acc: val.map(|v| v.1),
        });

        if config.early_stop_patience > 0 {
            if let Some((vl, _)) = val {
                match &best {
                    Some((b, _)) if vl >= *b => {
                        since_best += 1;
                        if since_best >= config.early_stop_patience {
                            break;
                        }
                    }
                    _ => {
                        best = Some((vl, params.clone()));
                        since_best = 0;
                    }
                }
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok(TrainedCdm {
        params,
        trace,
        validation: val_idx,
    })
}

/// `F_s = sigmoid(theta_raw_s)` for every student.
pub fn extract_states(params: &CdmParams) -> Vec<KnowledgeState> {
    params
        .students
        .iter()
        .enumerate()
        .map(|(s, id)| KnowledgeState {
            student_id: id.clone(),
            values: params.student_vector(s),
            method: DiagnosisMethod::Ncdm,
        })
        .collect()
}

/// Mean of the state over forget concepts.
pub fn mastery(state: &KnowledgeState, catalog: &ConceptCatalog) -> Result<f64> {
    let forget = slice_forget(state, catalog)?;
    Ok(forget.iter().sum::<f64>() / forget.len() as f64)
}

pub fn percent(m: f64) -> f64 {
    100.0 * m
}
