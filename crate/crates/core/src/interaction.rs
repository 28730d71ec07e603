//! Monotone interaction function shared by the NCDM and ICDM models.
//!
//! For a student vector `s` in `[0,1]^K` and exercise `e`:
//!
//! ```text
//! x   = disc_e * (s - sigmoid(beta_raw_e)) ⊙ Q_e
//! h   = clamp(W1 x + b1, -1, 1)
//! ŷ   = sigmoid(w2 · h + b2)
//! ```
//!
//! with `disc_e = DISC_SCALE * sigmoid(disc_raw_e)`. `W1` and `w2` are kept
//! non-negative by projection, which makes `ŷ` non-decreasing in every tested
//! component of `s`. Untested components never reach the network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::QMatrix;

pub const DISC_SCALE: f64 = 10.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn clip(z: f64) -> f64 {
    z.clamp(-1.0, 1.0)
}

#[inline]
fn clip_grad(z: f64) -> f64 {
    if z > -1.0 && z < 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Two-layer feed-forward network with non-negative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneNet {
    /// `H x K`
    pub hidden_weights: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl MonotoneNet {
    pub fn init(rng: &mut impl Rng, inputs: usize, hidden: usize, scale: f64) -> Self {
        let mut u = || rng.gen_range(-scale..scale);
        let hidden_weights = (0..hidden).map(|_| (0..inputs).map(|_| u()).collect()).collect();
        let hidden_bias = (0..hidden).map(|_| u()).collect();
        let output_weights = (0..hidden).map(|_| u()).collect();
        let output_bias = u();
        let mut net = Self {
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
        };
        net.project();
        net
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn inputs(&self) -> usize {
        self.hidden_weights.first().map_or(0, Vec::len)
    }

    /// Clamps every weight to be non-negative. Biases are left free.
    pub fn project(&mut self) {
        for row in &mut self.hidden_weights {
            for w in row {
                *w = w.max(0.0);
            }
        }
        for w in &mut self.output_weights {
            *w = w.max(0.0);
        }
    }

    pub fn min_weight(&self) -> f64 {
        self.hidden_weights
            .iter()
            .flatten()
            .chain(&self.output_weights)
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Output logit for an input that is zero outside `active`.
    fn forward(&self, x: &[f64], active: &[usize], z: &mut [f64]) -> f64 {
        let mut out = self.output_bias;
        for (h, zh) in z.iter_mut().enumerate() {
            let row = &self.hidden_weights[h];
            let mut acc = self.hidden_bias[h];
            for &k in active {
                acc += row[k] * x[k];
            }
            *zh = acc;
            out += self.output_weights[h] * clip(acc);
        }
        out
    }
}

/// Gradient buffer for [`MonotoneNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub hidden_weights: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl NetGrad {
    pub fn zeros(net: &MonotoneNet) -> Self {
        Self {
            hidden_weights: vec![vec![0.0; net.inputs()]; net.hidden_width()],
            hidden_bias: vec![0.0; net.hidden_width()],
            output_weights: vec![0.0; net.hidden_width()],
            output_bias: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.hidden_weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.hidden_bias.iter_mut().for_each(|g| *g = 0.0);
        self.output_weights.iter_mut().for_each(|g| *g = 0.0);
        self.output_bias = 0.0;
    }
}

/// Exercise factors plus the network: everything but the student side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionModel {
    /// `M x K` pre-activation exercise factors.
    pub beta_raw: Vec<Vec<f64>>,
    /// Per-exercise pre-activation discrimination.
    pub disc_raw: Vec<f64>,
    pub net: MonotoneNet,
}

/// Gradient with respect to [`InteractionModel`], with rows of `beta` and
/// `disc` touched since the last clear tracked for sparse updates.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGrad {
    pub beta: Vec<Vec<f64>>,
    pub disc: Vec<f64>,
    pub net: NetGrad,
    touched: Vec<usize>,
    marked: Vec<bool>,
}

impl InteractionGrad {
    pub fn zeros(model: &InteractionModel) -> Self {
        let m = model.beta_raw.len();
        let k = model.net.inputs();
        Self {
            beta: vec![vec![0.0; k]; m],
            disc: vec![0.0; m],
            net: NetGrad::zeros(&model.net),
            touched: Vec::new(),
            marked: vec![false; m],
        }
    }

    fn touch(&mut self, e: usize) {
        if !self.marked[e] {
            self.marked[e] = true;
            self.touched.push(e);
        }
    }

    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &e in &self.touched {
            self.beta[e].iter_mut().for_each(|g| *g = 0.0);
            self.disc[e] = 0.0;
            self.marked[e] = false;
        }
        self.touched.clear();
        self.net.clear();
    }
}

/// Reusable scratch space so the hot loop does not allocate.
#[derive(Debug, Clone)]
pub struct Scratch {
    x: Vec<f64>,
    b: Vec<f64>,
    z: Vec<f64>,
}

impl Scratch {
    pub fn new(model: &InteractionModel) -> Self {
        let k = model.net.inputs();
        Self {
            x: vec![0.0; k],
            b: vec![0.0; k],
            z: vec![0.0; model.net.hidden_width()],
        }
    }
}

impl InteractionModel {
    pub fn init(rng: &mut impl Rng, exercises: usize, concepts: usize, hidden: usize) -> Self {
        const SCALE: f64 = 0.1;
        let beta_raw = (0..exercises)
            .map(|_| (0..concepts).map(|_| rng.gen_range(-SCALE..SCALE)).collect())
            .collect();
        let disc_raw = (0..exercises).map(|_| rng.gen_range(-SCALE..SCALE)).collect();
        let net = MonotoneNet::init(rng, concepts, hidden, SCALE);
        Self {
            beta_raw,
            disc_raw,
            net,
        }
    }

    pub fn n_exercises(&self) -> usize {
        self.beta_raw.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.net.inputs()
    }

    pub fn check_dims(&self, qmatrix: &QMatrix) -> Result<(), String> {
        if self.beta_raw.len() != qmatrix.n_exercises() || self.disc_raw.len() != qmatrix.n_exercises()
        {
            return Err(format!(
                "model has {} exercises, q-matrix has {}",
                self.beta_raw.len(),
                qmatrix.n_exercises()
            ));
        }
        if self.net.inputs() != qmatrix.n_concepts()
            || self.beta_raw.iter().any(|r| r.len() != qmatrix.n_concepts())
        {
            return Err(format!(
                "model has {} concepts, q-matrix has {}",
                self.net.inputs(),
                qmatrix.n_concepts()
            ));
        }
        Ok(())
    }

    pub fn discrimination(&self, exercise: usize) -> f64 {
        DISC_SCALE * sigmoid(self.disc_raw[exercise])
    }

    fn encode(&self, student: &[f64], exercise: usize, tested: &[usize], scratch: &mut Scratch) -> f64 {
        let disc = self.discrimination(exercise);
        for &k in tested {
            let b = sigmoid(self.beta_raw[exercise][k]);
            scratch.b[k] = b;
            scratch.x[k] = disc * (student[k] - b);
        }
        disc
    }

    /// Pre-sigmoid output for a student vector already in `[0,1]^K`.
    pub fn logit(&self, student: &[f64], exercise: usize, tested: &[usize], scratch: &mut Scratch) -> f64 {
        self.encode(student, exercise, tested, scratch);
        self.net.forward(&scratch.x, tested, &mut scratch.z)
    }

    pub fn probability(&self, student: &[f64], exercise: usize, tested: &[usize]) -> f64 {
        let mut scratch = Scratch::new(self);
        sigmoid(self.logit(student, exercise, tested, &mut scratch))
    }

    /// Back-propagates `dlogit` (dLoss/dlogit). Parameter gradients accumulate
    /// into `grad`; the gradient with respect to the student vector is added
    /// to `dstudent` at the tested indices.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        student: &[f64],
        exercise: usize,
        tested: &[usize],
        dlogit: f64,
        grad: &mut InteractionGrad,
        dstudent: &mut [f64],
        scratch: &mut Scratch,
    ) {
        let disc = self.encode(student, exercise, tested, scratch);
        self.net.forward(&scratch.x, tested, &mut scratch.z);
        grad.touch(exercise);

        grad.net.output_bias += dlogit;
        let mut dx_disc = 0.0;
        for h in 0..self.net.hidden_width() {
            let z = scratch.z[h];
            grad.net.output_weights[h] += dlogit * clip(z);
            let dz = dlogit * self.net.output_weights[h] * clip_grad(z);
            if dz == 0.0 {
                continue;
            }
            grad.net.hidden_bias[h] += dz;
            let row = &self.net.hidden_weights[h];
            let grow = &mut grad.net.hidden_weights[h];
            for &k in tested {
                grow[k] += dz * scratch.x[k];
                let dx = dz * row[k];
                // x_k = disc * (s_k - b_k)
                dstudent[k] += dx * disc;
                let b = scratch.b[k];
                grad.beta[exercise][k] -= dx * disc * b * (1.0 - b);
                dx_disc += dx * (student[k] - b);
            }
        }
        let sd = sigmoid(self.disc_raw[exercise]);
        grad.disc[exercise] += dx_disc * DISC_SCALE * sd * (1.0 - sd);
    }

    /// Plain gradient step on the touched exercise rows and the whole network,
    /// followed by the non-negativity projection.
    pub fn step(&mut self, grad: &InteractionGrad, lr: f64) {
        for &e in grad.touched() {
            for (p, g) in self.beta_raw[e].iter_mut().zip(&grad.beta[e]) {
                *p -= lr * g;
            }
            self.disc_raw[e] -= lr * grad.disc[e];
        }
        let net = &mut self.net;
        for (row, grow) in net.hidden_weights.iter_mut().zip(&grad.net.hidden_weights) {
            for (p, g) in row.iter_mut().zip(grow) {
                *p -= lr * g;
            }
        }
        for (p, g) in net.hidden_bias.iter_mut().zip(&grad.net.hidden_bias) {
            *p -= lr * g;
        }
        for (p, g) in net.output_weights.iter_mut().zip(&grad.net.output_weights) {
            *p -= lr * g;
        }
        net.output_bias -= lr * grad.net.output_bias;
        net.project();
    }

    pub fn all_finite(&self) -> bool {
        self.beta_raw.iter().flatten().all(|v| v.is_finite())
            && self.disc_raw.iter().all(|v| v.is_finite())
            && self
                .net
                .hidden_weights
                .iter()
                .flatten()
                .chain(&self.net.hidden_bias)
                .chain(&self.net.output_weights)
                .all(|v| v.is_finite())
            && self.net.output_bias.is_finite()
    }
}

/// Per-exercise lists of tested concept indices.
pub fn tested_lists(qmatrix: &QMatrix) -> Vec<Vec<usize>> {
    (0..qmatrix.n_exercises()).map(|e| qmatrix.tested_concepts(e)).collect()
}

/// Binary cross-entropy with the probability clamped to `[eps, 1 - eps]`.
pub const PROB_EPS: f64 = 1e-7;

pub fn bce(p: f64, correct: bool) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if correct {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// dBCE/dlogit, zero where the clamp is active.
pub fn bce_dlogit(p: f64, correct: bool) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    p - f64::from(u8::from(correct))
}
