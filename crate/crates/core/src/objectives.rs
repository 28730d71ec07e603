//! Closed-form evaluators for unlearning objectives. They take likelihoods,
//! activations or weights produced elsewhere and return loss values; nothing
//! here trains a model.
//!
//! Sign conventions: [`ga_loss`] returns the mean summed log-likelihood of the
//! forget sequences, the quantity gradient ascent drives down. [`gdr_term`]
//! is the retain-set cross-entropy, i.e. its negation. [`npo_loss`] and
//! [`rmu_losses`] are losses to minimize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-probabilities of one sequence's tokens under the current model and,
/// optionally, the reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceLikelihood {
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_token_logprobs: Option<Vec<f64>>,
}

impl SequenceLikelihood {
    pub fn new(token_logprobs: Vec<f64>) -> Self {
        Self {
            token_logprobs,
            ref_token_logprobs: None,
        }
    }

    pub fn with_reference(token_logprobs: Vec<f64>, reference: Vec<f64>) -> Self {
        Self {
            token_logprobs,
            ref_token_logprobs: Some(reference),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite() || *x > 0.0);
        if bad(&self.token_logprobs) {
            return Err(Error::InvalidArgument("log-probabilities must be finite and <= 0".into()));
        }
        if let Some(r) = &self.ref_token_logprobs {
            if r.len() != self.token_logprobs.len() {
                return Err(Error::Dimension(format!(
                    "reference has {} tokens, sequence has {}",
                    r.len(),
                    self.token_logprobs.len()
                )));
            }
            if bad(r) {
                return Err(Error::InvalidArgument("log-probabilities must be finite and <= 0".into()));
            }
        }
        Ok(())
    }

    pub fn log_likelihood(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }

    /// `log f(y|x) - log f_0(y|x)`.
    pub fn log_ratio(&self) -> Result<f64> {
        let r = self
            .ref_token_logprobs
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("reference log-probabilities missing".into()))?;
        Ok(self.token_logprobs.iter().zip(r).map(|(a, b)| a - b).sum())
    }
}

fn check_batch(batch: &[SequenceLikelihood]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    batch.iter().try_for_each(SequenceLikelihood::validate)
}

pub fn ga_loss(batch: &[SequenceLikelihood]) -> Result<f64> {
    check_batch(batch)?;
    Ok(batch.iter().map(SequenceLikelihood::log_likelihood).sum::<f64>() / batch.len() as f64)
}

pub fn gdr_term(batch: &[SequenceLikelihood]) -> Result<f64> {
    check_batch(batch)?;
    Ok(batch.iter().map(|s| -s.log_likelihood()).sum::<f64>() / batch.len() as f64)
}

/// `ln sigmoid(x)` without overflow.
fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `-(2/beta) * mean(ln sigmoid(-beta * log_ratio))`.
pub fn npo_loss(batch: &[SequenceLikelihood], beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument("beta must be positive".into()));
    }
    check_batch(batch)?;
    let mut total = 0.0;
    for s in batch {
        total += ln_sigmoid(-beta * s.log_ratio()?);
    }
    Ok(-(2.0 / beta) * total / batch.len() as f64)
}

/// Per-token hidden states of the model being unlearned, the frozen model's
/// states for the retain tokens, and the scaled control vector `c * u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPair {
    /// Hidden states on forget tokens.
    pub forget: Vec<Vec<f64>>,
    /// Hidden states on retain tokens.
    #[serde(default)]
    pub retain: Vec<Vec<f64>>,
    /// Frozen-model states on the same retain tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<Vec<f64>>>,
    pub control: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmuLosses {
    pub forget: f64,
    pub retain: f64,
    pub total: f64,
}

fn mean_sq_dist<'a>(rows: &[Vec<f64>], targets: impl Iterator<Item = &'a [f64]>) -> f64 {
    let total: f64 = rows
        .iter()
        .zip(targets)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    total / rows.len() as f64
}

pub fn rmu_losses(pair: &ActivationPair, alpha: f64) -> Result<RmuLosses> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument("alpha must be non-negative".into()));
    }
    let d = pair.control.len();
    if pair.forget.is_empty() {
        return Err(Error::Empty("forget activations"));
    }
    let shape = |rows: &[Vec<f64>], what: &str| {
        if rows.iter().any(|r| r.len() != d) {
            Err(Error::Dimension(format!("{what} rows must have width {d}")))
        } else {
            Ok(())
        }
    };
    shape(&pair.forget, "forget")?;
    shape(&pair.retain, "retain")?;
    let forget = mean_sq_dist(&pair.forget, std::iter::repeat(pair.control.as_slice()));
    let retain = match &pair.reference {
        Some(reference) => {
            shape(reference, "reference")?;
            if reference.len() != pair.retain.len() {
                return Err(Error::Dimension("reference and retain token counts differ".into()));
            }
            if pair.retain.is_empty() {
                return Err(Error::Empty("retain activations"));
            }
            mean_sq_dist(&pair.retain, reference.iter().map(Vec::as_slice))
        }
        None if alpha == 0.0 => 0.0,
        None => return Err(Error::InvalidArgument("retain term needs reference activations".into())),
    };
    Ok(RmuLosses {
        forget,
        retain,
        total: forget + alpha * retain,
    })
}

/// `f0 - alpha * (f_reinforce - f0)`.
pub fn task_vector(f0: &[f64], f_reinforce: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if f0.len() != f_reinforce.len() {
        return Err(Error::Dimension(format!(
            "weight vectors differ in length: {} vs {}",
            f0.len(),
            f_reinforce.len()
        )));
    }
    Ok(f0.iter().zip(f_reinforce).map(|(a, b)| a - alpha * (b - a)).collect())
}

const SUM_TOL: f64 = 1e-9;

/// `KL(p || q)` in nats.
pub fn kl_retain(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Dimension("distributions must be non-empty and equally long".into()));
    }
    for (name, d) in [("p", p), ("q", q)] {
        if d.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} has a negative or non-finite entry")));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!("{name} sums to {s}, not 1")));
        }
    }
    let mut kl = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::InvalidArgument(format!("q is zero at {i} where p is not")));
        }
        kl += a * (a / b).ln();
    }
    Ok(kl.max(0.0))
}
