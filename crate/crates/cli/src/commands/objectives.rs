use cogdiag::objectives::{
    ga_loss, gdr_term, kl_retain, npo_loss, rmu_losses, task_vector, ActivationPair, SequenceLikelihood,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

/// One calculator request, tagged by `op`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Ga {
        batch: Vec<SequenceLikelihood>,
    },
    Gdr {
        batch: Vec<SequenceLikelihood>,
    },
    Npo {
        batch: Vec<SequenceLikelihood>,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Rmu {
        #[serde(flatten)]
        pair: ActivationPair,
        alpha: f64,
    },
    TaskVector {
        f0: Vec<f64>,
        f_reinforce: Vec<f64>,
        alpha: f64,
    },
    Kl {
        p: Vec<f64>,
        q: Vec<f64>,
    },
}

fn default_beta() -> f64 {
    0.1
}

impl Request {
    fn op(&self) -> &'static str {
        match self {
            Request::Ga { .. } => "ga",
            Request::Gdr { .. } => "gdr",
            Request::Npo { .. } => "npo",
            Request::Rmu { .. } => "rmu",
            Request::TaskVector { .. } => "task_vector",
            Request::Kl { .. } => "kl",
        }
    }

    pub fn evaluate(&self) -> cogdiag::Result<Value> {
        Ok(match self {
            Request::Ga { batch } => json!(ga_loss(batch)?),
            Request::Gdr { batch } => json!(gdr_term(batch)?),
            Request::Npo { batch, beta } => json!(npo_loss(batch, *beta)?),
            Request::Rmu { pair, alpha } => serde_json::to_value(rmu_losses(pair, *alpha)?).expect("losses serialize"),
            Request::TaskVector { f0, f_reinforce, alpha } => json!(task_vector(f0, f_reinforce, *alpha)?),
            Request::Kl { p, q } => json!(kl_retain(p, q)?),
        })
    }
}

/// Evaluates a single request object or an array of them. Each result is
/// `{"op", "value"}`; invalid inputs are validation errors.
pub fn eval_json(text: &str) -> CliResult<Value> {
    let doc: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(format!("request: {e}")))?;
    let single = !doc.is_array();
    let items = match doc {
        Value::Array(items) => items,
        other => vec![other],
    };
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let req: Request =
            serde_json::from_value(item).map_err(|e| CliError::Parse(format!("request {i}: {e}")))?;
        let value = req
            .evaluate()
            .map_err(|e| CliError::Validation(format!("request {i} ({}): {e}", req.op())))?;
        out.push(json!({ "op": req.op(), "value": value }));
    }
    Ok(if single {
        out.pop().expect("one result")
    } else {
        Value::Array(out)
    })
}
