use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::parse_prompt;
use crate::error::{Error, Result};

/// Environment variable holding the bearer token for [`HttpJudge`].
pub const TOKEN_ENV: &str = "COGDIAG_JUDGE_TOKEN";

/// Text in, text out.
pub trait Judge: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPolicy {
    /// Predicts correct and labels every target concept good.
    #[default]
    AlwaysGood,
    /// Labels each concept from the correct rate of the shots that test it:
    /// at least 2/3 good, at most 1/3 bad, fair between. Target concepts
    /// absent from the shots are unknown.
    FromHistory,
}

/// Deterministic judge: the reply is a pure function of the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockJudge {
    pub policy: MockPolicy,
}

impl MockJudge {
    pub fn new(policy: MockPolicy) -> Self {
        Self { policy }
    }
}

impl Judge for MockJudge {
    fn complete(&self, prompt: &str) -> Result<String> {
        let (shots, _, target) =
            parse_prompt(prompt).ok_or_else(|| Error::Judge("prompt has no target line".into()))?;
        let mut labels: BTreeMap<&str, &str> = BTreeMap::new();
        let mut prediction = 1;
        match self.policy {
            MockPolicy::AlwaysGood => {
                for c in &target {
                    labels.insert(c, "good");
                }
            }
            MockPolicy::FromHistory => {
                let mut tally: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
                for s in &shots {
                    for c in &s.concepts {
                        let t = tally.entry(c).or_default();
                        t.0 += u32::from(s.correct);
                        t.1 += 1;
                    }
                }
                for c in &target {
                    labels.insert(c, "unknown");
                }
                for (c, (right, seen)) in &tally {
                    let rate = f64::from(*right) / f64::from(*seen);
                    let label = if rate >= 2.0 / 3.0 {
                        "good"
                    } else if rate <= 1.0 / 3.0 {
                        "bad"
                    } else {
                        "fair"
                    };
                    labels.insert(c, label);
                }
                let balance: i32 = target
                    .iter()
                    .map(|c| match labels[c.as_str()] {
                        "good" => 1,
                        "bad" => -1,
                        _ => 0,
                    })
                    .sum();
                prediction = i32::from(balance >= 0);
            }
        }
        let mut out = format!("Prediction: {prediction}\nKnowledge State:\n");
        for (c, l) in labels {
            out.push_str(&format!("- {c}: {l}\n"));
        }
        Ok(out)
    }
}

/// Remote judge: `POST {"prompt": ...}` answered by `{"text": ...}`.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct JudgeRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct JudgeResponse {
    text: String,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Judge(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            token,
            client,
        })
    }

    /// Reads the token from [`TOKEN_ENV`] when set.
    pub fn from_env(url: impl Into<String>, timeout: Duration) -> Result<Self> {
        Self::new(url, std::env::var(TOKEN_ENV).ok(), timeout)
    }
}

impl Judge for HttpJudge {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut req = self.client.post(&self.url).json(&JudgeRequest { prompt });
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Judge(e.to_string()))?;
        let body: JudgeResponse = resp.json().map_err(|e| Error::Judge(e.to_string()))?;
        Ok(body.text)
    }
}
