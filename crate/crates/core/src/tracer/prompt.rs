use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;

use super::{JudgeVerdict, Label};

pub const PROMPT_VERSION: &str = "trace_prompt_v1";
const TEMPLATE: &str = include_str!("../../assets/trace_prompt_v1.txt");

/// One solved exercise shown to the judge as context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shot {
    pub exercise_id: String,
    pub concepts: Vec<String>,
    pub correct: bool,
}

pub fn render(shots: &[Shot], target_id: &str, target_concepts: &[String], allowed: &BTreeSet<String>) -> String {
    let mut history = String::new();
    for s in shots {
        let _ = writeln!(
            history,
            "- exercise {} | concepts: {} | outcome: {}",
            s.exercise_id,
            s.concepts.join(", "),
            if s.correct { "correct" } else { "wrong" }
        );
    }
    if history.is_empty() {
        history.push_str("(no prior answers)\n");
    }
    TEMPLATE
        .replace("{{history}}", history.trim_end())
        .replace("{{target_id}}", target_id)
        .replace("{{target_concepts}}", &target_concepts.join(", "))
        .replace("{{allowed}}", &allowed.iter().cloned().collect::<Vec<_>>().join(", "))
}

static HISTORY_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^- exercise (\S+) \| concepts: ([^|]*) \| outcome: (correct|wrong)\s*$").unwrap()
});
static TARGET_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Target exercise: (\S+) \| concepts: (.*)$").unwrap());
static PREDICTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[\s\-*\d.]*\**prediction\**\s*:\s*\**\s*([01])\b").unwrap()
});
static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[\s\-*\d.]*\**([a-z0-9][a-z0-9_-]*)\**\s*:\s*\**(good|fair|bad|unknown)\**\s*\.?\s*$")
        .unwrap()
});

fn split_concepts(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|c| !c.is_empty()).map(String::from).collect()
}

/// Recovers the shots and target from a rendered prompt.
pub fn parse_prompt(prompt: &str) -> Option<(Vec<Shot>, String, Vec<String>)> {
    let shots = HISTORY_LINE
        .captures_iter(prompt)
        .map(|c| Shot {
            exercise_id: c[1].to_string(),
            concepts: split_concepts(&c[2]),
            correct: &c[3] == "correct",
        })
        .collect();
    let t = TARGET_LINE.captures(prompt)?;
    Some((shots, t[1].to_string(), split_concepts(&t[2])))
}

/// Extracts a verdict from judge output. Labels for concepts outside
/// `allowed` are dropped; a reply without a prediction or without any
/// admissible label is malformed.
pub fn parse_verdict(
    text: &str,
    exercise_id: &str,
    allowed: Option<&BTreeSet<String>>,
) -> Result<JudgeVerdict, String> {
    let prediction = PREDICTION
        .captures(text)
        .ok_or_else(|| "no prediction line".to_string())?;
    let mut labels = BTreeMap::new();
    for c in LABEL.captures_iter(text) {
        let concept = c[1].to_ascii_lowercase();
        if concept == "prediction" || allowed.is_some_and(|a| !a.contains(&concept)) {
            continue;
        }
        let label: Label = c[2].parse().expect("regex admits only known labels");
        labels.insert(concept, label);
    }
    if labels.is_empty() {
        return Err("no admissible concept labels".into());
    }
    Ok(JudgeVerdict {
        exercise_id: exercise_id.to_string(),
        predicted_correct: &prediction[1] == "1",
        labels,
        error: None,
    })
}
