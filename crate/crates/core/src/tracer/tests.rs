use super::*;
use crate::model::{Concept, ConceptKind};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

const SAMPLE_REPLY: &str = "\
**Prediction 3:**
- **Pre Exercise ID:** 648
- **Prediction:** 1
- **Explanation:**
  1. Find out the knowledge points involved in the new question: The new exercise contains initial-access.
  2. Similar to question 3105, there is a direct connection between the previous knowledge points and questions.
  3. **Knowledge State:**
     - privilege-escalation: good
     - lateral-movement: fair
     - initial-access: good
     - persistence: fair
  4. The student gets it right, likely because of mastery.
- **Is Correct:** 1
";

fn catalog() -> ConceptCatalog {
    ConceptCatalog::new(
        ["a", "b", "c", "d"]
            .iter()
            .map(|c| Concept::new(*c, ConceptKind::Forget, ""))
            .chain([Concept::new("r", ConceptKind::Retain, "")])
            .collect(),
    )
    .unwrap()
}

fn qmatrix() -> QMatrix {
    QMatrix::new(
        (0..6).map(|e| format!("e{e}")).collect(),
        ["a", "b", "c", "d", "r"].map(String::from).to_vec(),
        vec![
            vec![1, 0, 0, 0, 0],
            vec![0, 1, 0, 0, 0],
            vec![1, 1, 0, 0, 0],
            vec![0, 0, 1, 0, 0],
            vec![0, 0, 1, 1, 0],
            vec![0, 0, 0, 0, 1],
        ],
    )
    .unwrap()
}

fn entries() -> Vec<Response> {
    (0..6).map(|e| Response::new("m", format!("e{e}"), e % 3 != 1)).collect()
}

fn verdict(labels: &[(&str, Label)]) -> JudgeVerdict {
    JudgeVerdict {
        exercise_id: "x".into(),
        predicted_correct: true,
        labels: labels.iter().map(|(c, l)| (c.to_string(), *l)).collect(),
        error: None,
    }
}

#[test]
fn sample_reply_parses_to_its_four_labels() {
    let v = parse_verdict(SAMPLE_REPLY, "648", None).unwrap();
    assert!(v.predicted_correct);
    let want: BTreeMap<String, Label> = [
        ("privilege-escalation", Label::Good),
        ("lateral-movement", Label::Fair),
        ("initial-access", Label::Good),
        ("persistence", Label::Fair),
    ]
    .iter()
    .map(|(c, l)| (c.to_string(), *l))
    .collect();
    assert_eq!(v.labels, want);
}

#[test]
fn labels_outside_the_allowed_set_are_dropped() {
    let allowed: BTreeSet<String> = ["persistence".to_string()].into();
    let v = parse_verdict(SAMPLE_REPLY, "648", Some(&allowed)).unwrap();
    assert_eq!(v.labels.len(), 1);
    let none: BTreeSet<String> = BTreeSet::new();
    assert!(parse_verdict(SAMPLE_REPLY, "648", Some(&none)).is_err());
    assert!(parse_verdict("I think they will do fine.", "648", None).is_err());
}

#[test]
fn prompt_round_trips_through_the_mock_parser() {
    let shots = vec![Shot {
        exercise_id: "e1".into(),
        concepts: vec!["a".into(), "b".into()],
        correct: false,
    }];
    let allowed: BTreeSet<String> = ["a", "b", "c"].map(String::from).into();
    let p = render(&shots, "e9", &["c".to_string()], &allowed);
    let (s, t, c) = parse_prompt(&p).unwrap();
    assert_eq!(s, shots);
    assert_eq!(t, "e9");
    assert_eq!(c, vec!["c".to_string()]);
    assert!(!p.contains("{{"));
}

#[test]
fn always_good_labels_tested_concepts_good() {
    let q = qmatrix();
    let config = TraceConfig {
        sample_size: 6,
        ..TraceConfig::default()
    };
    let out = trace(&entries(), &q, &MockJudge::new(MockPolicy::AlwaysGood), &config).unwrap();
    assert_eq!(out.verdicts.len(), 6);
    for v in &out.verdicts {
        let e = q.exercise_index(&v.exercise_id).unwrap();
        let tested: BTreeSet<String> = concept_ids(&q, e).into_iter().collect();
        assert_eq!(v.labels.keys().cloned().collect::<BTreeSet<_>>(), tested);
        assert!(v.labels.values().all(|&l| l == Label::Good));
        assert!(v.predicted_correct);
    }
}

#[test]
fn zero_sample_is_empty_and_oversized_sample_errors() {
    let q = qmatrix();
    let judge = MockJudge::default();
    let zero = TraceConfig {
        sample_size: 0,
        ..TraceConfig::default()
    };
    assert!(trace(&entries(), &q, &judge, &zero).unwrap().verdicts.is_empty());
    let big = TraceConfig {
        sample_size: 7,
        ..TraceConfig::default()
    };
    assert!(matches!(trace(&entries(), &q, &judge, &big), Err(Error::InvalidArgument(_))));
}

#[test]
fn mock_traces_are_deterministic_and_ordered() {
    let q = qmatrix();
    let judge = MockJudge::new(MockPolicy::FromHistory);
    let config = TraceConfig {
        sample_size: 4,
        shots: 3,
        seed: 5,
        ..TraceConfig::default()
    };
    let a = trace(&entries(), &q, &judge, &config).unwrap();
    let b = trace(&entries(), &q, &judge, &TraceConfig { max_in_flight: 1, ..config.clone() }).unwrap();
    assert_eq!(a, b);
    let idx: Vec<usize> = a.transcript.iter().map(|t| t.index).collect();
    assert_eq!(idx, vec![0, 1, 2, 3]);
    let positions: Vec<usize> = a
        .verdicts
        .iter()
        .map(|v| entries().iter().position(|e| e.exercise == v.exercise_id).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn labels_stay_within_seen_concepts() {
    let q = qmatrix();
    let config = TraceConfig {
        sample_size: 5,
        shots: 2,
        seed: 1,
        ..TraceConfig::default()
    };
    let out = trace(&entries(), &q, &MockJudge::new(MockPolicy::FromHistory), &config).unwrap();
    let mut seen = BTreeSet::new();
    for (v, t) in out.verdicts.iter().zip(&out.transcript) {
        let (shots, _, target) = parse_prompt(&t.prompt).unwrap();
        let mut allowed = seen.clone();
        allowed.extend(target.iter().cloned());
        allowed.extend(shots.iter().flat_map(|s| s.concepts.clone()));
        assert!(!v.labels.is_empty());
        assert!(v.labels.keys().all(|c| allowed.contains(c)));
        seen.extend(target);
    }
}

struct Flaky {
    bad_replies: usize,
    calls: Mutex<usize>,
}

impl Judge for Flaky {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut n = self.calls.lock().unwrap();
        *n += 1;
        if *n <= self.bad_replies {
            Ok("no idea".into())
        } else {
            MockJudge::default().complete(prompt)
        }
    }
}

struct Down;

impl Judge for Down {
    fn complete(&self, _: &str) -> Result<String> {
        Err(Error::Judge("connection refused".into()))
    }
}

#[test]
fn malformed_replies_are_retried() {
    let q = qmatrix();
    let config = TraceConfig {
        sample_size: 1,
        ..TraceConfig::default()
    };
    let judge = Flaky {
        bad_replies: 2,
        calls: Mutex::new(0),
    };
    let out = trace(&entries(), &q, &judge, &config).unwrap();
    assert_eq!(out.transcript[0].attempts.len(), 3);
    assert!(out.verdicts[0].error.is_none());

    let judge = Flaky {
        bad_replies: 3,
        calls: Mutex::new(0),
    };
    let out = trace(&entries(), &q, &judge, &config).unwrap();
    let v = &out.verdicts[0];
    assert!(v.error.as_deref().unwrap().contains("malformed"));
    assert!(!v.labels.is_empty());
    assert!(v.labels.values().all(|&l| l == Label::Unknown));
}

#[test]
fn transport_failure_yields_annotated_partial_result() {
    let q = qmatrix();
    let config = TraceConfig {
        sample_size: 3,
        ..TraceConfig::default()
    };
    let out = trace(&entries(), &q, &Down, &config).unwrap();
    assert_eq!(out.verdicts.len(), 3);
    for (v, t) in out.verdicts.iter().zip(&out.transcript) {
        assert!(v.error.as_deref().unwrap().contains("connection refused"));
        assert_eq!(t.attempts.len(), 3);
    }
}

#[test]
fn raw_scores_follow_the_map() {
    let c = catalog();
    let v = [verdict(&[("a", Label::Good), ("b", Label::Fair), ("c", Label::Bad)])];
    let s = score_states("m", &v, &LabelScoreMap::default(), &c).unwrap();
    assert_eq!(s.raw["a"], 1.0);
    assert_eq!(s.raw["b"], 0.5);
    assert_eq!(s.raw["c"], -1.0);
    assert!((s.ms_fs.unwrap() - 100.0 * 0.5 / 3.0).abs() < 1e-12);
    assert_eq!(s.state.values, vec![1.0, 0.75, 0.0, 0.5, 0.5]);
    assert_eq!(s.state.method, DiagnosisMethod::FewShot);
}

#[test]
fn all_good_is_full_mastery() {
    let c = catalog();
    let v = [verdict(&[("a", Label::Good), ("b", Label::Good), ("c", Label::Good), ("d", Label::Good)])];
    let s = score_states("m", &v, &LabelScoreMap::default(), &c).unwrap();
    assert_eq!(&s.state.values[..4], &[1.0; 4]);
    assert_eq!(s.mastery, 1.0);
    assert_eq!(s.ms_fs, Some(100.0));
}

#[test]
fn negative_dominated_trace_has_negative_ms_fs() {
    let c = catalog();
    let v = [
        verdict(&[("a", Label::Bad), ("b", Label::Fair)]),
        verdict(&[("c", Label::Bad), ("d", Label::Good)]),
    ];
    let s = score_states("m", &v, &LabelScoreMap::default(), &c).unwrap();
    assert!(s.ms_fs.unwrap() < 0.0);
}

#[test]
fn last_label_wins_and_sums_commute() {
    let c = catalog();
    let first = verdict(&[("a", Label::Bad)]);
    let second = verdict(&[("a", Label::Good), ("b", Label::Fair)]);
    let map = LabelScoreMap::default();
    let fwd = score_states("m", &[first.clone(), second.clone()], &map, &c).unwrap();
    let rev = score_states("m", &[second, first], &map, &c).unwrap();
    assert_eq!(fwd.raw["a"], 1.0);
    assert_eq!(rev.raw["a"], -1.0);
    assert_eq!(fwd.cumulative, rev.cumulative);
    assert_eq!(fwd.cumulative["a"], 0.0);
}

#[test]
fn better_labels_never_lower_scores() {
    let c = catalog();
    let map = LabelScoreMap::default();
    let order = [Label::Bad, Label::Fair, Label::Good];
    for w in order.windows(2) {
        let lo = score_states("m", &[verdict(&[("a", w[0])])], &map, &c).unwrap();
        let hi = score_states("m", &[verdict(&[("a", w[1])])], &map, &c).unwrap();
        assert!(hi.raw["a"] > lo.raw["a"]);
        assert!(hi.state.values[0] > lo.state.values[0]);
    }
}

#[test]
fn zero_fair_preset_only_moves_fair() {
    let c = catalog();
    let v = [verdict(&[("a", Label::Good), ("b", Label::Fair), ("c", Label::Bad), ("d", Label::Unknown)])];
    let base = score_states("m", &v, &LabelScoreMap::default(), &c).unwrap();
    let alt = score_states("m", &v, &LabelScoreMap::appendix(), &c).unwrap();
    for k in ["a", "c", "d"] {
        assert_eq!(base.raw[k], alt.raw[k]);
    }
    assert_eq!(alt.raw["b"], 0.0);
    assert_eq!(LabelScoreMap::preset("appendix").unwrap(), LabelScoreMap::appendix());
    assert!(LabelScoreMap::preset("other").is_err());
}

#[test]
fn invalid_maps_and_empty_input_error() {
    let c = catalog();
    let bad = LabelScoreMap {
        fair: 2.0,
        ..LabelScoreMap::default()
    };
    assert!(score_states("m", &[verdict(&[("a", Label::Good)])], &bad, &c).is_err());
    assert!(matches!(
        score_states("m", &[], &LabelScoreMap::default(), &c),
        Err(Error::Empty(_))
    ));
}

#[test]
fn transcripts_are_json_lines() {
    let q = qmatrix();
    let config = TraceConfig {
        sample_size: 2,
        ..TraceConfig::default()
    };
    let out = trace(&entries(), &q, &MockJudge::default(), &config).unwrap();
    let dir = std::env::temp_dir().join(format!("cogdiag-transcripts-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("t.jsonl");
    write_transcripts(&path, &out.transcript).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back: Vec<TranscriptEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, out.transcript);
    std::fs::remove_dir_all(dir).unwrap();
}

/// Serves one canned JSON reply and hands back the raw request.
fn one_shot_server(reply_body: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/judge", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
            reply_body.len(),
            reply_body
        )
        .unwrap();
        head + &String::from_utf8(body).unwrap()
    });
    (url, handle)
}

#[test]
fn http_judge_posts_prompt_and_reads_text() {
    let (url, server) = one_shot_server(r#"{"text":"Prediction: 1\nKnowledge State:\n- a: good\n"}"#);
    let judge = HttpJudge::new(url, Some("secret".into()), Duration::from_secs(5)).unwrap();
    let text = judge.complete("hello").unwrap();
    assert!(text.starts_with("Prediction: 1"));
    let request = server.join().unwrap();
    assert!(request.starts_with("POST /judge"));
    assert!(request.to_ascii_lowercase().contains("authorization: bearer secret"));
    assert!(request.ends_with(r#"{"prompt":"hello"}"#));
}

#[test]
fn http_judge_reports_transport_errors() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    drop(listener);
    let judge = HttpJudge::new(url, None, Duration::from_secs(2)).unwrap();
    assert!(matches!(judge.complete("x"), Err(Error::Judge(_))));
}
