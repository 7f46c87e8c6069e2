use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use aif_core::generative::compute_vfe;
use aif_core::harness::{generate_tasks, Family};
use aif_core::reasoning::conformance::check_provider;
use aif_core::reasoning::{
    ExternalConfig, ExternalProvider, FallbackProvider, ReasoningError, ReasoningProvider, ReportRef, TabularProvider,
    TaskContext, Verdict,
};
use aif_core::runtime::{run_experiment, ProviderMode, RunConfig, RuntimeError, Scenario};
use aif_core::trace::{parse_jsonl, Event};
use serde_json::{json, Value};

#[derive(Default)]
struct Seen {
    requests: Mutex<Vec<(String, Value)>>,
    active: AtomicUsize,
    peak: AtomicUsize,
    hypothesis_calls: AtomicUsize,
}

type Handler = dyn Fn(&Value, &Seen) -> (u16, Value) + Send + Sync;

/// Minimal chat-completion server on a loopback port.
fn mock(handler: Arc<Handler>, delay: Duration) -> (SocketAddr, Arc<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Seen::default());
    let s = seen.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (handler, seen) = (handler.clone(), s.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                    head.push_str(&line);
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let body: Value = serde_json::from_slice(&body).unwrap();
                let now = seen.active.fetch_add(1, Ordering::SeqCst) + 1;
                seen.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(delay);
                let (status, reply) = handler(&body, &seen);
                seen.active.fetch_sub(1, Ordering::SeqCst);
                seen.requests.lock().unwrap().push((head, body));
                let text = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            });
        }
    });
    (addr, seen)
}

fn reply(content: String, tokens: u64) -> (u16, Value) {
    (200, json!({"choices": [{"message": {"role": "assistant", "content": content}}], "usage": {"total_tokens": tokens}}))
}

fn fenced(v: Value) -> String {
    format!("Here you go.\n```json\n{v}\n```")
}

fn library_hypotheses() -> Value {
    let list: Vec<Value> = Family::ALL
        .iter()
        .map(|f| json!({"key": f.key(), "annotation": format!("{} explains the pairs", f.key()), "p_match_if_true": 0.98, "p_match_if_false": 0.02}))
        .collect();
    json!({ "hypotheses": list })
}

/// A cooperative model: agrees when the two narrated values match, and
/// proposes the whole library after one unusable answer.
fn cooperative(body: &Value, seen: &Seen) -> (u16, Value) {
    let system = body["messages"][0]["content"].as_str().unwrap_or_default();
    let user = body["messages"][1]["content"].as_str().unwrap_or_default();
    if system.contains("explain free-energy") {
        let report: Value = serde_json::from_str(user).unwrap();
        let v1 = report["f_form1"].as_f64().or(report["g_form1"].as_f64()).unwrap();
        let v2 = report["f_form2"].as_f64().or(report["g_form2"].as_f64()).unwrap();
        let verdict = if (v1 - v2).abs() <= 1e-9 { "agree" } else { "disagree" };
        let out = json!({
            "narrative_form1": format!("Form one = {v1:.6}"),
            "narrative_form2": format!("Form two = {v2:.6}"),
            "verdict": verdict,
        });
        reply(fenced(out), 40)
    } else if system.contains("Decide whether") {
        reply(fenced(json!({"verdict": "agree"})), 10)
    } else if system.contains("Propose grid") {
        if seen.hypothesis_calls.fetch_add(1, Ordering::SeqCst) == 0 {
            let bad = json!({"hypotheses": [{"key": "rotate90", "annotation": "backwards", "p_match_if_true": 0.1, "p_match_if_false": 0.9}]});
            return reply(fenced(bad), 25);
        }
        reply(fenced(library_hypotheses()), 25)
    } else {
        reply(fenced(json!({"ok": true})), 1)
    }
}

fn config(addr: SocketAddr) -> ExternalConfig {
    ExternalConfig {
        endpoint: format!("http://{addr}/v1/chat/completions"),
        model: "mock-1".into(),
        token: Some("sk-secret-token".into()),
        timeout_secs: 10,
        ..ExternalConfig::default()
    }
}

fn report() -> aif_core::generative::FreeEnergyReport {
    let model = aif_core::harness::tmaze::tmaze_model(0.5, &Default::default()).unwrap();
    let q = model.prior().dist.clone();
    compute_vfe(&q, &model, "start").unwrap()
}

fn rotate_context() -> TaskContext {
    let task = &generate_tasks(Family::Rotate90, 1, 3).unwrap()[0];
    TaskContext { task_id: task.id.clone(), examples: task.train.clone(), features: task.tags(), retrieved: vec![] }
}

#[test]
fn chat_round_trips_and_token_accounting() {
    let (addr, seen) = mock(Arc::new(cooperative), Duration::ZERO);
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("transcript.jsonl");
    let mut p = ExternalProvider::new(ExternalConfig { transcript: Some(transcript.clone()), ..config(addr) }).unwrap();
    p.probe().unwrap();

    let r = report();
    let i = p.interpret_report(ReportRef::Vfe(&r)).unwrap();
    assert_eq!(i.verdict, Verdict::Agree);
    assert!(i.narrative_form1.starts_with("Form one = "));
    assert_eq!(p.check_consensus("a = 1", "b = 1").unwrap(), Verdict::Agree);

    let hyps = p.propose_hypotheses(&rotate_context()).unwrap();
    assert_eq!(hyps.len(), 6);
    assert_eq!(seen.hypothesis_calls.load(Ordering::SeqCst), 2);
    assert_eq!(p.units_used(), 1 + 40 + 10 + 25 + 25);

    let requests = seen.requests.lock().unwrap();
    assert!(requests.iter().all(|(head, body)| {
        head.to_ascii_lowercase().contains("authorization: bearer sk-secret-token") && body["model"] == "mock-1"
    }));
    assert!(requests.iter().all(|(_, body)| body["temperature"] == 0));
    drop(requests);

    let log = std::fs::read_to_string(&transcript).unwrap();
    assert_eq!(log.lines().count(), 5);
    assert!(!log.contains("sk-secret-token"));
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["purpose"], "probe");
}

#[test]
fn external_provider_conforms() {
    let (addr, _) = mock(Arc::new(cooperative), Duration::ZERO);
    let mut p = ExternalProvider::new(config(addr)).unwrap();
    let r = report();
    let problems = check_provider(&mut p, ReportRef::Vfe(&r), &rotate_context());
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn in_flight_requests_are_bounded() {
    let (addr, seen) = mock(Arc::new(cooperative), Duration::from_millis(60));
    let p = ExternalProvider::new(ExternalConfig { max_in_flight: 2, ..config(addr) }).unwrap();
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let mut p = p.clone();
            std::thread::spawn(move || p.check_consensus("x = 1", "y = 1").unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(seen.peak.load(Ordering::SeqCst), 2);
}

#[test]
fn server_errors_degrade_to_tabular_for_the_episode() {
    let failing = |body: &Value, seen: &Seen| {
        let system = body["messages"][0]["content"].as_str().unwrap_or_default();
        if system.contains("Propose grid") {
            seen.hypothesis_calls.fetch_add(1, Ordering::SeqCst);
            return (500, json!({"error": "overloaded"}));
        }
        cooperative(body, seen)
    };
    let (addr, seen) = mock(Arc::new(failing), Duration::ZERO);
    let ext = ExternalProvider::new(config(addr)).unwrap();
    let mut p = FallbackProvider::new(Box::new(ext), TabularProvider::default());
    let ctx = rotate_context();
    let first = p.propose_hypotheses(&ctx).unwrap();
    assert!(first.iter().any(|h| h.key == "rotate90"));
    assert!(p.degraded().is_some());
    assert!(p.take_fallback_notice().is_some());
    p.propose_hypotheses(&ctx).unwrap();
    assert_eq!(seen.hypothesis_calls.load(Ordering::SeqCst), 1);
    p.reset_episode();
    assert!(p.degraded().is_none());
}

#[test]
fn arclite_runs_through_the_external_provider() {
    let (addr, seen) = mock(Arc::new(cooperative), Duration::ZERO);
    let dir = tempfile::tempdir().unwrap();
    let provider_file = dir.path().join("provider.json");
    std::fs::write(&provider_file, json!({"endpoint": config(addr).endpoint, "model": "mock-1"}).to_string()).unwrap();
    let run = RunConfig {
        scenario: Scenario::Arclite,
        provider: ProviderMode::External,
        provider_config: Some(provider_file),
        count: 4,
        output: dir.path().join("out"),
        ..RunConfig::default()
    };
    let outcome = run_experiment(&run).unwrap();
    assert!(outcome.ok(), "{:?}", outcome.summary.violations);
    assert_eq!(outcome.summary.in_library.as_ref().unwrap().solved, 4);
    assert!(seen.hypothesis_calls.load(Ordering::SeqCst) >= 4);
    let trace = parse_jsonl(&std::fs::read_to_string(dir.path().join("out/trace.jsonl")).unwrap()).unwrap();
    assert!(!trace.iter().any(|r| matches!(r.event, Event::ProviderFallback { .. })));
}

#[test]
fn unreachable_provider_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let provider_file = dir.path().join("provider.json");
    std::fs::write(&provider_file, r#"{"endpoint": "http://127.0.0.1:9/v1", "timeout_secs": 2}"#).unwrap();
    let run = RunConfig {
        scenario: Scenario::Arclite,
        provider: ProviderMode::External,
        provider_config: Some(provider_file),
        count: 1,
        output: dir.path().join("out"),
        ..RunConfig::default()
    };
    let err = run_experiment(&run).err().unwrap();
    assert!(matches!(err, RuntimeError::Reasoning(ReasoningError::ProviderUnavailable(_))), "{err}");
    assert_eq!(err.exit_code(), 3);
}
