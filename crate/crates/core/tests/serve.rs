use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use aif_core::harness::compute_metrics;
use aif_core::runtime::session::TMAZE_AGENT;
use aif_core::runtime::{router, run_sequencer, RunConfig, Scenario, ServerState, Session};
use aif_core::trace::{parse_jsonl, Event, Source, TraceRecord};
use serde_json::{json, Value};

fn client() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(20)))
        .build()
        .into()
}

async fn start(config: RunConfig) -> (SocketAddr, Arc<ServerState>) {
    let session = Session::new(config).unwrap();
    let state = ServerState::new(session, None, Duration::from_millis(2), true);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await });
    tokio::spawn(run_sequencer(state.clone()));
    (addr, state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.unwrap()
}

fn get_json(addr: SocketAddr, path: &str) -> (u16, Value) {
    let resp = client().get(format!("http://{addr}{path}")).call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.into_body().read_json().unwrap())
}

fn post_json(addr: SocketAddr, path: &str, body: Value) -> (u16, Value) {
    let resp = client().post(format!("http://{addr}{path}")).send_json(&body).unwrap();
    let status = resp.status().as_u16();
    (status, resp.into_body().read_json().unwrap())
}

fn events(addr: SocketAddr) -> Vec<TraceRecord> {
    let resp = client().get(format!("http://{addr}/events?follow=false")).call().unwrap();
    assert_eq!(resp.headers().get("content-type").unwrap(), "application/x-ndjson");
    parse_jsonl(&resp.into_body().read_to_string().unwrap()).unwrap()
}

/// Single-steps until `done` holds for the state document.
fn step_until(addr: SocketAddr, done: impl Fn(&Value) -> bool) -> Value {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let (_, s) = get_json(addr, "/state");
        if done(&s) {
            return s;
        }
        assert!(Instant::now() < deadline, "timed out stepping");
        let before = s["records"].as_u64().unwrap();
        post_json(addr, "/control", json!({"command": "step"}));
        while get_json(addr, "/state").1["records"].as_u64().unwrap() <= before + 1 {
            std::thread::sleep(Duration::from_millis(2));
            assert!(Instant::now() < deadline, "step did not run");
        }
    }
}

fn tmaze_config() -> RunConfig {
    RunConfig { scenario: Scenario::Tmaze, prior_left: 0.99, episodes: 6, ..RunConfig::default() }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_freezes_ticks_and_state_is_served() {
    let (addr, _) = start(tmaze_config()).await;
    blocking(move || {
        let (status, s) = get_json(addr, "/state");
        assert_eq!(status, 200);
        assert_eq!(s["paused"], true);
        assert_eq!(s["tick"], 0);
        assert_eq!(s["agents"][0]["id"], TMAZE_AGENT);
        std::thread::sleep(Duration::from_millis(100));
        assert_eq!(get_json(addr, "/state").1["tick"], 0);

        let s = step_until(addr, |s| s["tick"] == 1);
        assert_eq!(s["paused"], true);
        std::thread::sleep(Duration::from_millis(100));
        assert_eq!(get_json(addr, "/state").1["tick"], 1);

        let (status, c) = post_json(addr, "/control", json!({"command": "resume"}));
        assert_eq!(status, 200);
        assert_eq!(c["paused"], false);
        let deadline = Instant::now() + Duration::from_secs(20);
        while get_json(addr, "/state").1["finished"] != true {
            assert!(Instant::now() < deadline);
            std::thread::sleep(Duration::from_millis(5));
        }
        let (status, _) = post_json(addr, "/control", json!({"command": "rewind"}));
        assert_eq!(status, 400);

        let controls: Vec<_> = events(addr)
            .into_iter()
            .filter(|r| r.source == Source::Operator)
            .map(|r| match r.event {
                Event::OperatorCommand { command } => command["control"].as_str().unwrap().to_string(),
                other => panic!("unexpected operator event {other:?}"),
            })
            .collect();
        assert_eq!(controls, vec!["step", "resume"]);
    })
    .await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn preference_flip_over_the_wire_changes_the_next_plan() {
    let (addr, _) = start(tmaze_config()).await;
    blocking(move || {
        step_until(addr, |s| s["progress"] == 1);

        let stream = client().get(format!("http://{addr}/events")).call().unwrap();
        let reader = std::thread::spawn(move || {
            let mut lines = BufReader::new(stream.into_body().into_reader()).lines();
            let mut flipped = false;
            while let Some(Ok(line)) = lines.next() {
                let r: TraceRecord = serde_json::from_str(&line).unwrap();
                match &r.event {
                    Event::PreferenceChanged { .. } => flipped = true,
                    Event::PlanDecision { policy, .. } if flipped => return policy.actions.clone(),
                    _ => {}
                }
            }
            panic!("stream ended before the post-flip plan");
        });

        let flip = json!({
            "agent_id": TMAZE_AGENT,
            "layer": 1,
            "fragment": {"left_reward": -9.0, "right_no_reward": 9.0},
            "precision": 1.0,
        });
        let (status, body) = post_json(addr, "/preferences", flip);
        assert_eq!(status, 200, "{body}");
        step_until(addr, |s| s["progress"] == 2);

        let streamed = reader.join().unwrap();
        assert_eq!(streamed[0], "go_right");

        let records = events(addr);
        let plans: Vec<(u64, Vec<String>)> = records
            .iter()
            .filter_map(|r| match &r.event {
                Event::PlanDecision { policy, .. } => Some((r.seq, policy.actions.clone())),
                _ => None,
            })
            .collect();
        let change = records
            .iter()
            .find(|r| matches!(r.event, Event::PreferenceChanged { .. }))
            .expect("flip is in the trace");
        assert_eq!(change.source, Source::Operator);
        let before: Vec<_> = plans.iter().filter(|p| p.0 < change.seq).collect();
        let after: Vec<_> = plans.iter().filter(|p| p.0 > change.seq).collect();
        assert_eq!(before.last().unwrap().1[0], "go_left");
        assert_eq!(after[0].1[0], "go_right");
        let operator_events = records.iter().filter(|r| r.source == Source::Operator).count();
        let controls = records.iter().filter(|r| matches!(r.event, Event::OperatorCommand { .. })).count();
        assert_eq!(operator_events, controls + 1);
        assert_eq!(compute_metrics(&records).unwrap().corrigibility_latency, Some(1));
    })
    .await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn layer_zero_writes_are_refused() {
    let (addr, _) = start(tmaze_config()).await;
    blocking(move || {
        let hash = get_json(addr, "/state").1["agents"][0]["layer0_hash"].clone();
        let (status, body) = post_json(
            addr,
            "/preferences",
            json!({"agent_id": TMAZE_AGENT, "layer": 0, "fragment": {"left_no_reward": 5.0}, "precision": 1.0}),
        );
        assert_eq!(status, 403);
        assert_eq!(body["error"], "ImmutableLayer");
        assert_eq!(get_json(addr, "/state").1["agents"][0]["layer0_hash"], hash);
        let rejected: Vec<_> =
            events(addr).into_iter().filter(|r| matches!(r.event, Event::PreferenceWriteRejected { .. })).collect();
        assert_eq!(rejected.len(), 1);
        assert_eq!(rejected[0].source, Source::Operator);

        let (status, _) =
            post_json(addr, "/preferences", json!({"agent_id": "ghost", "layer": 1, "fragment": {"start": 1.0}}));
        assert_eq!(status, 404);
        let (status, _) =
            post_json(addr, "/preferences", json!({"agent_id": TMAZE_AGENT, "layer": 1, "fragment": {"treasure": 1.0}}));
        assert_eq!(status, 400);
    })
    .await;
}
