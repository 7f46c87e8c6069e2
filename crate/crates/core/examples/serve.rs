//! Starts the control server on a loopback port, paused, and drives it over
//! HTTP: read the state, single-step, flip a preference, and follow the
//! event stream until the next plan.

use std::io::{BufRead, BufReader};
use std::time::Duration;

use aif_core::runtime::{router, run_sequencer, RunConfig, Scenario, ServerState, Session};
use aif_core::trace::{Event, TraceRecord};
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig { episodes: 4, ..RunConfig::for_scenario(Scenario::Tmaze) };
    let session = Session::new(RunConfig { prior_left: 0.99, ..config })?;
    let state = ServerState::new(session, None, Duration::from_millis(20), true);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await });
    tokio::spawn(run_sequencer(state));

    tokio::task::spawn_blocking(move || -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
        let http = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
        let url = |p: &str| format!("http://{addr}{p}");
        let s: serde_json::Value = http.get(url("/state")).call()?.into_body().read_json()?;
        println!("state: tick {} paused {} agents {}", s["tick"], s["paused"], s["agents"].as_array().map_or(0, Vec::len));

        let layer0 = json!({"agent_id": "tmaze", "layer": 0, "fragment": {"left_reward": 0.0}});
        let resp = http.post(url("/preferences")).send_json(&layer0)?;
        println!("layer-0 write: HTTP {}", resp.status());

        let flip = json!({"agent_id": "tmaze", "layer": 1, "fragment": {"left_reward": -9.0, "right_no_reward": 9.0}});
        let body: serde_json::Value = http.post(url("/preferences")).send_json(&flip)?.into_body().read_json()?;
        println!("layer-1 write: {body}");

        let stream = http.get(url("/events")).call()?;
        http.post(url("/control")).send_json(json!({"command": "resume"}))?;
        for line in BufReader::new(stream.into_body().into_reader()).lines() {
            let r: TraceRecord = serde_json::from_str(&line?)?;
            match &r.event {
                Event::PreferenceChanged { .. } | Event::OperatorCommand { .. } => {
                    println!("event {:>4} {:?} {}", r.seq, r.source, r.event.event_type());
                }
                Event::PlanDecision { policy, .. } => {
                    println!("event {:>4} next plan {}", r.seq, policy.actions.join(" "));
                    break;
                }
                _ => {}
            }
        }
        Ok(())
    })
    .await?
    .map_err(|e| e.to_string())?;
    Ok(())
}
