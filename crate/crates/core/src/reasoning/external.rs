//! Chat-completion client for an external language model.
//!
//! Settings come from an optional JSON file, overridden by environment
//! variables. Every exchange is appended to a JSONL transcript with the
//! bearer token redacted.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Capabilities, Hypothesis, Interpretation, ReasoningError, ReasoningProvider, ReportRef, TaskContext, Verdict};

pub const ENV_ENDPOINT: &str = "AIF_PROVIDER_ENDPOINT";
pub const ENV_TOKEN: &str = "AIF_PROVIDER_TOKEN";
pub const ENV_MODEL: &str = "AIF_PROVIDER_MODEL";
pub const ENV_TIMEOUT: &str = "AIF_PROVIDER_TIMEOUT_SECS";

const REDACTED: &str = "[REDACTED]";

fn default_timeout() -> u64 {
    30
}

fn default_in_flight() -> usize {
    4
}

fn default_attempts() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default, skip_serializing)]
    pub token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Attempts allowed when the model returns unusable hypotheses.
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            token: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            max_attempts: default_attempts(),
            transcript: None,
        }
    }
}

impl ExternalConfig {
    /// Reads the optional file, then applies environment overrides.
    pub fn load(file: Option<&Path>) -> Result<Self, ReasoningError> {
        let mut cfg = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ReasoningError::ProviderUnavailable(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| ReasoningError::ProviderUnavailable(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ReasoningError> {
        if let Some(v) = get(ENV_ENDPOINT) {
            self.endpoint = v;
        }
        if let Some(v) = get(ENV_TOKEN) {
            self.token = Some(v);
        }
        if let Some(v) = get(ENV_MODEL) {
            self.model = v;
        }
        if let Some(v) = get(ENV_TIMEOUT) {
            self.timeout_secs =
                v.parse().map_err(|_| ReasoningError::ProviderUnavailable(format!("{ENV_TIMEOUT} is not an integer: {v}")))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl InFlight {
    fn acquire(self: &Arc<Self>) -> Permit {
        let mut n = self.count.lock().expect("in-flight lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("in-flight lock");
        }
        *n += 1;
        Permit(self.clone())
    }
}

struct Permit(Arc<InFlight>);

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.count.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// Clones share the in-flight limit and the token counter.
#[derive(Debug, Clone)]
pub struct ExternalProvider {
    config: ExternalConfig,
    agent: ureq::Agent,
    in_flight: Arc<InFlight>,
    tokens: Arc<Mutex<u64>>,
}

impl ExternalProvider {
    pub fn new(config: ExternalConfig) -> Result<Self, ReasoningError> {
        if config.endpoint.is_empty() {
            return Err(ReasoningError::ProviderUnavailable(format!("no endpoint configured; set {ENV_ENDPOINT}")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        let in_flight = Arc::new(InFlight { count: Mutex::new(0), freed: Condvar::new(), max: config.max_in_flight.max(1) });
        Ok(Self { config, agent, in_flight, tokens: Arc::new(Mutex::new(0)) })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    /// Fails only when the endpoint cannot be reached.
    pub fn probe(&self) -> Result<(), ReasoningError> {
        match self.ask("probe", "Reply with the JSON object {\"ok\": true} in a ```json block.", "ping".into()) {
            Err(e @ ReasoningError::ProviderUnavailable(_)) => Err(e),
            _ => Ok(()),
        }
    }

    fn redact(&self, text: String) -> String {
        match &self.config.token {
            Some(t) if !t.is_empty() => text.replace(t.as_str(), REDACTED),
            _ => text,
        }
    }

    fn log(&self, entry: Value) {
        let Some(path) = &self.config.transcript else { return };
        let line = self.redact(entry.to_string());
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{line}");
        }
    }

    /// Sends one chat request and returns the JSON object in the reply.
    fn ask(&self, purpose: &str, system: &str, user: String) -> Result<Value, ReasoningError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let _permit = self.in_flight.acquire();
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = &self.config.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let outcome = req
            .send_json(&body)
            .and_then(|r| r.into_body().read_json::<Value>())
            .map_err(|e| ReasoningError::ProviderUnavailable(self.redact(e.to_string())));
        let reply = match outcome {
            Ok(v) => v,
            Err(e) => {
                self.log(json!({"purpose": purpose, "request": body, "error": e.to_string()}));
                return Err(e);
            }
        };
        let used = reply["usage"]["total_tokens"].as_u64();
        let content = reply["choices"][0]["message"]["content"].as_str().unwrap_or_default().to_string();
        let used = used.unwrap_or_else(|| ((body.to_string().len() + content.len()) / 4) as u64);
        *self.tokens.lock().expect("token counter") += used;
        self.log(json!({"purpose": purpose, "request": body, "response": content, "tokens": used}));
        extract_json(&content)
    }
}

/// The first fenced JSON block in a reply, or the reply itself when it is
/// bare JSON.
pub fn extract_json(content: &str) -> Result<Value, ReasoningError> {
    let fenced = content.find("```").and_then(|start| {
        let rest = &content[start + 3..];
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        rest.find("```").map(|end| &rest[..end])
    });
    let text = fenced.unwrap_or(content).trim();
    serde_json::from_str(text).map_err(|e| ReasoningError::Malformed(format!("reply is not JSON: {e}")))
}

const INTERPRET_PROMPT: &str = "You explain free-energy reports. Reply with a fenced json block holding \
\"narrative_form1\", \"narrative_form2\" (one sentence per decomposition, each ending with the value) \
and \"verdict\" (\"agree\" when both decompositions tell the same story, else \"disagree\").";

const CONSENSUS_PROMPT: &str = "Decide whether two explanations of the same quantity agree. Reply with a \
fenced json block {\"verdict\": \"agree\"} or {\"verdict\": \"disagree\"}.";

const HYPOTHESIS_PROMPT: &str = "Propose grid transformation rules that map each input to its output. Reply \
with a fenced json block {\"hypotheses\": [{\"key\", \"annotation\", \"p_match_if_true\", \"p_match_if_false\"}]}.";

fn verdict(v: &Value) -> Result<Verdict, ReasoningError> {
    match v["verdict"].as_str() {
        Some("agree") => Ok(Verdict::Agree),
        Some("disagree") => Ok(Verdict::Disagree),
        other => Err(ReasoningError::Malformed(format!("verdict {other:?}"))),
    }
}

impl ReasoningProvider for ExternalProvider {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            name: format!("external:{}", self.config.model),
            deterministic: false,
            uses_network: true,
            linguistic_consensus: true,
            proposes_hypotheses: true,
            charge_unit: "token".into(),
        }
    }

    fn interpret_report(&mut self, report: ReportRef<'_>) -> Result<Interpretation, ReasoningError> {
        if !report.is_finite() {
            return Err(ReasoningError::NonFiniteReport);
        }
        let v = self.ask("interpret", INTERPRET_PROMPT, report.to_json().to_string())?;
        let text = |k: &str| {
            v[k].as_str().map(str::to_string).ok_or_else(|| ReasoningError::Malformed(format!("missing {k}")))
        };
        Ok(Interpretation { narrative_form1: text("narrative_form1")?, narrative_form2: text("narrative_form2")?, verdict: verdict(&v)? })
    }

    fn propose_hypotheses(&mut self, context: &TaskContext) -> Result<Vec<Hypothesis>, ReasoningError> {
        if context.examples.is_empty() {
            return Err(ReasoningError::NoHypothesis);
        }
        let prompt = serde_json::to_string(context).expect("context serializes");
        let mut last = ReasoningError::NoHypothesis;
        for _ in 0..self.config.max_attempts.max(1) {
            let v = self.ask("hypotheses", HYPOTHESIS_PROMPT, prompt.clone())?;
            let parsed: Result<Vec<Hypothesis>, _> = serde_json::from_value(v["hypotheses"].clone());
            match parsed {
                Ok(list) => {
                    let valid: Vec<Hypothesis> = list.into_iter().filter(|h| h.validate().is_ok()).collect();
                    if !valid.is_empty() {
                        return Ok(valid);
                    }
                    last = ReasoningError::Malformed("no hypothesis passed validation".into());
                }
                Err(e) => last = ReasoningError::Malformed(e.to_string()),
            }
        }
        Err(last)
    }

    fn check_consensus(&mut self, n1: &str, n2: &str) -> Result<Verdict, ReasoningError> {
        let v = self.ask("consensus", CONSENSUS_PROMPT, json!({"form1": n1, "form2": n2}).to_string())?;
        verdict(&v)
    }

    fn units_used(&self) -> u64 {
        *self.tokens.lock().expect("token counter")
    }
}
