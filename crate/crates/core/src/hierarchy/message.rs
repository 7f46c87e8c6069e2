//! Bus messages and their payload schemas.

use serde::{Deserialize, Serialize};

use super::HierarchyError;
use crate::agent::PreferenceFragment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    ErrorReport,
    PreferenceFlow,
    TaskOffer,
    TaskBid,
    TaskAssign,
    OutcomeReport,
    Approval,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Agent(String),
    Topic(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Payload {
    ErrorReport {
        f: f64,
        observation: String,
        zero_evidence: bool,
    },
    /// Top-down preferences; the fragment's precision is the flow's γ.
    PreferenceFlow {
        fragment: PreferenceFragment,
    },
    TaskOffer {
        task_id: String,
        requirements: Vec<String>,
        budget: u64,
    },
    TaskBid {
        task_id: String,
        ewma: Option<f64>,
    },
    TaskAssign {
        task_id: String,
        share: u64,
    },
    OutcomeReport {
        task_id: String,
        f: f64,
        success: bool,
    },
    /// Issued by an intermediate parent to let `sender` reach `receiver`.
    Approval {
        sender: String,
        receiver: String,
    },
    Trace {
        note: String,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::ErrorReport { .. } => MessageKind::ErrorReport,
            Payload::PreferenceFlow { .. } => MessageKind::PreferenceFlow,
            Payload::TaskOffer { .. } => MessageKind::TaskOffer,
            Payload::TaskBid { .. } => MessageKind::TaskBid,
            Payload::TaskAssign { .. } => MessageKind::TaskAssign,
            Payload::OutcomeReport { .. } => MessageKind::OutcomeReport,
            Payload::Approval { .. } => MessageKind::Approval,
            Payload::Trace { .. } => MessageKind::Trace,
        }
    }

    /// Checks the kind-specific schema.
    pub fn validate(&self) -> Result<(), HierarchyError> {
        let bad = |m: &str| Err(HierarchyError::SchemaViolation(m.to_string()));
        match self {
            Payload::ErrorReport { f, observation, .. } => {
                if !(f.is_finite() && *f >= 0.0) {
                    return bad("error report F must be finite and non-negative");
                }
                if observation.is_empty() {
                    return bad("error report needs an observation");
                }
            }
            Payload::PreferenceFlow { fragment } => {
                if !(fragment.precision.is_finite() && fragment.precision >= 0.0) {
                    return bad("preference flow precision must be finite and non-negative");
                }
                if fragment.log_pref.values().any(|v| !v.is_finite()) {
                    return bad("preference flow values must be finite");
                }
            }
            Payload::TaskOffer { task_id, .. } | Payload::TaskBid { task_id, .. } | Payload::TaskAssign { task_id, .. } => {
                if task_id.is_empty() {
                    return bad("task messages need a task id");
                }
                if let Payload::TaskBid { ewma: Some(e), .. } = self {
                    if !(e.is_finite() && *e >= 0.0) {
                        return bad("bid EWMA must be finite and non-negative");
                    }
                }
            }
            Payload::OutcomeReport { task_id, f, .. } => {
                if task_id.is_empty() || !(f.is_finite() && *f >= 0.0) {
                    return bad("outcome report needs a task id and a finite non-negative F");
                }
            }
            Payload::Approval { sender, receiver } => {
                if sender.is_empty() || receiver.is_empty() || sender == receiver {
                    return bad("approval needs two distinct parties");
                }
            }
            Payload::Trace { .. } => {}
        }
        Ok(())
    }
}

/// A message as submitted, before the bus assigns an id and tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub sender: String,
    pub target: Target,
    pub payload: Payload,
    #[serde(default)]
    pub provenance: Vec<u64>,
}

impl Draft {
    pub fn to_agent(sender: &str, receiver: &str, payload: Payload) -> Self {
        Self { sender: sender.into(), target: Target::Agent(receiver.into()), payload, provenance: vec![] }
    }

    pub fn to_topic(sender: &str, topic: &str, payload: Payload) -> Self {
        Self { sender: sender.into(), target: Target::Topic(topic.into()), payload, provenance: vec![] }
    }

    pub fn with_provenance(mut self, ids: impl IntoIterator<Item = u64>) -> Self {
        self.provenance.extend(ids);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub id: u64,
    pub kind: MessageKind,
    pub sender: String,
    pub target: Target,
    pub payload: Payload,
    pub tick: u64,
    /// Earlier message ids this one derives from, ascending.
    pub provenance: Vec<u64>,
}
