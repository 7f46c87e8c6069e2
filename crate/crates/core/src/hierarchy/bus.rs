//! Sequenced pub-sub bus with blanket enforcement, and the parent's
//! attention buffer for incoming error reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::message::{BusMessage, Draft, Payload, Target};
use super::topology::{ApprovalRecord, Authorization, BlanketTopology};
use super::HierarchyError;
use crate::trace::{Event, TraceLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub message_id: u64,
    pub receiver: String,
    pub delivered: bool,
    pub authorization: Option<Authorization>,
}

#[derive(Debug, Clone, Default)]
pub struct MessageBus {
    next_id: u64,
    log: Vec<BusMessage>,
    inboxes: BTreeMap<String, Vec<BusMessage>>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log(&self) -> &[BusMessage] {
        &self.log
    }

    pub fn message(&self, id: u64) -> Option<&BusMessage> {
        self.log.get(id as usize)
    }

    pub fn take_inbox(&mut self, agent: &str) -> Vec<BusMessage> {
        self.inboxes.remove(agent).unwrap_or_default()
    }

    pub fn pending(&self, agent: &str) -> usize {
        self.inboxes.get(agent).map_or(0, Vec::len)
    }

    /// Assigns the next id, then delivers to every authorized recipient.
    /// Unauthorized recipients are skipped and logged as violations.
    pub fn publish(
        &mut self,
        topology: &mut BlanketTopology,
        draft: Draft,
        trace: &mut TraceLog,
    ) -> Result<Vec<Receipt>, HierarchyError> {
        draft.payload.validate()?;
        if !topology.is_active(&draft.sender) {
            return Err(HierarchyError::UnknownAgent(draft.sender.clone()));
        }
        if draft.provenance.windows(2).any(|w| w[0] >= w[1]) || draft.provenance.iter().any(|p| *p >= self.next_id) {
            return Err(HierarchyError::SchemaViolation(
                "provenance must list earlier message ids in ascending order".into(),
            ));
        }
        let recipients: Vec<String> = match &draft.target {
            Target::Agent(r) => vec![r.clone()],
            Target::Topic(t) => topology
                .topic(t)
                .ok_or_else(|| HierarchyError::UnknownTopic(t.clone()))?
                .members()
                .filter(|m| **m != draft.sender)
                .cloned()
                .collect(),
        };
        let id = self.next_id;
        let message = BusMessage {
            id,
            kind: draft.payload.kind(),
            sender: draft.sender,
            target: draft.target,
            payload: draft.payload,
            tick: trace.tick(),
            provenance: draft.provenance,
        };
        if let Payload::Approval { sender, receiver } = &message.payload {
            let record = ApprovalRecord {
                approval_id: id,
                approver: message.sender.clone(),
                sender: sender.clone(),
                receiver: receiver.clone(),
            };
            topology.record_approval(record)?;
            trace.emit(
                &message.sender,
                Event::ApprovalGranted {
                    approver: message.sender.clone(),
                    sender: sender.clone(),
                    receiver: receiver.clone(),
                    message_id: id,
                },
            );
        }
        self.next_id += 1;

        let topic = match &message.target {
            Target::Topic(t) => Some(t.as_str()),
            Target::Agent(_) => None,
        };
        let mut receipts = Vec::with_capacity(recipients.len());
        for receiver in recipients {
            let auth = topology.authorize(&message.sender, &receiver, &message.provenance, topic);
            match &auth {
                Some(a) => {
                    self.inboxes.entry(receiver.clone()).or_default().push(message.clone());
                    trace.emit(
                        &message.sender,
                        Event::MessageDelivered { message: message.clone(), receiver: receiver.clone(), authorization: a.clone() },
                    );
                }
                None => {
                    let reason = if topology.is_active(&receiver) {
                        format!("{} and {} share no blanket edge, topic or approval", message.sender, receiver)
                    } else {
                        format!("{receiver} is not an active agent")
                    };
                    trace.emit(
                        &message.sender,
                        Event::BlanketViolationAttempt { message: message.clone(), receiver: receiver.clone(), reason },
                    );
                }
            }
            receipts.push(Receipt { message_id: id, receiver, delivered: auth.is_some(), authorization: auth });
        }
        self.log.push(message);
        Ok(receipts)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionOutcome {
    /// Consumed this tick, highest F first.
    pub consumed: Vec<(String, f64)>,
    /// Below threshold, kept for one more tick.
    pub retained: Vec<(String, f64)>,
    /// Below threshold for a second tick.
    pub dropped: Vec<(String, f64)>,
}

fn by_f_then_id(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Sorts reports by descending F (ties by child id) and keeps those above
/// `threshold`.
pub fn attention_filter(reports: &[(String, f64)], threshold: f64) -> Vec<(String, f64)> {
    let mut sorted: Vec<(String, f64)> = reports.iter().filter(|r| r.1 > threshold).cloned().collect();
    sorted.sort_by(by_f_then_id);
    sorted
}

/// Parent-side buffer: reports below threshold survive one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionBuffer {
    pub threshold: f64,
    held: Vec<(String, f64)>,
}

impl AttentionBuffer {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, held: Vec::new() }
    }

    pub fn tick(&mut self, incoming: &[(String, f64)]) -> AttentionOutcome {
        let consumed_old = attention_filter(&self.held, self.threshold);
        let mut dropped: Vec<(String, f64)> = self.held.drain(..).filter(|r| r.1 <= self.threshold).collect();
        dropped.sort_by(by_f_then_id);
        let mut consumed = attention_filter(incoming, self.threshold);
        consumed.extend(consumed_old);
        consumed.sort_by(by_f_then_id);
        let mut retained: Vec<(String, f64)> = incoming.iter().filter(|r| r.1 <= self.threshold).cloned().collect();
        retained.sort_by(by_f_then_id);
        self.held = retained.clone();
        AttentionOutcome { consumed, retained, dropped }
    }
}
