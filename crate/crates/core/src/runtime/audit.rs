//! Offline trace audit: blanket authorization, layer-0 immutability,
//! budget accounting and ledger replay, all rebuilt from the events alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RuntimeError;
use crate::hierarchy::reputation::DEFAULT_DECAY;
use crate::hierarchy::{ApprovalRecord, Authorization, BlanketTopology, BusMessage, MessageKind, Payload, Target};
use crate::trace::{Event, Source, TraceRecord};

const EWMA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Blanket,
    Layer0,
    Budget,
    Ewma,
    Topology,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: usize,
    pub tick: u64,
    pub seq: u64,
    pub agent: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub records: usize,
    pub deliveries: usize,
    pub layer0_checks: usize,
    pub budget_windows: usize,
    pub tasks: usize,
    pub ledger_updates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: AuditCounts,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn to_text(&self) -> String {
        let c = &self.checked;
        let mut s = format!(
            "records {} deliveries {} layer0 {} budget windows {} tasks {} ledger updates {}\nviolations {}\n",
            c.records,
            c.deliveries,
            c.layer0_checks,
            c.budget_windows,
            c.tasks,
            c.ledger_updates,
            self.violations.len()
        );
        for v in &self.violations {
            s.push_str(&format!("  [{:?}] #{} tick {} seq {} {}: {}\n", v.kind, v.index, v.tick, v.seq, v.agent, v.detail));
        }
        s
    }
}

#[derive(Default)]
struct Window {
    max_units: u64,
    units: u64,
}

struct Auditor {
    report: AuditReport,
    topology: BlanketTopology,
    spawn_hash: BTreeMap<String, String>,
    windows: BTreeMap<String, Window>,
    tasks: BTreeMap<String, u64>,
    ledger: BTreeMap<String, (f64, u64)>,
}

impl Auditor {
    fn flag(&mut self, kind: ViolationKind, i: usize, r: &TraceRecord, detail: String) {
        self.report.violations.push(Violation { kind, index: i, tick: r.tick, seq: r.seq, agent: r.agent_id.clone(), detail });
    }

    fn layer0(&mut self, i: usize, r: &TraceRecord, hash: &str) {
        self.report.checked.layer0_checks += 1;
        match self.spawn_hash.get(&r.agent_id) {
            Some(h) if h == hash => {}
            Some(h) => {
                let detail = format!("layer-0 hash {hash} differs from spawn hash {h}");
                self.flag(ViolationKind::Layer0, i, r, detail);
            }
            None => self.flag(ViolationKind::Layer0, i, r, "no spawn record for agent".into()),
        }
    }

    fn spawn(&mut self, i: usize, r: &TraceRecord, parent: &Option<String>, hash: &str) {
        self.spawn_hash.insert(r.agent_id.clone(), hash.to_string());
        if self.topology.is_active(&r.agent_id) {
            return;
        }
        let added = match parent {
            None => self.topology.add_root(&r.agent_id),
            Some(p) => self.topology.add_child(p, &r.agent_id),
        };
        if let Err(e) = added {
            self.flag(ViolationKind::Topology, i, r, e.to_string());
        }
    }

    fn delivery(&mut self, i: usize, r: &TraceRecord, message: &BusMessage, receiver: &str, logged: &Authorization) {
        self.report.checked.deliveries += 1;
        let topic = match &message.target {
            Target::Topic(t) => Some(t.as_str()),
            Target::Agent(_) => None,
        };
        let rebuilt = self.topology.authorize(&message.sender, receiver, &message.provenance, topic);
        match rebuilt {
            None => {
                let detail = format!(
                    "{:?} #{} from {} to {receiver} crosses a blanket without edge, topic or approval",
                    message.kind, message.id, message.sender
                );
                self.flag(ViolationKind::Blanket, i, r, detail);
            }
            Some(a) if &a != logged => {
                let detail = format!("logged authorization {logged:?} but the topology gives {a:?}");
                self.flag(ViolationKind::Blanket, i, r, detail);
            }
            Some(_) => {}
        }
        if message.kind == MessageKind::Approval && !matches!(message.payload, Payload::Approval { .. }) {
            self.flag(ViolationKind::Blanket, i, r, "approval kind with a foreign payload".into());
        }
    }

    fn visit(&mut self, i: usize, r: &TraceRecord) {
        let agent = r.agent_id.clone();
        match &r.event {
            Event::AgentSpawned { parent, layer0_hash, .. } => self.spawn(i, r, parent, layer0_hash),
            Event::AgentRetired { replaced_by } => {
                if let Err(e) = self.topology.retire(&agent, replaced_by.as_deref()) {
                    self.flag(ViolationKind::Topology, i, r, e.to_string());
                }
            }
            Event::TopicRegistered { topic, owner } => {
                if let Err(e) = self.topology.register_topic(topic, owner) {
                    self.flag(ViolationKind::Topology, i, r, e.to_string());
                }
            }
            Event::TopicSubscribed { topic, subscriber } => {
                if let Err(e) = self.topology.subscribe(topic, subscriber) {
                    self.flag(ViolationKind::Topology, i, r, e.to_string());
                }
            }
            Event::ApprovalGranted { approver, sender, receiver, message_id } => {
                let rec = ApprovalRecord {
                    approval_id: *message_id,
                    approver: approver.clone(),
                    sender: sender.clone(),
                    receiver: receiver.clone(),
                };
                if let Err(e) = self.topology.record_approval(rec) {
                    self.flag(ViolationKind::Blanket, i, r, e.to_string());
                }
            }
            Event::MessageDelivered { message, receiver, authorization } => {
                self.delivery(i, r, message, receiver, authorization)
            }
            Event::Heartbeat { layer0_hash, .. } | Event::PreferenceWriteRejected { layer0_hash, .. } => {
                self.layer0(i, r, layer0_hash)
            }
            Event::PreferenceChanged { layer, layer0_hash, .. } => {
                self.layer0(i, r, layer0_hash);
                if *layer == 0 {
                    self.flag(ViolationKind::Layer0, i, r, "layer 0 was written".into());
                }
            }
            Event::BudgetReset { max_reasoning_units, .. } => {
                self.report.checked.budget_windows += 1;
                self.windows.insert(agent, Window { max_units: *max_reasoning_units, units: 0 });
            }
            Event::EfeEvaluated { units_charged, .. } => {
                for total in self.tasks.values_mut() {
                    *total += units_charged;
                }
                let w = self.windows.entry(agent).or_default();
                w.units += units_charged;
                if w.units > w.max_units {
                    let detail = format!("{} units charged against a cap of {}", w.units, w.max_units);
                    self.flag(ViolationKind::Budget, i, r, detail);
                }
            }
            Event::Postponed { consumed_units, max_units, .. } => {
                let (units, max) = self.windows.get(&agent).map_or((0, 0), |w| (w.units, w.max_units));
                if *consumed_units != units || *max_units != max {
                    let detail = format!(
                        "postponed with {consumed_units}/{max_units} units but the trace counts {units}/{max}"
                    );
                    self.flag(ViolationKind::Budget, i, r, detail);
                }
            }
            Event::TaskStarted { task_id, .. } => {
                self.tasks.insert(task_id.clone(), 0);
            }
            Event::TaskFinished { task_id, units, .. } => {
                self.report.checked.tasks += 1;
                let counted = self.tasks.remove(task_id);
                if counted != Some(*units) {
                    let detail = format!("task {task_id} reports {units} units but the trace counts {counted:?}");
                    self.flag(ViolationKind::Budget, i, r, detail);
                }
            }
            Event::LedgerUpdate { subject, reported_f, ewma, task_count } => {
                self.report.checked.ledger_updates += 1;
                let f = reported_f.max(0.0);
                let next = match self.ledger.get(subject) {
                    Some((prev, n)) => (DEFAULT_DECAY * prev + (1.0 - DEFAULT_DECAY) * f, n + 1),
                    None => (f, 1),
                };
                self.ledger.insert(subject.clone(), next);
                if (next.0 - ewma).abs() > EWMA_TOLERANCE || next.1 != *task_count {
                    let detail = format!(
                        "ledger for {subject} logged ewma {ewma} over {task_count} tasks; replay gives {} over {}",
                        next.0, next.1
                    );
                    self.flag(ViolationKind::Ewma, i, r, detail);
                }
            }
            _ => {}
        }
    }
}

/// Checks record order, then replays every invariant.
pub fn audit_records(records: &[TraceRecord]) -> Result<AuditReport, RuntimeError> {
    for (i, w) in records.windows(2).enumerate() {
        if (w[1].tick, w[1].seq) <= (w[0].tick, w[0].seq) {
            return Err(RuntimeError::MalformedTrace {
                line: i + 2,
                reason: format!("({}, {}) does not follow ({}, {})", w[1].tick, w[1].seq, w[0].tick, w[0].seq),
            });
        }
    }
    let mut a = Auditor {
        report: AuditReport::default(),
        topology: BlanketTopology::new(),
        spawn_hash: BTreeMap::new(),
        windows: BTreeMap::new(),
        tasks: BTreeMap::new(),
        ledger: BTreeMap::new(),
    };
    for (i, r) in records.iter().enumerate() {
        a.visit(i, r);
    }
    a.report.checked.records = records.len();
    Ok(a.report)
}

pub fn audit_text(text: &str) -> Result<AuditReport, RuntimeError> {
    let records = crate::trace::parse_jsonl(text).map_err(|(line, reason)| RuntimeError::MalformedTrace { line, reason })?;
    audit_records(&records)
}

/// Corrupted copy with one delivery the topology never allowed.
pub fn inject_forged_delivery(records: &[TraceRecord], sender: &str, receiver: &str) -> Vec<TraceRecord> {
    let mut out = records.to_vec();
    let last = out.last().map_or((0, 0), |r| (r.tick, r.seq));
    let next_id = out
        .iter()
        .filter_map(|r| match &r.event {
            Event::MessageDelivered { message, .. } => Some(message.id + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    let message = BusMessage {
        id: next_id,
        kind: MessageKind::Trace,
        sender: sender.to_string(),
        target: Target::Agent(receiver.to_string()),
        payload: Payload::Trace { note: "forged".into() },
        tick: last.0,
        provenance: Vec::new(),
    };
    out.push(TraceRecord {
        tick: last.0,
        seq: last.1 + 1,
        agent_id: sender.to_string(),
        source: Source::System,
        event: Event::MessageDelivered { message, receiver: receiver.to_string(), authorization: Authorization::ParentChild },
    });
    out
}

/// Corrupted copy where one heartbeat of `agent` carries an altered layer-0 hash.
pub fn tamper_layer0(records: &[TraceRecord], agent: &str) -> Vec<TraceRecord> {
    let mut out = records.to_vec();
    if let Some(Event::Heartbeat { layer0_hash, .. }) = out
        .iter_mut()
        .filter(|r| r.agent_id == agent)
        .map(|r| &mut r.event)
        .find(|e| matches!(e, Event::Heartbeat { .. }))
    {
        let flipped = if layer0_hash.starts_with('0') { '1' } else { '0' };
        layer0_hash.replace_range(0..1, &flipped.to_string());
    }
    out
}
