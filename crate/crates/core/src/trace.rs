//! Append-only run trace. Every record is one JSONL line
//! `{tick, seq, agent_id, source, event_type, payload}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::{Mode, ModeDecision};
use crate::generative::{EfeReport, FreeEnergyReport, Policy};
use crate::hierarchy::{Authorization, BusMessage, DispatchInputs, Pathway};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    System,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub seq: u64,
    pub agent_id: String,
    pub source: Source,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSnapshot {
    pub hash: String,
    pub log_pref: BTreeMap<String, f64>,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_type", content = "payload")]
pub enum Event {
    AgentSpawned {
        parent: Option<String>,
        role: String,
        layer0_hash: String,
        layers: Vec<LayerSnapshot>,
        capabilities: Vec<String>,
        generation: u32,
    },
    AgentRetired {
        replaced_by: Option<String>,
    },
    TopicRegistered {
        topic: String,
        owner: String,
    },
    TopicSubscribed {
        topic: String,
        subscriber: String,
    },
    Heartbeat {
        layer0_hash: String,
        mode: Mode,
    },
    BudgetReset {
        task: String,
        max_planning_cycles: u64,
        max_reasoning_units: u64,
    },
    Perception {
        observation: String,
        report: FreeEnergyReport,
        posterior: Vec<f64>,
        zero_evidence: bool,
        consensus_rounds: usize,
    },
    ModeSelected(ModeDecision),
    EfeEvaluated {
        policy_id: usize,
        actions: Vec<String>,
        g_form1: f64,
        g_form2: f64,
        consensus: bool,
        units_charged: u64,
    },
    PlanDecision {
        mode: Mode,
        policy: Policy,
        next_action: Option<String>,
        ranking: Vec<usize>,
        removed: Vec<usize>,
        vfe_report: Option<FreeEnergyReport>,
        efe_report: Option<EfeReport>,
        predicted_observations: Vec<f64>,
    },
    ConstraintLockout {
        removed: Vec<usize>,
    },
    Postponed {
        task: String,
        consumed_units: u64,
        consumed_cycles: u64,
        max_units: u64,
        max_cycles: u64,
        unresolved: String,
        message: String,
    },
    ActionExecuted {
        action: String,
        pathway: Pathway,
    },
    PreferenceChanged {
        layer: usize,
        before_hash: Option<String>,
        after_hash: String,
        layer0_hash: String,
        log_pref: BTreeMap<String, f64>,
        precision: f64,
        provenance: String,
    },
    PreferenceWriteRejected {
        layer: usize,
        reason: String,
        layer0_hash: String,
    },
    MessageDelivered {
        message: BusMessage,
        receiver: String,
        authorization: Authorization,
    },
    BlanketViolationAttempt {
        message: BusMessage,
        receiver: String,
        reason: String,
    },
    ApprovalGranted {
        approver: String,
        sender: String,
        receiver: String,
        message_id: u64,
    },
    AttentionConsumed {
        consumed: Vec<(String, f64)>,
        retained: Vec<(String, f64)>,
        dropped: Vec<(String, f64)>,
    },
    DispatchDecision {
        pathway: Pathway,
        policy_id: usize,
        actions: Vec<String>,
        targets: Vec<String>,
        shares: Vec<u64>,
        inputs: DispatchInputs,
    },
    LedgerUpdate {
        subject: String,
        reported_f: f64,
        ewma: f64,
        task_count: u64,
    },
    SpecialistsSpawned {
        children: Vec<String>,
        roles: Vec<String>,
    },
    ParadigmShift {
        old: String,
        new: String,
        annotation_before: Vec<String>,
        annotation_after: Vec<String>,
    },
    Consolidated {
        written: bool,
        avoidance: bool,
        tools_registered: Vec<String>,
    },
    ConsensusEscalation {
        rounds: usize,
        transcript: Vec<String>,
    },
    ProviderFallback {
        reason: String,
    },
    TaskStarted {
        task_id: String,
        family: String,
    },
    TaskFinished {
        task_id: String,
        status: String,
        correct: Option<bool>,
        cycles: u64,
        units: u64,
    },
    TMazeEpisode {
        episode: u64,
        reward_side: String,
        first_move: Option<String>,
        outcome: Option<String>,
    },
    OperatorCommand {
        command: serde_json::Value,
    },
}

impl Event {
    pub fn event_type(&self) -> &'static str {
        match self {
            Event::AgentSpawned { .. } => "AgentSpawned",
            Event::AgentRetired { .. } => "AgentRetired",
            Event::TopicRegistered { .. } => "TopicRegistered",
            Event::TopicSubscribed { .. } => "TopicSubscribed",
            Event::Heartbeat { .. } => "Heartbeat",
            Event::BudgetReset { .. } => "BudgetReset",
            Event::Perception { .. } => "Perception",
            Event::ModeSelected(_) => "ModeSelected",
            Event::EfeEvaluated { .. } => "EfeEvaluated",
            Event::PlanDecision { .. } => "PlanDecision",
            Event::ConstraintLockout { .. } => "ConstraintLockout",
            Event::Postponed { .. } => "Postponed",
            Event::ActionExecuted { .. } => "ActionExecuted",
            Event::PreferenceChanged { .. } => "PreferenceChanged",
            Event::PreferenceWriteRejected { .. } => "PreferenceWriteRejected",
            Event::MessageDelivered { .. } => "MessageDelivered",
            Event::BlanketViolationAttempt { .. } => "BlanketViolationAttempt",
            Event::ApprovalGranted { .. } => "ApprovalGranted",
            Event::AttentionConsumed { .. } => "AttentionConsumed",
            Event::DispatchDecision { .. } => "DispatchDecision",
            Event::LedgerUpdate { .. } => "LedgerUpdate",
            Event::SpecialistsSpawned { .. } => "SpecialistsSpawned",
            Event::ParadigmShift { .. } => "ParadigmShift",
            Event::Consolidated { .. } => "Consolidated",
            Event::ConsensusEscalation { .. } => "ConsensusEscalation",
            Event::ProviderFallback { .. } => "ProviderFallback",
            Event::TaskStarted { .. } => "TaskStarted",
            Event::TaskFinished { .. } => "TaskFinished",
            Event::TMazeEpisode { .. } => "TMazeEpisode",
            Event::OperatorCommand { .. } => "OperatorCommand",
        }
    }
}

/// In-memory event log with a global tick and sequence counter.
#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    records: Vec<TraceRecord>,
    tick: u64,
    next_seq: u64,
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Moves the clock forward. Ticks never go backwards.
    pub fn advance_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    pub fn emit(&mut self, agent_id: &str, event: Event) -> u64 {
        self.emit_from(Source::System, agent_id, event)
    }

    pub fn emit_from(&mut self, source: Source, agent_id: &str, event: Event) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.records.push(TraceRecord { tick: self.tick, seq, agent_id: agent_id.to_string(), source, event });
        seq
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn since(&self, seq: u64) -> &[TraceRecord] {
        let start = self.records.partition_point(|r| r.seq < seq);
        &self.records[start..]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records always serialize"));
        out.push('\n');
    }
    out
}

/// Parses a JSONL trace, reporting the first bad line.
pub fn parse_jsonl(text: &str) -> Result<Vec<TraceRecord>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}
