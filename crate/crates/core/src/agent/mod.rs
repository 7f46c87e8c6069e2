//! Single-agent perception, mode selection, planning and consolidation.

pub mod budget;
pub mod memory;
pub mod mode;
pub mod preferences;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generative::planning::{enumerate_policies_capped, DEFAULT_HORIZON_CAP};
use crate::generative::{
    apply_hard_constraints, free_energy, rank_policies, update_belief, CategoricalDist, EfeReport,
    FreeEnergyReport, GenerativeModel, InferenceError, ModelDocument, ModelError, Policy, RankedPolicy,
};
use crate::generative::planning::CONSTRAINT_TOLERANCE;
use crate::hierarchy::Pathway;
use crate::trace::{Event, Source, TraceLog};

pub use budget::{ComplexityBudget, Exhausted, PlateauDetector, PlateauTarget};
pub use memory::{Episode, EpisodicMemory, ProceduralMemory, Tool, WorkingEntry, WorkingMemory};
pub use mode::{select_mode, Mode, ModeDecision, ModeInputs, Thresholds};
pub use preferences::{PreferenceFragment, PreferenceLayer, PreferenceStack};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("layer 0 is immutable")]
    ImmutableLayer,
    #[error("layer {index} out of range for a stack of {len}")]
    LayerOutOfRange { index: usize, len: usize },
    #[error("label '{0}' is not in the agent's observation vocabulary")]
    VocabularyMismatch(String),
    #[error("invalid preference fragment: {0}")]
    InvalidFragment(String),
    #[error("tick {tick} does not follow {last}")]
    NonMonotonicTick { last: u64, tick: u64 },
    #[error("no perception has occurred")]
    NoPerception,
    #[error("unknown action '{0}'")]
    UnknownAction(String),
    #[error("agent definition: {0}")]
    Definition(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(default)]
    pub thresholds: Thresholds,
    /// F above which a perception is reported upward.
    #[serde(default = "default_report_threshold")]
    pub report_threshold: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_horizon_cap")]
    pub horizon_cap: usize,
    #[serde(default = "default_working_capacity")]
    pub working_capacity: usize,
    #[serde(default = "default_k")]
    pub retrieval_k: usize,
    #[serde(default)]
    pub allow_no_consensus: bool,
    #[serde(default = "default_plateau_window")]
    pub plateau_window: usize,
    #[serde(default = "default_plateau_epsilon")]
    pub plateau_epsilon: f64,
}

fn default_report_threshold() -> f64 {
    0.5
}
fn default_horizon() -> usize {
    1
}
fn default_horizon_cap() -> usize {
    DEFAULT_HORIZON_CAP
}
fn default_working_capacity() -> usize {
    memory::DEFAULT_WORKING_CAPACITY
}
fn default_k() -> usize {
    memory::DEFAULT_RETRIEVAL_K
}
fn default_plateau_window() -> usize {
    8
}
fn default_plateau_epsilon() -> f64 {
    0.02
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            report_threshold: default_report_threshold(),
            horizon: default_horizon(),
            horizon_cap: default_horizon_cap(),
            working_capacity: default_working_capacity(),
            retrieval_k: default_k(),
            allow_no_consensus: false,
            plateau_window: default_plateau_window(),
            plateau_epsilon: default_plateau_epsilon(),
        }
    }
}

/// A surprising observation to be sent to the parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpwardReport {
    pub f: f64,
    pub observation: String,
    pub zero_evidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    pub report: FreeEnergyReport,
    pub zero_evidence: bool,
    pub upward: Option<UpwardReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub mode: Mode,
    pub policy: Policy,
    pub next_action: Option<String>,
    pub reports: Vec<EfeReport>,
    pub ranking: Vec<RankedPolicy>,
    pub removed: Vec<usize>,
    pub lockout: bool,
    pub postponed: bool,
    /// Predicted observation distribution after `next_action`.
    pub predicted_observations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidation {
    pub written: Option<usize>,
    pub avoidance: bool,
    pub tools_registered: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct TaskContext {
    task_id: String,
    features: Vec<f64>,
    observations: Vec<String>,
    actions: Vec<String>,
    f_values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AgentNode {
    id: String,
    role_description: String,
    model: GenerativeModel,
    belief: CategoricalDist,
    preferences: PreferenceStack,
    vfe_history: Vec<(u64, f64)>,
    efe_history: Vec<(u64, f64)>,
    mode: Mode,
    last_decision: Option<ModeDecision>,
    pub budget: ComplexityBudget,
    pub parent: Option<String>,
    pub children: Vec<String>,
    pub working: WorkingMemory,
    pub episodic: EpisodicMemory,
    pub procedural: ProceduralMemory,
    pub capabilities: BTreeSet<String>,
    pub generation: u32,
    config: AgentConfig,
    task: TaskContext,
    last_policy: Option<Policy>,
    cursor: usize,
    habit: Option<Vec<String>>,
    last_report: Option<FreeEnergyReport>,
    last_prediction: Option<Vec<f64>>,
    preferences_changed: bool,
}

impl AgentNode {
    /// An agent whose layer 0 is the model's own preferences.
    pub fn new(id: impl Into<String>, role: impl Into<String>, model: GenerativeModel, config: AgentConfig) -> Self {
        let stack = PreferenceStack::from_seed(model.preferences());
        Self::from_parts(id, role, model, stack, config).expect("seed stack matches its own model")
    }

    /// An agent with an explicit preference stack over the model's observations.
    pub fn from_parts(
        id: impl Into<String>,
        role: impl Into<String>,
        model: GenerativeModel,
        stack: PreferenceStack,
        config: AgentConfig,
    ) -> Result<Self, AgentError> {
        if stack.observation_labels() != model.observation_labels() {
            return Err(AgentError::Definition("preference stack vocabulary differs from the model".into()));
        }
        let model = model.with_preferences(stack.effective())?;
        let belief = model.prior().dist.clone();
        Ok(Self {
            id: id.into(),
            role_description: role.into(),
            belief,
            preferences: stack,
            vfe_history: Vec::new(),
            efe_history: Vec::new(),
            mode: Mode::Deliberative,
            last_decision: None,
            budget: ComplexityBudget::default(),
            parent: None,
            children: Vec::new(),
            working: WorkingMemory::new(config.working_capacity),
            episodic: EpisodicMemory::new(),
            procedural: ProceduralMemory::new(),
            capabilities: BTreeSet::new(),
            generation: 0,
            config,
            task: TaskContext::default(),
            last_policy: None,
            cursor: 0,
            habit: None,
            last_report: None,
            last_prediction: None,
            preferences_changed: false,
            model,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role_description(&self) -> &str {
        &self.role_description
    }

    pub fn model(&self) -> &GenerativeModel {
        &self.model
    }

    pub fn belief(&self) -> &CategoricalDist {
        &self.belief
    }

    pub fn preferences(&self) -> &PreferenceStack {
        &self.preferences
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn last_decision(&self) -> Option<&ModeDecision> {
        self.last_decision.as_ref()
    }

    pub fn vfe_history(&self) -> &[(u64, f64)] {
        &self.vfe_history
    }

    pub fn efe_history(&self) -> &[(u64, f64)] {
        &self.efe_history
    }

    pub fn last_policy(&self) -> Option<&Policy> {
        self.last_policy.as_ref()
    }

    pub fn last_prediction(&self) -> Option<&[f64]> {
        self.last_prediction.as_deref()
    }

    pub fn last_report(&self) -> Option<&FreeEnergyReport> {
        self.last_report.as_ref()
    }

    pub fn task_id(&self) -> &str {
        &self.task.task_id
    }

    pub fn task_actions(&self) -> &[String] {
        &self.task.actions
    }

    pub fn vfe_plateau(&self) -> bool {
        let d = PlateauDetector { window: self.config.plateau_window, epsilon: self.config.plateau_epsilon, target: PlateauTarget::Vfe };
        d.detect(&self.vfe_history.iter().map(|(_, f)| *f).collect::<Vec<_>>())
    }

    pub fn efe_plateau(&self) -> bool {
        let d = PlateauDetector { window: self.config.plateau_window, epsilon: self.config.plateau_epsilon, target: PlateauTarget::Efe };
        d.detect(&self.efe_history.iter().map(|(_, g)| *g).collect::<Vec<_>>())
    }

    pub fn set_belief(&mut self, belief: CategoricalDist) -> Result<(), AgentError> {
        if belief.labels() != self.model.state_labels() {
            return Err(AgentError::Definition("belief is not over the model's states".into()));
        }
        self.belief = belief;
        Ok(())
    }

    pub fn announce(&self, trace: &mut TraceLog) {
        trace.emit(
            &self.id,
            Event::AgentSpawned {
                parent: self.parent.clone(),
                role: self.role_description.clone(),
                layer0_hash: self.preferences.spawn_hash().to_string(),
                layers: self.preferences.snapshots(),
                capabilities: self.capabilities.iter().cloned().collect(),
                generation: self.generation,
            },
        );
    }

    pub fn heartbeat(&self, trace: &mut TraceLog) {
        trace.emit(&self.id, Event::Heartbeat { layer0_hash: self.preferences.layer0_hash(), mode: self.mode });
    }

    /// Starts a task: resets the budget, belief and per-task context.
    pub fn begin_task(&mut self, task_id: &str, features: Vec<f64>, budget: Option<ComplexityBudget>, trace: &mut TraceLog) {
        if let Some(b) = budget {
            let lifetime = self.budget.lifetime_units;
            self.budget = b;
            self.budget.lifetime_units = lifetime;
        }
        self.budget.reset();
        self.belief = self.model.prior().dist.clone();
        self.task = TaskContext { task_id: task_id.to_string(), features, ..TaskContext::default() };
        self.last_policy = None;
        self.cursor = 0;
        self.habit = None;
        self.working.clear();
        trace.emit(
            &self.id,
            Event::BudgetReset {
                task: task_id.to_string(),
                max_planning_cycles: self.budget.max_planning_cycles,
                max_reasoning_units: self.budget.max_reasoning_units,
            },
        );
    }

    /// Scores the observation against the current belief, then conditions on it.
    ///
    /// `F` is evaluated at the exact posterior with the current predictive
    /// belief as prior, so it equals the surprise `-ln P(o)`. An observation
    /// with zero evidence leaves the belief untouched and yields a report
    /// pinned at the surprise ceiling.
    pub fn perceive(&mut self, observation: &str, trace: &mut TraceLog) -> Result<Perception, AgentError> {
        let tick = trace.tick();
        if let Some(&(last, _)) = self.vfe_history.last() {
            if tick <= last {
                return Err(AgentError::NonMonotonicTick { last, tick });
            }
        }
        let (report, zero_evidence) = match update_belief(&self.belief, self.model.likelihood(), observation) {
            Ok(post) => {
                let report = free_energy(&post, &self.belief, self.model.likelihood(), observation)?;
                self.belief = post;
                (report, false)
            }
            Err(InferenceError::ZeroEvidence { .. }) => (FreeEnergyReport::maximal_surprise(observation), true),
            Err(e) => return Err(e.into()),
        };
        let f = report.value();
        self.vfe_history.push((tick, f));
        self.working.push(WorkingEntry {
            observation: observation.to_string(),
            action: self.task.actions.last().cloned(),
            report: report.clone(),
        });
        self.task.observations.push(observation.to_string());
        self.task.f_values.push(f);
        self.last_report = Some(report.clone());
        trace.emit(
            &self.id,
            Event::Perception {
                observation: observation.to_string(),
                report: report.clone(),
                posterior: self.belief.probs().to_vec(),
                zero_evidence,
                consensus_rounds: 0,
            },
        );
        let upward = (f > self.config.report_threshold).then(|| UpwardReport {
            f,
            observation: observation.to_string(),
            zero_evidence,
        });
        Ok(Perception { report, zero_evidence, upward })
    }

    fn replayable(&self, e: &Episode) -> bool {
        let taken = self.task.actions.len();
        !e.avoid
            && e.preference_hash == self.preferences.stack_hash()
            && e.actions.len() > taken
            && e.actions[..taken] == self.task.actions[..]
            && e.observations.len() >= self.task.observations.len()
            && e.observations[..self.task.observations.len()] == self.task.observations[..]
    }

    /// Chooses the mode for the next planning cycle and records the decision.
    pub fn select_mode(&mut self, trace: &mut TraceLog) -> Result<Mode, AgentError> {
        let &(_, last_f) = self.vfe_history.last().ok_or(AgentError::NoPerception)?;
        let hit = self
            .episodic
            .retrieve(&self.task.features, self.config.retrieval_k, |e| self.replayable(e))
            .first()
            .map(|h| (h.index, h.similarity));
        let inputs = ModeInputs {
            last_f,
            similarity: hit.map(|(_, s)| s),
            preferences_changed: self.preferences_changed,
            has_last_policy: self.last_policy.as_ref().is_some_and(|p| !p.is_noop()),
        };
        let mode = select_mode(&inputs, &self.config.thresholds);
        self.habit = match (mode, hit) {
            (Mode::Habitual, Some((i, _))) => Some(self.episodic.episodes()[i].actions[self.task.actions.len()..].to_vec()),
            _ => None,
        };
        let decision = ModeDecision {
            mode,
            inputs,
            thresholds: self.config.thresholds.clone(),
            matched_episode: if mode == Mode::Habitual { hit.map(|(i, _)| i) } else { None },
        };
        self.mode = mode;
        self.last_decision = Some(decision.clone());
        trace.emit(&self.id, Event::ModeSelected(decision));
        Ok(mode)
    }

    /// Lexicographic id of an action sequence over the declared action order.
    fn policy_id(&self, actions: &[String]) -> usize {
        let n = self.model.action_labels().len();
        actions.iter().fold(0usize, |id, a| {
            id.saturating_mul(n).saturating_add(self.model.action_index(a).unwrap_or(0))
        })
    }

    fn observation_predictive(&self, belief: &[f64]) -> Vec<f64> {
        let a = self.model.likelihood();
        let mut qo = vec![0.0; a.observation_labels().len()];
        for (s, qs) in belief.iter().enumerate() {
            for (o, p) in a.rows()[s].probs().iter().enumerate() {
                qo[o] += qs * p;
            }
        }
        qo
    }

    /// Predicted observation distributions after each action in turn.
    fn rollout(&self, actions: &[String]) -> Result<Vec<Vec<f64>>, AgentError> {
        let b = self.model.transitions();
        let mut belief = self.belief.probs().to_vec();
        let mut out = Vec::with_capacity(actions.len());
        for label in actions {
            let idx = b.action_index(label).ok_or_else(|| AgentError::UnknownAction(label.clone()))?;
            belief = b.propagate(&belief, idx);
            out.push(self.observation_predictive(&belief));
        }
        Ok(out)
    }

    fn violates_constraints(&self, actions: &[String]) -> Result<bool, AgentError> {
        let forbidden = self.model.preferences().forbidden_indices();
        Ok(self
            .rollout(actions)?
            .iter()
            .any(|qo| forbidden.iter().any(|&o| qo[o] > CONSTRAINT_TOLERANCE)))
    }

    fn postpone(&mut self, cause: Exhausted, trace: &mut TraceLog) -> PlanOutcome {
        let what = match cause {
            Exhausted::PlanningCycles => "planning cycles",
            Exhausted::ReasoningUnits => "reasoning units",
        };
        let unresolved = format!("belief entropy {:.3} nats after {} observations", self.belief.entropy(), self.task.observations.len());
        trace.emit(
            &self.id,
            Event::Postponed {
                task: self.task.task_id.clone(),
                consumed_units: self.budget.consumed_units,
                consumed_cycles: self.budget.consumed_cycles,
                max_units: self.budget.max_reasoning_units,
                max_cycles: self.budget.max_planning_cycles,
                unresolved: unresolved.clone(),
                message: format!(
                    "Budget of {what} exhausted on task '{}'; postponing it and proceeding to the next one. Unresolved: {unresolved}.",
                    self.task.task_id
                ),
            },
        );
        PlanOutcome {
            mode: self.mode,
            policy: Policy::noop(),
            next_action: None,
            reports: Vec::new(),
            ranking: Vec::new(),
            removed: Vec::new(),
            lockout: false,
            postponed: true,
            predicted_observations: Vec::new(),
        }
    }

    /// Plans according to the current mode.
    ///
    /// Deliberation scores every policy up to the configured horizon, charging
    /// one reasoning unit per evaluation. Perseveration continues the last
    /// policy and habit replays the matched episode's remaining actions; both
    /// fall back to deliberation if their actions now risk a forbidden
    /// observation.
    pub fn plan(&mut self, trace: &mut TraceLog) -> Result<PlanOutcome, AgentError> {
        if let Err(cause) = self.budget.start_cycle() {
            return Ok(self.postpone(cause, trace));
        }
        let mut mode = self.mode;
        let mut shortcut: Option<(Policy, String)> = None;
        match mode {
            Mode::Habitual => {
                if let Some(actions) = self.habit.take().filter(|a| !a.is_empty()) {
                    if !self.violates_constraints(&actions)? {
                        let next = actions[0].clone();
                        shortcut = Some((Policy { id: self.policy_id(&actions), actions }, next));
                    }
                }
            }
            Mode::Perseverative => {
                if let Some(p) = self.last_policy.clone().filter(|p| !p.is_noop()) {
                    let cursor = if self.cursor < p.actions.len() { self.cursor } else { 0 };
                    if !self.violates_constraints(&p.actions[cursor..])? {
                        let next = p.actions[cursor].clone();
                        self.cursor = cursor;
                        shortcut = Some((p, next));
                    }
                }
            }
            Mode::Deliberative => {}
        }

        let (policy, next_action, reports, ranking, removed, lockout, efe_report) = match shortcut {
            Some((policy, next)) => {
                if mode == Mode::Habitual {
                    self.cursor = 0;
                }
                (policy, Some(next), Vec::new(), Vec::new(), Vec::new(), false, None)
            }
            None => {
                mode = Mode::Deliberative;
                let policies =
                    enumerate_policies_capped(&self.model, self.config.horizon, self.config.horizon_cap)?;
                let mut reports = Vec::with_capacity(policies.len());
                for p in &policies {
                    if let Err(cause) = self.budget.charge(1) {
                        return Ok(self.postpone(cause, trace));
                    }
                    let r = crate::generative::compute_efe(p, &self.model, &self.belief)?;
                    trace.emit(
                        &self.id,
                        Event::EfeEvaluated {
                            policy_id: p.id,
                            actions: p.actions.clone(),
                            g_form1: r.g_form1,
                            g_form2: r.g_form2,
                            consensus: r.consensus,
                            units_charged: 1,
                        },
                    );
                    reports.push(r);
                }
                let ranked = rank_policies(&reports, self.config.allow_no_consensus)?;
                let constrained = apply_hard_constraints(&ranked, self.model.preferences(), &reports);
                if constrained.lockout {
                    trace.emit(&self.id, Event::ConstraintLockout { removed: constrained.removed.clone() });
                }
                let selected = constrained.selected().clone();
                let efe = reports.iter().find(|r| r.policy.id == selected.policy.id).cloned();
                if let Some(g) = selected.g {
                    self.efe_history.push((trace.tick(), g));
                }
                self.cursor = 0;
                let next = selected.policy.first_action().map(str::to_string);
                (
                    selected.policy,
                    next,
                    reports,
                    constrained.ranking,
                    constrained.removed,
                    constrained.lockout,
                    efe,
                )
            }
        };

        let predicted = match &next_action {
            Some(a) => self.rollout(std::slice::from_ref(a))?.remove(0),
            None => self.observation_predictive(self.belief.probs()),
        };

        self.mode = mode;
        self.preferences_changed = false;
        self.last_prediction = Some(predicted.clone());
        self.last_policy = Some(policy.clone());
        trace.emit(
            &self.id,
            Event::PlanDecision {
                mode,
                policy: policy.clone(),
                next_action: next_action.clone(),
                ranking: ranking.iter().map(|r| r.policy.id).collect(),
                removed: removed.clone(),
                vfe_report: self.last_report.clone(),
                efe_report,
                predicted_observations: predicted.clone(),
            },
        );
        Ok(PlanOutcome {
            mode,
            policy,
            next_action,
            reports,
            ranking,
            removed,
            lockout,
            postponed: false,
            predicted_observations: predicted,
        })
    }

    /// Executes a native action: the belief is pushed through `B`.
    pub fn act(&mut self, action: &str, pathway: Pathway, trace: &mut TraceLog) -> Result<(), AgentError> {
        let idx = self.model.transitions().action_index(action).ok_or_else(|| AgentError::UnknownAction(action.to_string()))?;
        let next = self.model.transitions().propagate(self.belief.probs(), idx);
        self.belief = self.belief.with_weights(next)?;
        self.task.actions.push(action.to_string());
        if self.last_policy.as_ref().is_some_and(|p| p.actions.get(self.cursor).map(String::as_str) == Some(action)) {
            self.cursor += 1;
        }
        trace.emit(&self.id, Event::ActionExecuted { action: action.to_string(), pathway });
        Ok(())
    }

    /// Replaces a mutable preference layer and recomposes `C`.
    ///
    /// Any write to layer 0 is refused and logged.
    pub fn update_preferences(
        &mut self,
        layer: usize,
        fragment: PreferenceFragment,
        provenance: &str,
        trace: &mut TraceLog,
    ) -> Result<(), AgentError> {
        self.write_preferences(layer, fragment, provenance, Source::System, trace)
    }

    /// Same as [`AgentNode::update_preferences`], logged with operator source.
    pub fn operator_preferences(&mut self, layer: usize, fragment: PreferenceFragment, trace: &mut TraceLog) -> Result<(), AgentError> {
        self.write_preferences(layer, fragment, "operator", Source::Operator, trace)
    }

    fn write_preferences(
        &mut self,
        layer: usize,
        fragment: PreferenceFragment,
        provenance: &str,
        source: Source,
        trace: &mut TraceLog,
    ) -> Result<(), AgentError> {
        let entry = PreferenceLayer { fragment: fragment.clone(), provenance: provenance.to_string() };
        let before = match self.preferences.write_layer(layer, entry) {
            Ok(b) => b,
            Err(e) => {
                trace.emit_from(
                    source,
                    &self.id,
                    Event::PreferenceWriteRejected {
                        layer,
                        reason: e.to_string(),
                        layer0_hash: self.preferences.layer0_hash(),
                    },
                );
                return Err(e);
            }
        };
        self.model = self.model.with_preferences(self.preferences.effective())?;
        self.preferences_changed = true;
        trace.emit_from(
            source,
            &self.id,
            Event::PreferenceChanged {
                layer,
                before_hash: before,
                after_hash: self.preferences.layer_hash(layer).expect("layer was just written"),
                layer0_hash: self.preferences.layer0_hash(),
                log_pref: fragment.log_pref,
                precision: fragment.precision,
                provenance: provenance.to_string(),
            },
        );
        Ok(())
    }

    /// Stores the finished task in memory according to its free-energy trend.
    ///
    /// A final `F` below the task mean counts as decreasing and is stored for
    /// reuse; above the mean it is stored flagged for avoidance. Any action
    /// run of length ≥ 2 shared by three successful stored episodes becomes a
    /// tool.
    pub fn consolidate(&mut self, outcome: &str, success: bool, trace: &mut TraceLog) -> Consolidation {
        let task = std::mem::take(&mut self.task);
        let mut result = Consolidation { written: None, avoidance: false, tools_registered: Vec::new() };
        if !task.f_values.is_empty() || !task.actions.is_empty() {
            let final_f = task.f_values.last().copied().unwrap_or(0.0);
            let mean = if task.f_values.is_empty() {
                0.0
            } else {
                task.f_values.iter().sum::<f64>() / task.f_values.len() as f64
            };
            let avoid = if final_f < mean {
                Some(false)
            } else if final_f > mean {
                Some(true)
            } else {
                None
            };
            if let Some(avoid) = avoid {
                let idx = self.episodic.write(Episode {
                    task_id: task.task_id.clone(),
                    observations: task.observations.clone(),
                    actions: task.actions.clone(),
                    outcome: outcome.to_string(),
                    final_f,
                    features: task.features.clone(),
                    avoid: avoid || !success,
                    preference_hash: self.preferences.stack_hash(),
                });
                result.written = Some(idx);
                result.avoidance = avoid || !success;
            }
        }
        let successful: Vec<&[String]> = self
            .episodic
            .episodes()
            .iter()
            .filter(|e| !e.avoid)
            .map(|e| e.actions.as_slice())
            .collect();
        for seq in memory::recurring_subsequences(&successful) {
            let name = format!("tool:{}", seq.join("+"));
            let tool = Tool {
                name: name.clone(),
                input_contract: format!("belief over {} states", self.model.state_labels().len()),
                output_contract: format!("observation in {} labels", self.model.observation_labels().len()),
                executable: seq,
                usage_count: 0,
                mean_f_delta: 0.0,
            };
            if self.procedural.register(tool) {
                result.tools_registered.push(name);
            }
        }
        trace.emit(
            &self.id,
            Event::Consolidated {
                written: result.written.is_some(),
                avoidance: result.avoidance,
                tools_registered: result.tools_registered.clone(),
            },
        );
        self.task.task_id = task.task_id;
        result
    }
}

/// JSON agent definition: a model document plus stack, budget and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDefinition {
    pub id: String,
    #[serde(default)]
    pub role: String,
    pub model: ModelDocument,
    /// Mutable layers 1.. on top of the model's seed preferences.
    #[serde(default)]
    pub preference_stack: Vec<PreferenceLayer>,
    #[serde(default)]
    pub budget: Option<ComplexityBudget>,
    #[serde(default)]
    pub config: AgentConfig,
    #[serde(default)]
    pub capabilities: Vec<String>,
}

impl AgentDefinition {
    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        serde_json::from_str(text).map_err(|e| AgentError::Definition(e.to_string()))
    }

    pub fn build(&self) -> Result<AgentNode, AgentError> {
        let model = self.model.to_model()?;
        let mut stack = PreferenceStack::from_seed(model.preferences());
        for (i, layer) in self.preference_stack.iter().enumerate() {
            stack.write_layer(i + 1, layer.clone())?;
        }
        let mut agent = AgentNode::from_parts(&self.id, &self.role, model, stack, self.config.clone())?;
        if let Some(b) = &self.budget {
            agent.budget = b.clone();
        }
        agent.capabilities = self.capabilities.iter().cloned().collect();
        Ok(agent)
    }
}

#[cfg(test)]
mod tests;
