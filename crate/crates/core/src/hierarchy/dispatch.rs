//! Choosing how a selected policy gets executed.

use serde::{Deserialize, Serialize};

use super::reputation::{allocate_resources, AllocationParams, ReputationLedger};
use super::topology::BlanketTopology;
use super::HierarchyError;
use crate::agent::AgentNode;
use crate::generative::Policy;
use crate::trace::{Event, TraceLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pathway {
    DirectExecution,
    DirectedSubcontract,
    ExploratoryRecruit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchInputs {
    /// Policy actions outside the agent's actions and tools.
    pub foreign_actions: Vec<String>,
    pub candidates: Vec<(String, Option<f64>)>,
    pub competence_threshold: f64,
    pub topic: Option<String>,
    pub topic_members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchDecision {
    pub pathway: Pathway,
    pub targets: Vec<String>,
    pub shares: Vec<u64>,
    pub inputs: DispatchInputs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchRequest<'a> {
    pub candidates: &'a [String],
    pub topic: Option<&'a str>,
    pub budget: u64,
    pub params: AllocationParams,
}

/// Native or tool actions run locally. Otherwise the task goes to the most
/// competent known candidate, or failing that is offered to every member of
/// the matching topic with an even split.
pub fn dispatch(
    agent: &AgentNode,
    policy: &Policy,
    ledger: &ReputationLedger,
    topology: &BlanketTopology,
    request: &DispatchRequest<'_>,
    trace: &mut TraceLog,
) -> Result<DispatchDecision, HierarchyError> {
    let foreign: Vec<String> = policy
        .actions
        .iter()
        .filter(|a| agent.model().transitions().action_index(a).is_none() && !agent.procedural.contains(a))
        .cloned()
        .collect();
    let candidates: Vec<(String, Option<f64>)> = request
        .candidates
        .iter()
        .filter(|c| c.as_str() != agent.id() && topology.is_active(c))
        .map(|c| (c.clone(), ledger.ewma(c)))
        .collect();
    let topic_members: Vec<String> = request
        .topic
        .and_then(|t| topology.topic(t))
        .map(|t| t.members().filter(|m| m.as_str() != agent.id()).cloned().collect())
        .unwrap_or_default();
    let inputs = DispatchInputs {
        foreign_actions: foreign.clone(),
        candidates: candidates.clone(),
        competence_threshold: request.params.competence_threshold,
        topic: request.topic.map(str::to_string),
        topic_members: topic_members.clone(),
    };

    let (pathway, targets) = if foreign.is_empty() {
        (Pathway::DirectExecution, vec![agent.id().to_string()])
    } else if let Some((best, _)) = candidates
        .iter()
        .filter_map(|(c, e)| e.filter(|v| *v < request.params.competence_threshold).map(|v| (c, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
    {
        (Pathway::DirectedSubcontract, vec![best.clone()])
    } else if !topic_members.is_empty() {
        (Pathway::ExploratoryRecruit, topic_members)
    } else {
        return Err(HierarchyError::NoCapablePath(format!(
            "no competent candidate or topic members for actions {foreign:?}"
        )));
    };
    let shares = match pathway {
        Pathway::ExploratoryRecruit => allocate_resources(ledger, &targets, request.budget, &request.params),
        _ => vec![request.budget],
    };
    trace.emit(
        agent.id(),
        Event::DispatchDecision {
            pathway,
            policy_id: policy.id,
            actions: policy.actions.clone(),
            targets: targets.clone(),
            shares: shares.clone(),
            inputs: inputs.clone(),
        },
    );
    Ok(DispatchDecision { pathway, targets, shares, inputs })
}
