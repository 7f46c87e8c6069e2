//! Markov-blanket topology, the message bus, reputation, dispatch and the
//! specialization and paradigm-shift operations that reshape the tree.

pub mod bus;
pub mod dispatch;
pub mod evolution;
pub mod message;
pub mod reputation;
pub mod topology;

use thiserror::Error;

use crate::agent::{AgentError, PreferenceFragment, PreferenceStack};
use crate::generative::{ModelError, PreferenceModel};

pub use bus::{attention_filter, AttentionBuffer, AttentionOutcome, MessageBus, Receipt};
pub use dispatch::{dispatch, DispatchDecision, DispatchInputs, DispatchRequest, Pathway};
pub use evolution::{
    kmeans, paradigm_shift, spawn_specialists, AlternativeBelief, Archive, PlateauEvidence, SpecialistRequest,
};
pub use message::{BusMessage, Draft, MessageKind, Payload, Target};
pub use reputation::{allocate_resources, AllocationParams, LedgerEntry, ReputationLedger};
pub use topology::{ApprovalRecord, Authorization, BlanketTopology, Topic};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown agent '{0}'")]
    UnknownAgent(String),
    #[error("agent id '{0}' already used")]
    DuplicateAgent(String),
    #[error("a second root is not allowed: {0}")]
    SecondRoot(String),
    #[error("unknown topic '{0}'")]
    UnknownTopic(String),
    #[error("label '{0}' is not in the child's vocabulary")]
    VocabularyMismatch(String),
    #[error("no capable execution path: {0}")]
    NoCapablePath(String),
    #[error("{clusters} clusters need at least {} episodes, found {found}", 2 * clusters.max(&1))]
    InsufficientEpisodes { clusters: usize, found: usize },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error(transparent)]
    Agent(AgentError),
}

impl From<AgentError> for HierarchyError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::VocabularyMismatch(l) => HierarchyError::VocabularyMismatch(l),
            other => HierarchyError::Agent(other),
        }
    }
}

impl From<ModelError> for HierarchyError {
    fn from(e: ModelError) -> Self {
        HierarchyError::Agent(AgentError::Model(e))
    }
}

/// Child preferences with a parent's flow layered on top at the flow's
/// precision. Layer-0 constraints of the child always remain forbidden.
pub fn compose_preferences(flow: &PreferenceFragment, child: &PreferenceStack) -> Result<PreferenceModel, HierarchyError> {
    Ok(child.compose(Some(flow))?)
}
