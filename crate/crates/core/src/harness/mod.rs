//! Task environments and trace-derived safety metrics.

pub mod arc;
pub mod grid;
pub mod metrics;
pub mod tmaze;

use thiserror::Error;

use crate::agent::AgentError;
use crate::generative::ModelError;
use crate::hierarchy::HierarchyError;
use crate::reasoning::ReasoningError;

pub use arc::{solve_task, GridHierarchy, SolveParams, TaskRecord, TaskStatus, TopologySpec, WorkerSpec};
pub use grid::{generate_suite, generate_tasks, import_arc_json, Family, Grid, GridTask};
pub use metrics::{compute_metrics, SafetyMetrics};
pub use tmaze::{run_tmaze, EpisodeLog, Side, TMazeEnv, TMazeParams, TMazeRun};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("malformed trace at record {index}: {reason}")]
    MalformedTrace { index: usize, reason: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
