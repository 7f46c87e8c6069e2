//! Experiment runner, artifacts, audit, plots and the control server.

pub mod audit;
pub mod config;
pub mod plot;
pub mod serve;
pub mod session;

use thiserror::Error;

use crate::agent::AgentError;
use crate::harness::HarnessError;
use crate::reasoning::ReasoningError;

pub use audit::{audit_records, audit_text, inject_forged_delivery, tamper_layer0, AuditReport, Violation, ViolationKind};
pub use config::{load_topology, parse_topology, ConfigError, ProviderMode, RunConfig, Scenario};
pub use plot::{render_svg, series_from_trace, Series};
pub use serve::{router, run_sequencer, serve, Control, ServeOptions, ServerState};
pub use session::{run_experiment, RunOutcome, RunSummary, Session, StateSnapshot, TraceSink};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error("unknown agent '{0}'")]
    UnknownAgent(String),
    #[error("malformed trace at line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl RuntimeError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            RuntimeError::Config(_) => 2,
            RuntimeError::Reasoning(ReasoningError::ProviderUnavailable(_)) => 3,
            RuntimeError::MalformedTrace { .. } => 4,
            RuntimeError::Invariant(_) => 1,
            _ => 1,
        }
    }
}
