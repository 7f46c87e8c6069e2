//! Hierarchical active-inference agents with auditable traces.

pub mod agent;
pub mod generative;
pub mod harness;
pub mod hierarchy;
pub mod reasoning;
pub mod runtime;
pub mod trace;
