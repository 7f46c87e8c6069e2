//! Discrete-state active inference: belief updates, variational free energy,
//! expected free energy, and policy selection.
//!
//! All functions here are pure. Logarithms go through [`dist::ln_clamped`], so
//! zero probabilities never produce infinities.

pub mod dist;
pub mod document;
mod narrative;
pub mod model;
pub mod perception;
pub mod planning;

use thiserror::Error;

pub use dist::CategoricalDist;
pub use document::ModelDocument;
pub use model::{GenerativeModel, LikelihoodModel, PreferenceModel, PriorBelief, TransitionModel};
pub use perception::{compute_vfe, free_energy, update_belief, FreeEnergyReport};
pub use planning::{
    apply_hard_constraints, compute_efe, enumerate_policies, enumerate_policies_capped, rank_policies,
    ConstrainedRanking, EfeReport, EfeStep, Policy, RankedPolicy,
};

/// Absolute agreement required between the two decompositions.
pub const CONSENSUS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("distribution needs at least one label")]
    EmptySupport,
    #[error("{what}: expected {expected}, found {found}")]
    Dimension { what: String, expected: usize, found: usize },
    #[error("invalid probability {0}")]
    InvalidProbability(f64),
    #[error("weights sum to zero")]
    ZeroMass,
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("inconsistent model: {0}")]
    Inconsistent(String),
    #[error("too many {what}: {found} > {limit}")]
    CapExceeded { what: &'static str, limit: usize, found: usize },
    #[error("model document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("observation '{observation}' has zero evidence")]
    ZeroEvidence { observation: String },
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("unknown observation '{0}'")]
    UnknownObservation(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("horizon {horizon} outside 1..={cap}")]
    InvalidHorizon { horizon: usize, cap: usize },
    #[error("{policies} policies exceed the enumeration cap of {cap}")]
    CapExceeded { policies: u128, cap: usize },
    #[error("policy {policy_id} lacks cross-form consensus")]
    NoConsensus { policy_id: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Two states, two observations, likelihood [[0.8,0.2],[0.2,0.8]], two
    /// identity-like actions and neutral preferences.
    pub fn two_state_model(prior: [f64; 2]) -> GenerativeModel {
        let s = vec!["s0".to_string(), "s1".to_string()];
        let o = vec!["o0".to_string(), "o1".to_string()];
        let a = LikelihoodModel::from_matrix(&o, &[vec![0.8, 0.2], vec![0.2, 0.8]], vec![String::new(); 2]).unwrap();
        let b = TransitionModel::from_matrices(
            &s,
            vec!["stay".into(), "flip".into()],
            &[vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
            vec![String::new(); 2],
        )
        .unwrap();
        let d = PriorBelief::new(CategoricalDist::new(s, prior.to_vec()).unwrap(), vec![]);
        GenerativeModel::new(a, b, PreferenceModel::neutral(o), d).unwrap()
    }
}
