//! The A/B/C/D bundle an agent uses as its world model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dist::{ln_clamped, CategoricalDist};
use super::ModelError;

pub const MAX_STATES: usize = 64;
pub const MAX_OBSERVATIONS: usize = 64;
pub const MAX_ACTIONS: usize = 16;

/// `P(o|s)`: one observation distribution per hidden state, each annotated
/// with the hypothesis it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    rows: Vec<CategoricalDist>,
    annotations: Vec<String>,
}

impl LikelihoodModel {
    pub fn new(rows: Vec<CategoricalDist>, annotations: Vec<String>) -> Result<Self, ModelError> {
        let first = rows.first().ok_or(ModelError::EmptySupport)?;
        let obs = first.labels().to_vec();
        if rows.iter().any(|r| r.labels() != obs.as_slice()) {
            return Err(ModelError::Inconsistent("likelihood rows disagree on observation labels".into()));
        }
        let annotations = if annotations.is_empty() { vec![String::new(); rows.len()] } else { annotations };
        check_annotations("likelihood", &annotations, rows.len())?;
        Ok(Self { rows, annotations })
    }

    /// Builds rows from a dense `states x observations` matrix.
    pub fn from_matrix(
        observation_labels: &[String],
        matrix: &[Vec<f64>],
        annotations: Vec<String>,
    ) -> Result<Self, ModelError> {
        let rows = matrix
            .iter()
            .map(|row| CategoricalDist::new(observation_labels.to_vec(), row.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows, annotations)
    }

    pub fn rows(&self) -> &[CategoricalDist] {
        &self.rows
    }

    pub fn annotations(&self) -> &[String] {
        &self.annotations
    }

    pub fn observation_labels(&self) -> &[String] {
        self.rows[0].labels()
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn p(&self, state: usize, observation: usize) -> f64 {
        self.rows[state].probs()[observation]
    }

    /// Column `P(o|·)` for one observation.
    pub fn column(&self, observation: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.probs()[observation]).collect()
    }
}

/// `P(s'|s, a)`: for every action one row per source state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    action_labels: Vec<String>,
    matrices: Vec<Vec<CategoricalDist>>,
    annotations: Vec<String>,
}

impl TransitionModel {
    pub fn new(
        action_labels: Vec<String>,
        matrices: Vec<Vec<CategoricalDist>>,
        annotations: Vec<String>,
    ) -> Result<Self, ModelError> {
        if action_labels.is_empty() {
            return Err(ModelError::Inconsistent("transition model needs at least one action".into()));
        }
        if action_labels.len() != matrices.len() {
            return Err(ModelError::Dimension {
                what: "transition actions".into(),
                expected: action_labels.len(),
                found: matrices.len(),
            });
        }
        let unique: BTreeSet<_> = action_labels.iter().collect();
        if unique.len() != action_labels.len() {
            return Err(ModelError::Inconsistent("duplicate action label".into()));
        }
        let states = matrices[0]
            .first()
            .ok_or(ModelError::EmptySupport)?
            .labels()
            .to_vec();
        for (a, m) in matrices.iter().enumerate() {
            if m.len() != states.len() {
                return Err(ModelError::Dimension {
                    what: format!("transition rows for action '{}'", action_labels[a]),
                    expected: states.len(),
                    found: m.len(),
                });
            }
            if m.iter().any(|r| r.labels() != states.as_slice()) {
                return Err(ModelError::Inconsistent("transition rows disagree on state labels".into()));
            }
        }
        let annotations = if annotations.is_empty() { vec![String::new(); action_labels.len()] } else { annotations };
        check_annotations("transition", &annotations, action_labels.len())?;
        Ok(Self { action_labels, matrices, annotations })
    }

    pub fn from_matrices(
        state_labels: &[String],
        action_labels: Vec<String>,
        matrices: &[Vec<Vec<f64>>],
        annotations: Vec<String>,
    ) -> Result<Self, ModelError> {
        let built = matrices
            .iter()
            .map(|m| {
                m.iter()
                    .map(|row| CategoricalDist::new(state_labels.to_vec(), row.clone()))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(action_labels, built, annotations)
    }

    pub fn action_labels(&self) -> &[String] {
        &self.action_labels
    }

    pub fn annotations(&self) -> &[String] {
        &self.annotations
    }

    pub fn matrices(&self) -> &[Vec<CategoricalDist>] {
        &self.matrices
    }

    pub fn state_labels(&self) -> &[String] {
        self.matrices[0][0].labels()
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.action_labels.iter().position(|a| a == label)
    }

    /// Predictive state distribution after taking `action` from `belief`.
    pub fn propagate(&self, belief: &[f64], action: usize) -> Vec<f64> {
        let m = &self.matrices[action];
        let n = belief.len();
        let mut out = vec![0.0; n];
        for (s, &b) in belief.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (t, p) in m[s].probs().iter().enumerate() {
                out[t] += b * p;
            }
        }
        out
    }
}

/// `ln P(o|C)` plus the forbidden-observation set and a precision weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    observation_labels: Vec<String>,
    log_pref: Vec<f64>,
    hard_constraints: BTreeSet<String>,
    annotations: Vec<String>,
    precision: f64,
}

impl PreferenceModel {
    pub fn new(
        observation_labels: Vec<String>,
        log_pref: Vec<f64>,
        hard_constraints: BTreeSet<String>,
        annotations: Vec<String>,
        precision: f64,
    ) -> Result<Self, ModelError> {
        if observation_labels.len() != log_pref.len() {
            return Err(ModelError::Dimension {
                what: "log preferences".into(),
                expected: observation_labels.len(),
                found: log_pref.len(),
            });
        }
        if log_pref.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Inconsistent("log preferences must be finite".into()));
        }
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(ModelError::Inconsistent(format!("precision must be positive, got {precision}")));
        }
        if let Some(bad) = hard_constraints.iter().find(|c| !observation_labels.contains(c)) {
            return Err(ModelError::UnknownLabel(bad.clone()));
        }
        if !annotations.is_empty() {
            check_annotations("preference", &annotations, observation_labels.len())?;
        }
        Ok(Self { observation_labels, log_pref, hard_constraints, annotations, precision })
    }

    /// Flat preferences and no constraints.
    pub fn neutral(observation_labels: Vec<String>) -> Self {
        let n = observation_labels.len();
        Self::new(observation_labels, vec![0.0; n], BTreeSet::new(), vec![], 1.0)
            .expect("neutral preferences are valid")
    }

    pub fn observation_labels(&self) -> &[String] {
        &self.observation_labels
    }

    pub fn log_pref(&self) -> &[f64] {
        &self.log_pref
    }

    pub fn hard_constraints(&self) -> &BTreeSet<String> {
        &self.hard_constraints
    }

    pub fn annotations(&self) -> &[String] {
        &self.annotations
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    /// `P(o|C) ∝ exp(precision · log_pref)`.
    pub fn preferred_outcomes(&self) -> CategoricalDist {
        let scaled: Vec<f64> = self.log_pref.iter().map(|v| v * self.precision).collect();
        CategoricalDist::from_log_weights(self.observation_labels.clone(), &scaled)
            .expect("finite log preferences always normalize")
    }

    /// Clamped `ln P(o|C)` per observation.
    pub fn ln_preferred(&self) -> Vec<f64> {
        self.preferred_outcomes().probs().iter().map(|p| ln_clamped(*p)).collect()
    }

    pub fn forbidden_indices(&self) -> Vec<usize> {
        self.observation_labels
            .iter()
            .enumerate()
            .filter(|(_, l)| self.hard_constraints.contains(*l))
            .map(|(i, _)| i)
            .collect()
    }
}

/// `P(s)` with the prior assumptions it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBelief {
    pub dist: CategoricalDist,
    pub annotations: Vec<String>,
}

impl PriorBelief {
    pub fn new(dist: CategoricalDist, annotations: Vec<String>) -> Self {
        Self { dist, annotations }
    }
}

/// A mutually consistent likelihood/transition/preference/prior bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    a: LikelihoodModel,
    b: TransitionModel,
    c: PreferenceModel,
    d: PriorBelief,
}

impl GenerativeModel {
    pub fn new(
        a: LikelihoodModel,
        b: TransitionModel,
        c: PreferenceModel,
        d: PriorBelief,
    ) -> Result<Self, ModelError> {
        let states = d.dist.labels();
        let observations = a.observation_labels();
        if states.len() > MAX_STATES {
            return Err(ModelError::CapExceeded { what: "states", limit: MAX_STATES, found: states.len() });
        }
        if observations.len() > MAX_OBSERVATIONS {
            return Err(ModelError::CapExceeded {
                what: "observations",
                limit: MAX_OBSERVATIONS,
                found: observations.len(),
            });
        }
        if b.action_labels().len() > MAX_ACTIONS {
            return Err(ModelError::CapExceeded {
                what: "actions",
                limit: MAX_ACTIONS,
                found: b.action_labels().len(),
            });
        }
        if a.num_states() != states.len() {
            return Err(ModelError::Dimension {
                what: "likelihood rows".into(),
                expected: states.len(),
                found: a.num_states(),
            });
        }
        if b.state_labels() != states {
            return Err(ModelError::Inconsistent("transition state labels differ from prior".into()));
        }
        if c.observation_labels() != observations {
            return Err(ModelError::Inconsistent("preference labels differ from likelihood".into()));
        }
        let unique_states: BTreeSet<_> = states.iter().collect();
        let unique_obs: BTreeSet<_> = observations.iter().collect();
        if unique_states.len() != states.len() || unique_obs.len() != observations.len() {
            return Err(ModelError::Inconsistent("duplicate state or observation label".into()));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn likelihood(&self) -> &LikelihoodModel {
        &self.a
    }

    pub fn transitions(&self) -> &TransitionModel {
        &self.b
    }

    pub fn preferences(&self) -> &PreferenceModel {
        &self.c
    }

    pub fn prior(&self) -> &PriorBelief {
        &self.d
    }

    pub fn state_labels(&self) -> &[String] {
        self.d.dist.labels()
    }

    pub fn observation_labels(&self) -> &[String] {
        self.a.observation_labels()
    }

    pub fn action_labels(&self) -> &[String] {
        self.b.action_labels()
    }

    pub fn observation_index(&self, label: &str) -> Result<usize, ModelError> {
        self.observation_labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    pub fn state_index(&self, label: &str) -> Result<usize, ModelError> {
        self.state_labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    pub fn action_index(&self, label: &str) -> Result<usize, ModelError> {
        self.b.action_index(label).ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    /// Copy with different preferences; labels must match.
    pub fn with_preferences(&self, c: PreferenceModel) -> Result<Self, ModelError> {
        Self::new(self.a.clone(), self.b.clone(), c, self.d.clone())
    }

    pub fn with_prior(&self, d: PriorBelief) -> Result<Self, ModelError> {
        Self::new(self.a.clone(), self.b.clone(), self.c.clone(), d)
    }
}

fn check_annotations(what: &str, annotations: &[String], expected: usize) -> Result<(), ModelError> {
    if annotations.len() != expected {
        return Err(ModelError::Dimension {
            what: format!("{what} annotations"),
            expected,
            found: annotations.len(),
        });
    }
    Ok(())
}
