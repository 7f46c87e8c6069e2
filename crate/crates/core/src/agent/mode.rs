//! Bounded-rationality mode selection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Deliberative,
    Perseverative,
    Habitual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta_hi: f64,
    pub theta_lo: f64,
    pub habit_similarity: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { theta_hi: 1.0, theta_lo: 0.1, habit_similarity: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeInputs {
    pub last_f: f64,
    /// Best retrieval similarity among replayable episodes.
    pub similarity: Option<f64>,
    pub preferences_changed: bool,
    pub has_last_policy: bool,
}

/// The inputs, thresholds and outcome of one mode choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDecision {
    pub mode: Mode,
    pub inputs: ModeInputs,
    pub thresholds: Thresholds,
    pub matched_episode: Option<usize>,
}

/// Pure mode rule. A pending preference change forces deliberation, then a
/// memory hit selects habit, then the free-energy bands apply.
pub fn select_mode(inputs: &ModeInputs, t: &Thresholds) -> Mode {
    if inputs.preferences_changed {
        return Mode::Deliberative;
    }
    if inputs.similarity.is_some_and(|s| s >= t.habit_similarity) {
        return Mode::Habitual;
    }
    if inputs.last_f > t.theta_hi {
        return Mode::Deliberative;
    }
    if inputs.last_f < t.theta_lo && inputs.has_last_policy {
        return Mode::Perseverative;
    }
    Mode::Deliberative
}
