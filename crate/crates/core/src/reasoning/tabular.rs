//! Deterministic provider backed by a fixed hypothesis library.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Capabilities, Hypothesis, Interpretation, ReasoningError, ReasoningProvider, ReportRef, TaskContext, Verdict};

/// A library rule and the observable tags it needs to be worth testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub key: String,
    pub annotation: String,
    pub requires: Vec<String>,
    pub p_match_if_true: f64,
    pub p_match_if_false: f64,
}

impl LibraryEntry {
    pub fn new(key: &str, annotation: &str, requires: &[&str]) -> Self {
        Self {
            key: key.into(),
            annotation: annotation.into(),
            requires: requires.iter().map(|s| s.to_string()).collect(),
            p_match_if_true: 0.98,
            p_match_if_false: 0.02,
        }
    }

    pub fn applies(&self, features: &BTreeSet<String>) -> bool {
        self.requires.iter().all(|r| features.contains(r))
    }

    pub fn hypothesis(&self) -> Hypothesis {
        Hypothesis {
            key: self.key.clone(),
            annotation: self.annotation.clone(),
            p_match_if_true: self.p_match_if_true,
            p_match_if_false: self.p_match_if_false,
        }
    }
}

/// The six grid rule families.
pub fn default_library() -> Vec<LibraryEntry> {
    vec![
        LibraryEntry::new("rotate90", "rotate the grid 90 degrees clockwise", &["shape:transposed", "palette:same"]),
        LibraryEntry::new("rotate180", "rotate the grid 180 degrees", &["shape:same", "palette:same"]),
        LibraryEntry::new("reflectH", "mirror the grid left to right", &["shape:same", "palette:same"]),
        LibraryEntry::new("reflectV", "mirror the grid top to bottom", &["shape:same", "palette:same"]),
        LibraryEntry::new("color_map", "recolor cells by a fixed palette permutation", &["shape:same", "palette:permuted"]),
        LibraryEntry::new("tile2x2", "tile the grid twice in each direction", &["shape:doubled", "palette:same"]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularProvider {
    library: Vec<LibraryEntry>,
    evaluations: u64,
}

impl Default for TabularProvider {
    fn default() -> Self {
        Self::new(default_library())
    }
}

impl TabularProvider {
    pub fn new(library: Vec<LibraryEntry>) -> Self {
        Self { library, evaluations: 0 }
    }

    /// The default library without the named families.
    pub fn withholding(withheld: &[String]) -> Self {
        Self::new(default_library().into_iter().filter(|e| !withheld.contains(&e.key)).collect())
    }

    pub fn library(&self) -> &[LibraryEntry] {
        &self.library
    }
}

/// The number after the last `=` in a narrative.
fn trailing_value(narrative: &str) -> Option<f64> {
    narrative.rsplit('=').next()?.trim().trim_end_matches('.').parse().ok()
}

impl ReasoningProvider for TabularProvider {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            name: "tabular".into(),
            deterministic: true,
            uses_network: false,
            linguistic_consensus: false,
            proposes_hypotheses: true,
            charge_unit: "evaluation".into(),
        }
    }

    fn interpret_report(&mut self, report: ReportRef<'_>) -> Result<Interpretation, ReasoningError> {
        if !report.is_finite() {
            return Err(ReasoningError::NonFiniteReport);
        }
        self.evaluations += 1;
        let (n1, n2) = report.narratives();
        Ok(Interpretation {
            narrative_form1: n1.to_string(),
            narrative_form2: n2.to_string(),
            verdict: if report.numeric_consensus() { Verdict::Agree } else { Verdict::Disagree },
        })
    }

    fn propose_hypotheses(&mut self, context: &TaskContext) -> Result<Vec<Hypothesis>, ReasoningError> {
        if context.examples.is_empty() {
            return Err(ReasoningError::NoHypothesis);
        }
        self.evaluations += 1;
        let found: Vec<Hypothesis> =
            self.library.iter().filter(|e| e.applies(&context.features)).map(LibraryEntry::hypothesis).collect();
        if found.is_empty() {
            return Err(ReasoningError::NoHypothesis);
        }
        Ok(found)
    }

    fn check_consensus(&mut self, n1: &str, n2: &str) -> Result<Verdict, ReasoningError> {
        self.evaluations += 1;
        match (trailing_value(n1), trailing_value(n2)) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-6 => Ok(Verdict::Agree),
            (Some(_), Some(_)) => Ok(Verdict::Disagree),
            _ => Err(ReasoningError::Malformed("narratives carry no value".into())),
        }
    }

    fn units_used(&self) -> u64 {
        self.evaluations
    }
}
