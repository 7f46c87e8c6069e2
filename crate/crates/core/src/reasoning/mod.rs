//! Knowledge providers: a deterministic tabular provider, an external
//! chat-completion client, a fallback wrapper, and the consensus loop.

pub mod conformance;
pub mod external;
pub mod tabular;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentNode;
use crate::generative::{
    CategoricalDist, EfeReport, FreeEnergyReport, GenerativeModel, LikelihoodModel, PreferenceModel, PriorBelief,
    TransitionModel, CONSENSUS_TOLERANCE,
};

pub use external::{ExternalConfig, ExternalProvider};
pub use tabular::{default_library, LibraryEntry, TabularProvider};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReasoningError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no applicable hypothesis")]
    NoHypothesis,
    #[error("malformed provider output: {0}")]
    Malformed(String),
    #[error("report has non-finite terms")]
    NonFiniteReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub name: String,
    /// Same inputs always give byte-identical outputs.
    pub deterministic: bool,
    pub uses_network: bool,
    pub linguistic_consensus: bool,
    pub proposes_hypotheses: bool,
    /// What one budget unit means: "evaluation" or "token".
    pub charge_unit: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Agree,
    Disagree,
}

#[derive(Debug, Clone, Copy)]
pub enum ReportRef<'a> {
    Vfe(&'a FreeEnergyReport),
    Efe(&'a EfeReport),
}

impl ReportRef<'_> {
    pub fn values(&self) -> (f64, f64) {
        match self {
            ReportRef::Vfe(r) => (r.f_form1, r.f_form2),
            ReportRef::Efe(r) => (r.g_form1, r.g_form2),
        }
    }

    pub fn narratives(&self) -> (&str, &str) {
        match self {
            ReportRef::Vfe(r) => (&r.narrative_form1, &r.narrative_form2),
            ReportRef::Efe(r) => (&r.narrative_form1, &r.narrative_form2),
        }
    }

    pub fn numeric_consensus(&self) -> bool {
        let (a, b) = self.values();
        (a - b).abs() <= CONSENSUS_TOLERANCE
    }

    pub fn is_finite(&self) -> bool {
        let (a, b) = self.values();
        a.is_finite() && b.is_finite()
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ReportRef::Vfe(r) => serde_json::to_value(r),
            ReportRef::Efe(r) => serde_json::to_value(r),
        }
        .expect("reports serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub narrative_form1: String,
    pub narrative_form2: String,
    pub verdict: Verdict,
}

/// One example input/output grid pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub input: Vec<Vec<u8>>,
    pub output: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub task_id: String,
    pub examples: Vec<ExamplePair>,
    /// Observable tags computed from the examples.
    pub features: BTreeSet<String>,
    /// Summaries of retrieved episodes.
    pub retrieved: Vec<String>,
}

/// A candidate rule with how reliably testing it reports a match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub key: String,
    pub annotation: String,
    pub p_match_if_true: f64,
    pub p_match_if_false: f64,
}

impl Hypothesis {
    /// Validates the fragment by building the two-state test model it implies.
    pub fn validate(&self) -> Result<GenerativeModel, ReasoningError> {
        let bad = |e: &dyn std::fmt::Display| ReasoningError::Malformed(format!("hypothesis '{}': {e}", self.key));
        if self.key.is_empty() || self.annotation.is_empty() {
            return Err(ReasoningError::Malformed("hypothesis needs a key and an annotation".into()));
        }
        let states = vec![format!("{} holds", self.key), format!("{} fails", self.key)];
        let obs = vec!["match".to_string(), "mismatch".to_string()];
        let a = LikelihoodModel::from_matrix(
            &obs,
            &[
                vec![self.p_match_if_true, 1.0 - self.p_match_if_true],
                vec![self.p_match_if_false, 1.0 - self.p_match_if_false],
            ],
            vec![self.annotation.clone(), String::new()],
        )
        .map_err(|e| bad(&e))?;
        let b = TransitionModel::from_matrices(&states, vec!["test".into()], &[vec![vec![1.0, 0.0], vec![0.0, 1.0]]], vec![])
            .map_err(|e| bad(&e))?;
        let d = PriorBelief::new(CategoricalDist::uniform(states).map_err(|e| bad(&e))?, vec![]);
        if self.p_match_if_true <= self.p_match_if_false {
            return Err(bad(&"a true rule must match more often than a false one"));
        }
        GenerativeModel::new(a, b, PreferenceModel::neutral(obs), d).map_err(|e| bad(&e))
    }
}

pub trait ReasoningProvider: Send {
    fn capabilities(&self) -> Capabilities;

    fn interpret_report(&mut self, report: ReportRef<'_>) -> Result<Interpretation, ReasoningError>;

    fn propose_hypotheses(&mut self, context: &TaskContext) -> Result<Vec<Hypothesis>, ReasoningError>;

    fn check_consensus(&mut self, narrative_form1: &str, narrative_form2: &str) -> Result<Verdict, ReasoningError>;

    /// Budget units consumed so far.
    fn units_used(&self) -> u64 {
        0
    }
}

/// Uses the primary provider until it fails once, then the tabular provider
/// for the rest of the episode.
pub struct FallbackProvider {
    primary: Box<dyn ReasoningProvider>,
    fallback: TabularProvider,
    degraded: Option<String>,
    newly_degraded: bool,
}

impl FallbackProvider {
    pub fn new(primary: Box<dyn ReasoningProvider>, fallback: TabularProvider) -> Self {
        Self { primary, fallback, degraded: None, newly_degraded: false }
    }

    pub fn degraded(&self) -> Option<&str> {
        self.degraded.as_deref()
    }

    /// The failure reason, once, right after the switch.
    pub fn take_fallback_notice(&mut self) -> Option<String> {
        if std::mem::take(&mut self.newly_degraded) {
            self.degraded.clone()
        } else {
            None
        }
    }

    pub fn reset_episode(&mut self) {
        self.degraded = None;
        self.newly_degraded = false;
    }

    fn call<T>(
        &mut self,
        f: impl FnOnce(&mut dyn ReasoningProvider) -> Result<T, ReasoningError>,
        g: impl FnOnce(&mut TabularProvider) -> Result<T, ReasoningError>,
    ) -> Result<T, ReasoningError> {
        if self.degraded.is_none() {
            match f(self.primary.as_mut()) {
                Ok(v) => return Ok(v),
                Err(ReasoningError::NoHypothesis) => return Err(ReasoningError::NoHypothesis),
                Err(e) => {
                    self.degraded = Some(e.to_string());
                    self.newly_degraded = true;
                }
            }
        }
        g(&mut self.fallback)
    }
}

impl ReasoningProvider for FallbackProvider {
    fn capabilities(&self) -> Capabilities {
        if self.degraded.is_some() {
            self.fallback.capabilities()
        } else {
            self.primary.capabilities()
        }
    }

    fn interpret_report(&mut self, report: ReportRef<'_>) -> Result<Interpretation, ReasoningError> {
        self.call(|p| p.interpret_report(report), |t| t.interpret_report(report))
    }

    fn propose_hypotheses(&mut self, context: &TaskContext) -> Result<Vec<Hypothesis>, ReasoningError> {
        self.call(|p| p.propose_hypotheses(context), |t| t.propose_hypotheses(context))
    }

    fn check_consensus(&mut self, n1: &str, n2: &str) -> Result<Verdict, ReasoningError> {
        self.call(|p| p.check_consensus(n1, n2), |t| t.check_consensus(n1, n2))
    }

    fn units_used(&self) -> u64 {
        self.primary.units_used() + self.fallback.units_used()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRound {
    pub round: usize,
    pub narrative_form1: String,
    pub narrative_form2: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub consensus: bool,
    pub rounds: Vec<ConsensusRound>,
}

impl ConsensusOutcome {
    pub fn transcript(&self) -> Vec<String> {
        self.rounds
            .iter()
            .map(|r| format!("round {}: {:?} | {} | {}", r.round, r.verdict, r.narrative_form1, r.narrative_form2))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusProtocol {
    pub max_rounds: usize,
}

impl Default for ConsensusProtocol {
    fn default() -> Self {
        Self { max_rounds: 3 }
    }
}

impl ConsensusProtocol {
    /// Asks the provider for interpretations until they agree or the round
    /// limit is hit. Deterministic providers get one round, since asking
    /// again cannot change the answer. Each round is one provider call.
    pub fn run(&self, provider: &mut dyn ReasoningProvider, report: ReportRef<'_>) -> Result<ConsensusOutcome, ReasoningError> {
        if !report.is_finite() {
            return Err(ReasoningError::NonFiniteReport);
        }
        let limit = if provider.capabilities().deterministic { 1 } else { self.max_rounds.max(1) };
        let mut rounds = Vec::new();
        for round in 1..=limit {
            let i = provider.interpret_report(report)?;
            rounds.push(ConsensusRound {
                round,
                narrative_form1: i.narrative_form1,
                narrative_form2: i.narrative_form2,
                verdict: i.verdict,
            });
            if i.verdict == Verdict::Agree {
                return Ok(ConsensusOutcome { consensus: true, rounds });
            }
        }
        Ok(ConsensusOutcome { consensus: false, rounds })
    }
}

/// Marks a provider replacement: the agent keeps all memories and its
/// generation counter moves up by one.
pub fn advance_generation(agent: &mut AgentNode) -> u32 {
    agent.generation += 1;
    agent.generation
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::testing::two_state_model;
    use crate::generative::{compute_vfe, CategoricalDist};

    /// Scripted provider: verdicts come from a list; any call past it fails.
    struct Scripted {
        verdicts: Vec<Verdict>,
        calls: usize,
    }

    impl ReasoningProvider for Scripted {
        fn capabilities(&self) -> Capabilities {
            Capabilities {
                name: "scripted".into(),
                deterministic: false,
                uses_network: false,
                linguistic_consensus: true,
                proposes_hypotheses: false,
                charge_unit: "token".into(),
            }
        }
        fn interpret_report(&mut self, _: ReportRef<'_>) -> Result<Interpretation, ReasoningError> {
            let v = *self.verdicts.get(self.calls).ok_or_else(|| ReasoningError::ProviderUnavailable("script ended".into()))?;
            self.calls += 1;
            Ok(Interpretation { narrative_form1: "a".into(), narrative_form2: "b".into(), verdict: v })
        }
        fn propose_hypotheses(&mut self, _: &TaskContext) -> Result<Vec<Hypothesis>, ReasoningError> {
            Err(ReasoningError::ProviderUnavailable("offline".into()))
        }
        fn check_consensus(&mut self, _: &str, _: &str) -> Result<Verdict, ReasoningError> {
            Ok(Verdict::Agree)
        }
    }

    fn report() -> FreeEnergyReport {
        let m = two_state_model([0.5, 0.5]);
        compute_vfe(&CategoricalDist::new(m.state_labels().to_vec(), vec![0.5, 0.5]).unwrap(), &m, "o0").unwrap()
    }

    #[test]
    fn consensus_round_bounds() {
        let r = report();
        let p = ConsensusProtocol::default();
        let mut s = Scripted { verdicts: vec![Verdict::Disagree, Verdict::Agree], calls: 0 };
        let out = p.run(&mut s, ReportRef::Vfe(&r)).unwrap();
        assert!(out.consensus);
        assert_eq!(out.rounds.len(), 2);
        assert_eq!(out.rounds.len(), s.calls);
        let mut s = Scripted { verdicts: vec![Verdict::Disagree; 5], calls: 0 };
        let out = p.run(&mut s, ReportRef::Vfe(&r)).unwrap();
        assert!(!out.consensus);
        assert_eq!(out.rounds.len(), 3);
        assert_eq!(s.calls, 3);
        let mut t = TabularProvider::default();
        assert_eq!(p.run(&mut t, ReportRef::Vfe(&r)).unwrap().rounds.len(), 1);
    }

    #[test]
    fn fallback_is_sticky_until_reset() {
        let mut f = FallbackProvider::new(
            Box::new(Scripted { verdicts: vec![], calls: 0 }),
            TabularProvider::default(),
        );
        let r = report();
        let i = f.interpret_report(ReportRef::Vfe(&r)).unwrap();
        assert_eq!(i.verdict, Verdict::Agree);
        assert!(f.degraded().is_some());
        assert!(f.take_fallback_notice().is_some());
        assert!(f.take_fallback_notice().is_none());
        assert_eq!(f.capabilities().name, "tabular");
        f.reset_episode();
        assert!(f.degraded().is_none());
    }

    #[test]
    fn hypothesis_validation() {
        let good = Hypothesis { key: "r".into(), annotation: "rotate".into(), p_match_if_true: 0.98, p_match_if_false: 0.02 };
        assert!(good.validate().is_ok());
        let bad = Hypothesis { p_match_if_true: 1.3, ..good.clone() };
        assert!(matches!(bad.validate(), Err(ReasoningError::Malformed(_))));
        let inverted = Hypothesis { p_match_if_true: 0.01, ..good };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn generation_counter() {
        let mut a = AgentNode::new("a", "r", two_state_model([0.5, 0.5]), Default::default());
        a.episodic.write(crate::agent::Episode {
            task_id: "t".into(),
            observations: vec![],
            actions: vec![],
            outcome: "x".into(),
            final_f: 0.0,
            features: vec![],
            avoid: false,
            preference_hash: String::new(),
        });
        assert_eq!(advance_generation(&mut a), 1);
        assert_eq!(a.episodic.len(), 1);
    }
}
