//! Exact Bayesian belief updates and variational free energy in both of its
//! decompositions.

use serde::{Deserialize, Serialize};

use super::dist::{kl_divergence, ln_clamped, surprise_ceiling, CategoricalDist};
use super::model::{GenerativeModel, LikelihoodModel};
use super::{narrative, InferenceError, CONSENSUS_TOLERANCE};

/// Evidence below this is treated as an impossible observation.
pub const MIN_EVIDENCE: f64 = 1e-300;

/// Both decompositions of `F` for one observation.
///
/// `accuracy` stores the expected negative log-likelihood, so
/// `f_form1 = complexity + accuracy` and `f_form2 = belief_divergence - log_evidence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    pub observation: String,
    pub complexity: f64,
    pub accuracy: f64,
    pub belief_divergence: f64,
    pub log_evidence: f64,
    pub f_form1: f64,
    pub f_form2: f64,
    pub consensus: bool,
    pub narrative_form1: String,
    pub narrative_form2: String,
}

impl FreeEnergyReport {
    /// The canonical free energy value.
    pub fn value(&self) -> f64 {
        self.f_form1
    }

    /// Report for an observation that no state can produce. Both forms are
    /// pinned to the surprise ceiling.
    pub fn maximal_surprise(observation: &str) -> Self {
        let f = surprise_ceiling();
        Self {
            observation: observation.to_string(),
            complexity: 0.0,
            accuracy: f,
            belief_divergence: 0.0,
            log_evidence: -f,
            f_form1: f,
            f_form2: f,
            consensus: true,
            narrative_form1: narrative::vfe_form1(0.0, f, f),
            narrative_form2: narrative::vfe_form2(0.0, -f, f),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.f_form1.is_finite()
            && self.f_form2.is_finite()
            && !self.narrative_form1.is_empty()
            && !self.narrative_form2.is_empty()
    }
}

/// Exact posterior `P(s|o) ∝ P(s) P(o|s)`.
pub fn update_belief(
    prior: &CategoricalDist,
    likelihood: &LikelihoodModel,
    observation: &str,
) -> Result<CategoricalDist, InferenceError> {
    let o = likelihood
        .observation_labels()
        .iter()
        .position(|l| l == observation)
        .ok_or_else(|| InferenceError::UnknownObservation(observation.to_string()))?;
    posterior_at(prior, likelihood, o)
}

pub(crate) fn posterior_at(
    prior: &CategoricalDist,
    likelihood: &LikelihoodModel,
    o: usize,
) -> Result<CategoricalDist, InferenceError> {
    if prior.len() != likelihood.num_states() {
        return Err(InferenceError::LabelMismatch("prior and likelihood state counts differ".into()));
    }
    let joint: Vec<f64> = prior
        .probs()
        .iter()
        .enumerate()
        .map(|(s, p)| p * likelihood.p(s, o))
        .collect();
    let evidence: f64 = joint.iter().sum();
    if !(evidence >= MIN_EVIDENCE) {
        return Err(InferenceError::ZeroEvidence {
            observation: likelihood.observation_labels()[o].clone(),
        });
    }
    Ok(prior.with_weights(joint)?)
}

/// Free energy of belief `q` against an explicit prior.
///
/// Form 1 uses only `q`, the prior and the likelihood column. Form 2 builds the
/// exact posterior and evidence on its own and never touches the complexity term.
pub fn free_energy(
    q: &CategoricalDist,
    prior: &CategoricalDist,
    likelihood: &LikelihoodModel,
    observation: &str,
) -> Result<FreeEnergyReport, InferenceError> {
    let o = likelihood
        .observation_labels()
        .iter()
        .position(|l| l == observation)
        .ok_or_else(|| InferenceError::UnknownObservation(observation.to_string()))?;
    let n = likelihood.num_states();
    if q.len() != n || prior.len() != n {
        return Err(InferenceError::LabelMismatch("belief, prior and likelihood state counts differ".into()));
    }

    // complexity - accuracy
    let complexity = kl_divergence(q.probs(), prior.probs());
    let accuracy = -q
        .probs()
        .iter()
        .enumerate()
        .map(|(s, qs)| qs * ln_clamped(likelihood.p(s, o)))
        .sum::<f64>();
    let f_form1 = complexity + accuracy;

    // divergence - evidence
    let joint: Vec<f64> = prior
        .probs()
        .iter()
        .enumerate()
        .map(|(s, p)| p * likelihood.p(s, o))
        .collect();
    let evidence: f64 = joint.iter().sum();
    if !(evidence >= MIN_EVIDENCE) {
        return Err(InferenceError::DegenerateModel(format!(
            "observation '{observation}' has zero evidence under the prior"
        )));
    }
    let posterior: Vec<f64> = joint.iter().map(|j| j / evidence).collect();
    let belief_divergence = kl_divergence(q.probs(), &posterior);
    let log_evidence = ln_clamped(evidence);
    let f_form2 = belief_divergence - log_evidence;

    if !(f_form1.is_finite() && f_form2.is_finite()) {
        return Err(InferenceError::DegenerateModel("non-finite free energy".into()));
    }

    Ok(FreeEnergyReport {
        observation: observation.to_string(),
        complexity,
        accuracy,
        belief_divergence,
        log_evidence,
        f_form1,
        f_form2,
        consensus: (f_form1 - f_form2).abs() <= CONSENSUS_TOLERANCE,
        narrative_form1: narrative::vfe_form1(complexity, accuracy, f_form1),
        narrative_form2: narrative::vfe_form2(belief_divergence, log_evidence, f_form2),
    })
}

/// Free energy of `q` under the model's own prior `D`.
pub fn compute_vfe(
    q: &CategoricalDist,
    model: &GenerativeModel,
    observation: &str,
) -> Result<FreeEnergyReport, InferenceError> {
    if q.labels() != model.state_labels() {
        return Err(InferenceError::LabelMismatch("belief is not over the model's states".into()));
    }
    free_energy(q, &model.prior().dist, model.likelihood(), observation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::testing::two_state_model;

    fn dist(p: &[f64]) -> CategoricalDist {
        CategoricalDist::new(vec!["s0".into(), "s1".into()], p.to_vec()).unwrap()
    }

    #[test]
    fn bayes_two_state() {
        // Hand oracle: [0.5*0.8, 0.5*0.2] / 0.5
        let m = two_state_model([0.5, 0.5]);
        let post = update_belief(&dist(&[0.5, 0.5]), m.likelihood(), "o0").unwrap();
        assert!((post.probs()[0] - 0.8).abs() < 1e-15);
        assert!((post.probs()[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn deterministic_likelihood_gives_indicator() {
        let labels: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let obs: Vec<String> = (0..3).map(|i| format!("o{i}")).collect();
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let a = LikelihoodModel::from_matrix(&obs, &eye, vec![String::new(); 3]).unwrap();
        let prior = CategoricalDist::new(labels, vec![0.2, 0.3, 0.5]).unwrap();
        let post = update_belief(&prior, &a, "o2").unwrap();
        assert_eq!(post.probs(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn uniform_likelihood_leaves_prior() {
        let obs = vec!["a".to_string(), "b".to_string()];
        let a = LikelihoodModel::from_matrix(&obs, &[vec![0.5, 0.5], vec![0.5, 0.5]], vec![String::new(); 2]).unwrap();
        let prior = dist(&[0.3, 0.7]);
        let post = update_belief(&prior, &a, "b").unwrap();
        for (x, y) in post.probs().iter().zip(prior.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_evidence_is_an_error() {
        let obs = vec!["a".to_string(), "b".to_string()];
        let a = LikelihoodModel::from_matrix(&obs, &[vec![1.0, 0.0], vec![1.0, 0.0]], vec![String::new(); 2]).unwrap();
        let err = update_belief(&dist(&[0.5, 0.5]), &a, "b").unwrap_err();
        assert!(matches!(err, InferenceError::ZeroEvidence { .. }));
        assert!(matches!(
            update_belief(&dist(&[0.5, 0.5]), &a, "zzz"),
            Err(InferenceError::UnknownObservation(_))
        ));
    }

    #[test]
    fn vfe_at_exact_posterior_is_surprise() {
        let m = two_state_model([0.5, 0.5]);
        let q = dist(&[0.8, 0.2]);
        let r = compute_vfe(&q, &m, "o0").unwrap();
        assert!(r.belief_divergence.abs() < 1e-15);
        assert!((r.f_form2 - 0.5f64.ln().abs()).abs() < 1e-12);
        assert!((r.f_form1 - 0.693_147_180_559_945_3).abs() < 1e-12);
        assert!(r.consensus);
    }

    #[test]
    fn vfe_at_prior_matches_direct_sum() {
        // Direct evaluation: -(0.5 ln 0.8 + 0.5 ln 0.2)
        let expected = -(0.5 * 0.8f64.ln() + 0.5 * 0.2f64.ln());
        let m = two_state_model([0.5, 0.5]);
        let r = compute_vfe(&dist(&[0.5, 0.5]), &m, "o0").unwrap();
        assert_eq!(r.complexity, 0.0);
        assert!((r.f_form1 - expected).abs() < 1e-12);
        assert!((r.f_form1 - 0.9163).abs() < 1e-4);
        assert!(r.consensus);
    }

    #[test]
    fn deterministic_world_has_zero_free_energy() {
        let obs = vec!["o0".to_string(), "o1".to_string()];
        let a = LikelihoodModel::from_matrix(&obs, &[vec![1.0, 0.0], vec![0.0, 1.0]], vec![String::new(); 2]).unwrap();
        let q = dist(&[1.0, 0.0]);
        let r = free_energy(&q, &q, &a, "o0").unwrap();
        assert_eq!(r.f_form1, 0.0);
        assert_eq!(r.f_form2, 0.0);
    }

    #[test]
    fn maximal_surprise_report_is_complete() {
        let r = FreeEnergyReport::maximal_surprise("x");
        assert!(r.is_complete());
        assert!((r.value() - 27.631_021_115_928_547).abs() < 1e-9);
    }
}
