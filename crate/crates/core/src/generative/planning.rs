//! Policy enumeration, expected free energy in both decompositions, ranking and
//! hard-constraint filtering.

use serde::{Deserialize, Serialize};

use super::dist::{entropy, kl_divergence, ln_clamped, CategoricalDist};
use super::model::{GenerativeModel, PreferenceModel};
use super::{narrative, InferenceError, CONSENSUS_TOLERANCE};

pub const DEFAULT_HORIZON_CAP: usize = 3;
pub const MAX_HORIZON_OVERRIDE: usize = 5;
pub const POLICY_COUNT_CAP: usize = 100_000;
/// Predicted probability above which a forbidden observation disqualifies a policy.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-6;
/// Id reserved for the policy that does nothing.
pub const NOOP_POLICY_ID: usize = usize::MAX;

/// A finite action sequence with a deterministic index in its enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    pub id: usize,
    pub actions: Vec<String>,
}

impl Policy {
    /// The designated fallback: hold still, emit nothing.
    pub fn noop() -> Self {
        Self { id: NOOP_POLICY_ID, actions: Vec::new() }
    }

    pub fn is_noop(&self) -> bool {
        self.id == NOOP_POLICY_ID
    }

    pub fn first_action(&self) -> Option<&str> {
        self.actions.first().map(String::as_str)
    }
}

/// Terms of one step of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfeStep {
    pub action: String,
    pub predicted_states: Vec<f64>,
    pub predicted_observations: Vec<f64>,
    pub info_gain: f64,
    pub pragmatic: f64,
    pub ambiguity: f64,
    pub risk: f64,
}

/// Expected free energy of one policy, summed over its steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfeReport {
    pub policy: Policy,
    pub info_gain: f64,
    pub pragmatic: f64,
    pub ambiguity: f64,
    pub risk: f64,
    pub g_form1: f64,
    pub g_form2: f64,
    pub consensus: bool,
    pub narrative_form1: String,
    pub narrative_form2: String,
    pub steps: Vec<EfeStep>,
}

impl EfeReport {
    /// Canonical ranking value (ambiguity + risk).
    pub fn value(&self) -> f64 {
        self.g_form2
    }

    pub fn is_complete(&self) -> bool {
        self.g_form1.is_finite()
            && self.g_form2.is_finite()
            && !self.narrative_form1.is_empty()
            && !self.narrative_form2.is_empty()
    }
}

/// All action sequences of exactly `horizon` steps, lexicographic in the
/// model's declared action order, with the default horizon cap.
pub fn enumerate_policies(model: &GenerativeModel, horizon: usize) -> Result<Vec<Policy>, InferenceError> {
    enumerate_policies_capped(model, horizon, DEFAULT_HORIZON_CAP)
}

/// Like [`enumerate_policies`] with a configured horizon cap (at most 5).
pub fn enumerate_policies_capped(
    model: &GenerativeModel,
    horizon: usize,
    horizon_cap: usize,
) -> Result<Vec<Policy>, InferenceError> {
    let actions = model.action_labels();
    let count = (actions.len() as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if count > POLICY_COUNT_CAP as u128 {
        return Err(InferenceError::CapExceeded { policies: count, cap: POLICY_COUNT_CAP });
    }
    let cap = horizon_cap.min(MAX_HORIZON_OVERRIDE);
    if horizon == 0 || horizon > cap {
        return Err(InferenceError::InvalidHorizon { horizon, cap });
    }
    let n = actions.len();
    let mut out = Vec::with_capacity(count as usize);
    let mut digits = vec![0usize; horizon];
    for id in 0..count as usize {
        out.push(Policy { id, actions: digits.iter().map(|&d| actions[d].clone()).collect() });
        for pos in (0..horizon).rev() {
            digits[pos] += 1;
            if digits[pos] < n {
                break;
            }
            digits[pos] = 0;
        }
    }
    Ok(out)
}

/// Expected free energy of `policy` from `current_belief`.
///
/// The belief is rolled forward through `B` once per action. At each step the
/// information gain is computed from the exact posterior of the predicted
/// states given each predicted observation; ambiguity and risk are computed
/// from the likelihood entropies and the outcome divergence. Per-step terms
/// are summed.
pub fn compute_efe(
    policy: &Policy,
    model: &GenerativeModel,
    current_belief: &CategoricalDist,
) -> Result<EfeReport, InferenceError> {
    if current_belief.labels() != model.state_labels() {
        return Err(InferenceError::LabelMismatch("belief is not over the model's states".into()));
    }
    if policy.actions.is_empty() {
        return Err(InferenceError::InvalidPolicy("empty policy has no expected free energy".into()));
    }
    let a = model.likelihood();
    let b = model.transitions();
    let ln_c = model.preferences().ln_preferred();
    let num_obs = ln_c.len();
    let row_entropy: Vec<f64> = a.rows().iter().map(|r| entropy(r.probs())).collect();

    let mut belief = current_belief.probs().to_vec();
    let mut steps = Vec::with_capacity(policy.actions.len());
    for label in &policy.actions {
        let action = b
            .action_index(label)
            .ok_or_else(|| InferenceError::InvalidPolicy(format!("unknown action '{label}'")))?;
        belief = b.propagate(&belief, action);

        let mut qo = vec![0.0; num_obs];
        for (s, qs) in belief.iter().enumerate() {
            if *qs == 0.0 {
                continue;
            }
            for (o, p) in a.rows()[s].probs().iter().enumerate() {
                qo[o] += qs * p;
            }
        }

        // information gain + pragmatic value
        let mut info_gain = 0.0;
        for (o, &po) in qo.iter().enumerate() {
            if po <= 0.0 {
                continue;
            }
            let posterior: Vec<f64> = belief.iter().enumerate().map(|(s, qs)| qs * a.p(s, o) / po).collect();
            info_gain += po * kl_divergence(&posterior, &belief);
        }
        let pragmatic: f64 = qo.iter().zip(&ln_c).map(|(p, lc)| p * lc).sum();

        // ambiguity + risk
        let ambiguity: f64 = belief.iter().zip(&row_entropy).map(|(qs, h)| qs * h).sum();
        let risk: f64 = qo.iter().zip(&ln_c).map(|(p, lc)| p * (ln_clamped(*p) - lc)).sum();

        steps.push(EfeStep {
            action: label.clone(),
            predicted_states: belief.clone(),
            predicted_observations: qo,
            info_gain,
            pragmatic,
            ambiguity,
            risk,
        });
    }

    let info_gain: f64 = steps.iter().map(|s| s.info_gain).sum();
    let pragmatic: f64 = steps.iter().map(|s| s.pragmatic).sum();
    let ambiguity: f64 = steps.iter().map(|s| s.ambiguity).sum();
    let risk: f64 = steps.iter().map(|s| s.risk).sum();
    let g_form1 = -info_gain - pragmatic;
    let g_form2 = ambiguity + risk;
    if !(g_form1.is_finite() && g_form2.is_finite()) {
        return Err(InferenceError::DegenerateModel("non-finite expected free energy".into()));
    }
    Ok(EfeReport {
        policy: policy.clone(),
        info_gain,
        pragmatic,
        ambiguity,
        risk,
        g_form1,
        g_form2,
        consensus: (g_form1 - g_form2).abs() <= CONSENSUS_TOLERANCE,
        narrative_form1: narrative::efe_form1(info_gain, pragmatic, g_form1),
        narrative_form2: narrative::efe_form2(ambiguity, risk, g_form2),
        steps,
    })
}

/// One entry of a ranking. `g` is absent only for the no-op fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPolicy {
    pub policy: Policy,
    pub g: Option<f64>,
}

/// Full ascending ranking by `g_form2`, ties broken by lowest policy id.
pub fn rank_policies(reports: &[EfeReport], allow_no_consensus: bool) -> Result<Vec<RankedPolicy>, InferenceError> {
    if !allow_no_consensus {
        if let Some(r) = reports.iter().find(|r| !r.consensus) {
            return Err(InferenceError::NoConsensus { policy_id: r.policy.id });
        }
    }
    let mut ranked: Vec<RankedPolicy> = reports
        .iter()
        .map(|r| RankedPolicy { policy: r.policy.clone(), g: Some(r.g_form2) })
        .collect();
    ranked.sort_by(|x, y| {
        let gx = x.g.unwrap_or(f64::INFINITY);
        let gy = y.g.unwrap_or(f64::INFINITY);
        gx.total_cmp(&gy).then(x.policy.id.cmp(&y.policy.id))
    });
    Ok(ranked)
}

/// Result of removing policies that risk a forbidden observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedRanking {
    pub ranking: Vec<RankedPolicy>,
    pub removed: Vec<usize>,
    /// Every candidate was forbidden and the no-op policy stands in.
    pub lockout: bool,
}

impl ConstrainedRanking {
    pub fn selected(&self) -> &RankedPolicy {
        &self.ranking[0]
    }
}

/// Drops every policy whose predicted observations put more than
/// [`CONSTRAINT_TOLERANCE`] on a hard-constrained observation at any step.
pub fn apply_hard_constraints(
    ranking: &[RankedPolicy],
    preferences: &PreferenceModel,
    reports: &[EfeReport],
) -> ConstrainedRanking {
    let forbidden = preferences.forbidden_indices();
    let mut kept = Vec::with_capacity(ranking.len());
    let mut removed = Vec::new();
    for entry in ranking {
        let violates = reports
            .iter()
            .find(|r| r.policy.id == entry.policy.id)
            .map(|r| {
                r.steps.iter().any(|step| {
                    forbidden
                        .iter()
                        .any(|&o| step.predicted_observations.get(o).copied().unwrap_or(0.0) > CONSTRAINT_TOLERANCE)
                })
            })
            .unwrap_or(false);
        if violates {
            removed.push(entry.policy.id);
        } else {
            kept.push(entry.clone());
        }
    }
    let lockout = kept.is_empty();
    if lockout {
        kept.push(RankedPolicy { policy: Policy::noop(), g: None });
    }
    ConstrainedRanking { ranking: kept, removed, lockout }
}
