//! Fixed text templates that turn free-energy terms into readable summaries.
//!
//! Every template is keyed on sign/magnitude buckets so the same numbers always
//! render the same sentence.

const STRONG: f64 = 1.0;
const WEAK: f64 = 0.1;

fn bucket(x: f64) -> &'static str {
    if x >= STRONG {
        "high"
    } else if x >= WEAK {
        "moderate"
    } else {
        "low"
    }
}

pub(crate) fn vfe_form1(complexity: f64, accuracy: f64, f: f64) -> String {
    let verdict = if complexity > accuracy && complexity >= WEAK {
        "complexity dominates accuracy: the belief had to move far from the prior to explain the observation"
    } else if accuracy >= STRONG {
        "accuracy dominates complexity: the observation was poorly predicted under current beliefs"
    } else if accuracy >= WEAK {
        "accuracy dominates complexity: the observation was partly predicted under current beliefs"
    } else {
        "beliefs stay close to the prior and predict the observation well"
    };
    format!(
        "Complexity {complexity:.4} nats ({}) against prediction error {accuracy:.4} nats ({}); {verdict}. F = {f:.6}",
        bucket(complexity),
        bucket(accuracy)
    )
}

pub(crate) fn vfe_form2(divergence: f64, log_evidence: f64, f: f64) -> String {
    let surprise = -log_evidence;
    let evidence = if surprise < WEAK {
        "model evidence is strong"
    } else if surprise < STRONG {
        "model evidence is moderate"
    } else {
        "model evidence is weak, so epistemic actions are warranted"
    };
    let divergence_text = if divergence < WEAK {
        "the belief is close to the exact posterior"
    } else {
        "the belief lags the exact posterior"
    };
    format!(
        "Belief divergence {divergence:.4} nats ({}) with log evidence {log_evidence:.4}; {evidence} and {divergence_text}. F = {f:.6}",
        bucket(divergence)
    )
}

pub(crate) fn efe_form1(info_gain: f64, pragmatic: f64, g: f64) -> String {
    let balance = if info_gain > -pragmatic * 0.5 && info_gain >= WEAK {
        "exploration carries this policy: expected information gain is substantial"
    } else if info_gain >= WEAK {
        "the policy balances information gain against preferred outcomes"
    } else {
        "the policy is exploitative: little is learned, outcomes are judged by preference alone"
    };
    format!("Information gain {info_gain:.4} nats, pragmatic value {pragmatic:.4} nats; {balance}. G = {g:.6}")
}

pub(crate) fn efe_form2(ambiguity: f64, risk: f64, g: f64) -> String {
    let lead = if ambiguity > risk {
        "ambiguity outweighs risk: predicted observations are uninformative about hidden states"
    } else {
        "risk outweighs ambiguity: predicted outcomes diverge from preferred outcomes"
    };
    format!(
        "Expected ambiguity {ambiguity:.4} nats ({}), outcome risk {risk:.4} nats ({}); {lead}. G = {g:.6}",
        bucket(ambiguity),
        bucket(risk)
    )
}
