//! Checks that a provider behaves as its capabilities claim.

use super::{ReasoningError, ReasoningProvider, ReportRef, TaskContext};

/// Returns one line per broken claim; empty means conformant.
pub fn check_provider(provider: &mut dyn ReasoningProvider, report: ReportRef<'_>, context: &TaskContext) -> Vec<String> {
    let caps = provider.capabilities();
    let mut problems = Vec::new();

    if caps.deterministic {
        let a = provider.interpret_report(report);
        let b = provider.interpret_report(report);
        if a != b {
            problems.push("declared deterministic but repeated interpretations differ".to_string());
        }
        if let Ok(i) = a {
            let numeric = report.numeric_consensus();
            if (i.verdict == super::Verdict::Agree) != numeric {
                problems.push("deterministic verdict disagrees with the numeric consensus flag".to_string());
            }
        }
    } else if let Err(e) = provider.interpret_report(report) {
        problems.push(format!("interpretation failed: {e}"));
    }

    match provider.propose_hypotheses(&TaskContext::default()) {
        Err(ReasoningError::NoHypothesis) => {}
        other => problems.push(format!("empty context must give NoHypothesis, got {other:?}")),
    }
    if caps.proposes_hypotheses {
        match provider.propose_hypotheses(context) {
            Ok(list) => {
                for h in list {
                    if let Err(e) = h.validate() {
                        problems.push(format!("proposed an invalid hypothesis: {e}"));
                    }
                }
            }
            Err(ReasoningError::NoHypothesis) => {}
            Err(e) => problems.push(format!("hypothesis proposal failed: {e}")),
        }
    }

    let before = provider.units_used();
    let _ = provider.interpret_report(report);
    if provider.units_used() <= before {
        problems.push(format!("calls are not charged in {} units", caps.charge_unit));
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::compute_vfe;
    use crate::generative::testing::two_state_model;
    use crate::reasoning::{ExamplePair, TabularProvider};

    #[test]
    fn tabular_conforms() {
        let m = two_state_model([0.5, 0.5]);
        let r = compute_vfe(&m.prior().dist, &m, "o1").unwrap();
        let ctx = TaskContext {
            task_id: "t".into(),
            examples: vec![ExamplePair { input: vec![vec![1, 2]], output: vec![vec![2, 1]] }],
            features: ["shape:same".to_string(), "palette:same".to_string()].into(),
            retrieved: vec![],
        };
        assert!(check_provider(&mut TabularProvider::default(), ReportRef::Vfe(&r), &ctx).is_empty());
    }
}
