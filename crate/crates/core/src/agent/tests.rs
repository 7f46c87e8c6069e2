use super::*;
use crate::generative::testing::two_state_model;
use crate::generative::{LikelihoodModel, PreferenceModel, PriorBelief, TransitionModel};

fn labels(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

/// Two locations, observed exactly; moving to "goal" is preferred.
fn walker(constraint_on_goal: bool) -> GenerativeModel {
    let s = labels(&["home", "goal"]);
    let o = labels(&["at_home", "at_goal"]);
    let a = LikelihoodModel::from_matrix(&o, &[vec![1.0, 0.0], vec![0.0, 1.0]], vec![]).unwrap();
    let b = TransitionModel::from_matrices(
        &s,
        labels(&["stay", "go"]),
        &[vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
        vec![],
    )
    .unwrap();
    let forbidden = if constraint_on_goal { ["at_goal".to_string()].into() } else { Default::default() };
    let c = PreferenceModel::new(o, vec![0.0, 2.0], forbidden, vec![], 1.0).unwrap();
    let d = PriorBelief::new(CategoricalDist::one_hot(s, 0).unwrap(), vec![]);
    GenerativeModel::new(a, b, c, d).unwrap()
}

fn agent(model: GenerativeModel) -> (AgentNode, TraceLog) {
    let mut trace = TraceLog::new();
    let mut a = AgentNode::new("a", "test", model, AgentConfig::default());
    a.begin_task("t", vec![1.0], None, &mut trace);
    (a, trace)
}

fn count(trace: &TraceLog, kind: &str) -> usize {
    trace.records().iter().filter(|r| r.event.event_type() == kind).count()
}

#[test]
fn deterministic_observation_is_not_reported() {
    let (mut a, mut trace) = agent(walker(false));
    trace.advance_tick();
    let p = a.perceive("at_home", &mut trace).unwrap();
    assert_eq!(p.report.value(), 0.0);
    assert!(p.upward.is_none());
}

#[test]
fn perception_scores_surprise() {
    // Belief [0.5,0.5] predicts o1 with 0.5*0.2 + 0.5*0.8 = 0.5; with prior
    // [0.9,0.1] it is 0.9*0.2 + 0.1*0.8 = 0.26.
    for (prior, p_o) in [([0.5, 0.5], 0.5), ([0.9, 0.1], 0.26)] {
        let (mut a, mut trace) = agent(two_state_model(prior));
        trace.advance_tick();
        let p = a.perceive("o1", &mut trace).unwrap();
        assert!((p.report.value() + f64::ln(p_o)).abs() < 1e-12);
        assert!(p.report.consensus);
    }
    // Prior-predictive 0.2: belief certain of s0, which emits o1 with 0.2.
    let (mut a, mut trace) = agent(two_state_model([1.0, 0.0]));
    trace.advance_tick();
    let p = a.perceive("o1", &mut trace).unwrap();
    assert!((p.report.value() - 1.609_437_912_434_100_3).abs() < 1e-12);
    assert!(p.upward.is_some());
}

#[test]
fn zero_evidence_keeps_belief_and_reports_ceiling() {
    let (mut a, mut trace) = agent(walker(false));
    let before = a.belief().clone();
    trace.advance_tick();
    let p = a.perceive("at_goal", &mut trace).unwrap();
    assert!(p.zero_evidence);
    assert_eq!(a.belief(), &before);
    assert!((p.report.value() - crate::generative::dist::surprise_ceiling()).abs() < 1e-12);
    assert!(p.upward.unwrap().zero_evidence);
}

#[test]
fn ticks_must_increase() {
    let (mut a, mut trace) = agent(walker(false));
    trace.advance_tick();
    a.perceive("at_home", &mut trace).unwrap();
    assert!(matches!(a.perceive("at_home", &mut trace), Err(AgentError::NonMonotonicTick { .. })));
    assert!(matches!(a.perceive("nowhere", &mut trace), Err(AgentError::NonMonotonicTick { .. })));
    trace.advance_tick();
    assert!(matches!(a.perceive("nowhere", &mut trace), Err(AgentError::Inference(InferenceError::UnknownObservation(_)))));
}

#[test]
fn deliberation_picks_preferred_action_and_charges_budget() {
    let (mut a, mut trace) = agent(walker(false));
    trace.advance_tick();
    a.perceive("at_home", &mut trace).unwrap();
    assert_eq!(a.select_mode(&mut trace).unwrap(), Mode::Deliberative);
    let out = a.plan(&mut trace).unwrap();
    assert_eq!(out.next_action.as_deref(), Some("go"));
    assert_eq!(out.predicted_observations, vec![0.0, 1.0]);
    assert_eq!(a.budget.consumed_units as usize, count(&trace, "EfeEvaluated"));
    assert_eq!(count(&trace, "PlanDecision"), 1);
}

#[test]
fn single_action_model_predicts_its_emission() {
    let s = labels(&["only"]);
    let o = labels(&["beep"]);
    let m = GenerativeModel::new(
        LikelihoodModel::from_matrix(&o, &[vec![1.0]], vec![]).unwrap(),
        TransitionModel::from_matrices(&s, labels(&["press"]), &[vec![vec![1.0]]], vec![]).unwrap(),
        PreferenceModel::neutral(o),
        PriorBelief::new(CategoricalDist::uniform(s).unwrap(), vec![]),
    )
    .unwrap();
    let (mut a, mut trace) = agent(m);
    trace.advance_tick();
    a.perceive("beep", &mut trace).unwrap();
    a.select_mode(&mut trace).unwrap();
    let out = a.plan(&mut trace).unwrap();
    assert_eq!(out.policy.actions, labels(&["press"]));
    assert_eq!(out.predicted_observations, vec![1.0]);
}

#[test]
fn budget_exhaustion_postpones() {
    let (mut a, mut trace) = agent(two_state_model([0.5, 0.5]));
    a.config.horizon = 2; // four policies
    a.begin_task("t", vec![], Some(ComplexityBudget::new(10, 2)), &mut trace);
    trace.advance_tick();
    a.perceive("o0", &mut trace).unwrap();
    a.select_mode(&mut trace).unwrap();
    let out = a.plan(&mut trace).unwrap();
    assert!(out.postponed);
    assert!(out.policy.is_noop());
    assert_eq!(count(&trace, "EfeEvaluated"), 2);
    assert_eq!(count(&trace, "Postponed"), 1);
    assert_eq!(a.budget.consumed_units, 2);
}

#[test]
fn constraint_lockout_returns_noop() {
    let (mut a, mut trace) = agent(walker(true));
    a.config.horizon = 1;
    // Both actions are fine from home only if "stay"; forbid via prior at goal.
    a.set_belief(CategoricalDist::one_hot(labels(&["home", "goal"]), 1).unwrap()).unwrap();
    trace.advance_tick();
    a.perceive("at_goal", &mut trace).unwrap();
    a.select_mode(&mut trace).unwrap();
    let out = a.plan(&mut trace).unwrap();
    assert!(out.lockout);
    assert!(out.policy.is_noop());
    assert_eq!(count(&trace, "ConstraintLockout"), 1);
}

#[test]
fn preference_update_forces_deliberation_and_flips_choice() {
    let (mut a, mut trace) = agent(walker(false));
    trace.advance_tick();
    a.perceive("at_home", &mut trace).unwrap();
    a.select_mode(&mut trace).unwrap();
    assert_eq!(a.plan(&mut trace).unwrap().next_action.as_deref(), Some("go"));
    let frag = PreferenceFragment::new([("at_home".to_string(), 10.0)], 1.0);
    a.update_preferences(1, frag, "operator", &mut trace).unwrap();
    trace.advance_tick();
    a.perceive("at_home", &mut trace).unwrap();
    assert_eq!(a.select_mode(&mut trace).unwrap(), Mode::Deliberative);
    assert_eq!(a.plan(&mut trace).unwrap().next_action.as_deref(), Some("stay"));
}

#[test]
fn layer_zero_write_is_logged_and_refused() {
    let (mut a, mut trace) = agent(walker(false));
    let hash = a.preferences().layer0_hash();
    let err = a.update_preferences(0, PreferenceFragment::default(), "operator", &mut trace).unwrap_err();
    assert_eq!(err, AgentError::ImmutableLayer);
    assert_eq!(count(&trace, "PreferenceWriteRejected"), 1);
    assert_eq!(a.preferences().layer0_hash(), hash);
    assert_eq!(hash, a.preferences().spawn_hash());
}

#[test]
fn identical_rewrite_still_emits_event() {
    let (mut a, mut trace) = agent(walker(false));
    let frag = PreferenceFragment::new([("at_home".to_string(), 1.0)], 1.0);
    a.update_preferences(1, frag.clone(), "op", &mut trace).unwrap();
    let c = a.model().preferences().clone();
    a.update_preferences(1, frag, "op", &mut trace).unwrap();
    assert_eq!(a.model().preferences(), &c);
    assert_eq!(count(&trace, "PreferenceChanged"), 2);
}

#[test]
fn perseveration_continues_policy_without_evaluations() {
    let (mut a, mut trace) = agent(walker(false));
    a.config.horizon = 2;
    trace.advance_tick();
    a.perceive("at_home", &mut trace).unwrap();
    a.select_mode(&mut trace).unwrap();
    let first = a.plan(&mut trace).unwrap();
    let evals = count(&trace, "EfeEvaluated");
    a.act(first.next_action.as_deref().unwrap(), Pathway::DirectExecution, &mut trace).unwrap();
    trace.advance_tick();
    a.perceive("at_goal", &mut trace).unwrap();
    assert_eq!(a.select_mode(&mut trace).unwrap(), Mode::Perseverative);
    let second = a.plan(&mut trace).unwrap();
    assert_eq!(second.policy, first.policy);
    assert_eq!(second.next_action.as_deref(), first.policy.actions.get(1).map(String::as_str));
    assert_eq!(count(&trace, "EfeEvaluated"), evals);
}

fn run_episode(a: &mut AgentNode, trace: &mut TraceLog, fs: &[&str], actions: &[&str], id: &str) -> Consolidation {
    a.begin_task(id, vec![1.0, 0.0], None, trace);
    for o in fs {
        trace.advance_tick();
        a.perceive(o, trace).unwrap();
    }
    for act in actions {
        a.task.actions.push(act.to_string());
    }
    a.consolidate("solved", true, trace)
}

#[test]
fn consolidation_trend_and_tools() {
    let (mut a, mut trace) = agent(two_state_model([0.5, 0.5]));
    // o1 then o0 under the flat prior: F drops from ln 2 to a smaller value.
    let mut registered = Vec::new();
    for i in 0..3 {
        let c = run_episode(&mut a, &mut trace, &["o0", "o0"], &["stay", "flip", "stay"][..2 + (i % 2)], &format!("e{i}"));
        assert!(c.written.is_some() && !c.avoidance);
        registered.extend(c.tools_registered);
    }
    assert_eq!(registered, vec!["tool:stay+flip".to_string()]);
    assert_eq!(a.procedural.get("tool:stay+flip").unwrap().usage_count, 0);

    let rising = run_episode(&mut a, &mut trace, &["o0", "o0", "o1", "o1"], &["stay"], "up");
    assert!(rising.avoidance);
    let n = a.episodic.len();
    let empty = run_episode(&mut a, &mut trace, &[], &[], "empty");
    assert!(empty.written.is_none());
    assert_eq!(a.episodic.len(), n);
}

#[test]
fn habit_replays_matching_episode() {
    let (mut a, mut trace) = agent(walker(false));
    a.episodic.write(Episode {
        task_id: "old".into(),
        observations: labels(&["at_home", "at_goal"]),
        actions: labels(&["go"]),
        outcome: "done".into(),
        final_f: 0.0,
        features: vec![1.0],
        avoid: false,
        preference_hash: a.preferences().stack_hash(),
    });
    trace.advance_tick();
    a.perceive("at_home", &mut trace).unwrap();
    assert_eq!(a.select_mode(&mut trace).unwrap(), Mode::Habitual);
    let out = a.plan(&mut trace).unwrap();
    assert_eq!(out.next_action.as_deref(), Some("go"));
    assert_eq!(count(&trace, "EfeEvaluated"), 0);
}

#[test]
fn definition_round_trip() {
    let doc = ModelDocument::from_model(&walker(true));
    let def = AgentDefinition {
        id: "w".into(),
        role: "walker".into(),
        model: doc,
        preference_stack: vec![PreferenceLayer {
            fragment: PreferenceFragment::new([("at_home".to_string(), 1.0)], 0.5),
            provenance: "config".into(),
        }],
        budget: Some(ComplexityBudget::new(3, 9)),
        config: AgentConfig::default(),
        capabilities: vec!["walk".into()],
    };
    let text = serde_json::to_string(&def).unwrap();
    let agent = AgentDefinition::from_json(&text).unwrap().build().unwrap();
    assert_eq!(agent.preferences().layers().len(), 2);
    assert!(agent.model().preferences().hard_constraints().contains("at_goal"));
    assert_eq!(agent.budget.max_reasoning_units, 9);
}
