mod common;

use std::collections::BTreeSet;

use aif_core::agent::{select_mode, EpisodicMemory, Episode, PreferenceFragment, PreferenceLayer, PreferenceStack, WorkingEntry, WorkingMemory};
use aif_core::generative::{compute_efe, compute_vfe, rank_policies, CategoricalDist, FreeEnergyReport, Policy, RankedPolicy};
use aif_core::harness::{compute_metrics, generate_tasks, Family};
use aif_core::hierarchy::{allocate_resources, compose_preferences, AllocationParams, BlanketTopology, ReputationLedger};
use aif_core::reasoning::{ReasoningProvider, ReportRef, TabularProvider, TaskContext};
use aif_core::runtime::{RunConfig, Scenario, Session};
use aif_core::trace::{Event, TraceLog};
use aif_core::generative::PreferenceModel;
use common::{efe_reference, labels, posterior, random_weights, vfe_definition, RawModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_policy(rng: &mut impl Rng, raw: &RawModel, id: usize) -> (Policy, Vec<usize>) {
    let len = rng.gen_range(1..=3);
    let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..raw.actions())).collect();
    (Policy { id, actions: idx.iter().map(|u| format!("u{u}")).collect() }, idx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn vfe_forms_agree_with_the_definition(seed in any::<u64>()) {
        let mut r = rng(seed);
        let raw = RawModel::random(&mut r);
        let model = raw.build();
        let q = random_weights(&mut r, raw.states());
        let o = r.gen_range(0..raw.observations());
        let qd = CategoricalDist::new(labels("s", raw.states()), q.clone()).unwrap();
        let rep = compute_vfe(&qd, &model, &format!("o{o}")).unwrap();
        prop_assert!((rep.f_form1 - rep.f_form2).abs() <= TOL);
        prop_assert!(rep.consensus);
        prop_assert!((rep.f_form1 - vfe_definition(&q, &raw, o)).abs() <= TOL);
        prop_assert!(rep.complexity >= -1e-12);
        prop_assert!(rep.belief_divergence >= -1e-12);
    }

    #[test]
    fn posterior_minimizes_vfe_at_the_surprise(seed in any::<u64>()) {
        let mut r = rng(seed);
        let raw = RawModel::random(&mut r);
        let model = raw.build();
        let o = r.gen_range(0..raw.observations());
        let obs = format!("o{o}");
        let post = CategoricalDist::new(labels("s", raw.states()), posterior(&raw, o)).unwrap();
        let at_post = compute_vfe(&post, &model, &obs).unwrap();
        let surprise = -common::evidence(&raw, o).ln();
        prop_assert!((at_post.f_form1 - surprise).abs() <= TOL);
        for _ in 0..32 {
            let q = CategoricalDist::new(labels("s", raw.states()), random_weights(&mut r, raw.states())).unwrap();
            prop_assert!(at_post.f_form1 <= compute_vfe(&q, &model, &obs).unwrap().f_form1 + TOL);
        }
    }

    #[test]
    fn efe_forms_agree_with_the_reference(seed in any::<u64>()) {
        let mut r = rng(seed);
        let raw = RawModel::random(&mut r);
        let model = raw.build();
        let belief = random_weights(&mut r, raw.states());
        let (policy, idx) = random_policy(&mut r, &raw, 0);
        let q = CategoricalDist::new(labels("s", raw.states()), belief.clone()).unwrap();
        let rep = compute_efe(&policy, &model, &q).unwrap();
        let (g1, g2) = efe_reference(&raw, &belief, &idx);
        prop_assert!((rep.g_form1 - rep.g_form2).abs() <= TOL);
        prop_assert!((rep.g_form1 - g1).abs() <= TOL);
        prop_assert!((rep.g_form2 - g2).abs() <= TOL);
        for step in &rep.steps {
            prop_assert!(step.info_gain >= -1e-12);
            prop_assert!(step.ambiguity >= -1e-12);
        }
    }

    #[test]
    fn ranking_ignores_a_shared_pragmatic_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut r = rng(seed);
        let raw = RawModel::random(&mut r);
        let model = raw.build();
        let q = CategoricalDist::new(labels("s", raw.states()), random_weights(&mut r, raw.states())).unwrap();
        let reports: Vec<_> = (0..6)
            .map(|id| compute_efe(&random_policy(&mut r, &raw, id).0, &model, &q).unwrap())
            .collect();
        let base = rank_policies(&reports, false).unwrap();
        let shifted: Vec<_> = reports
            .iter()
            .cloned()
            .map(|mut rep| {
                rep.pragmatic += shift;
                rep.risk -= shift;
                rep.g_form1 -= shift;
                rep.g_form2 -= shift;
                rep
            })
            .collect();
        let g: Vec<f64> = reports.iter().map(|r| r.g_form2).collect();
        // Same order up to ties closer than the consensus tolerance, which
        // rounding after a large shift may merge or split.
        let same_order = |v: &[RankedPolicy]| {
            v.len() == base.len() && v.windows(2).all(|w| g[w[0].policy.id] <= g[w[1].policy.id] + TOL)
        };
        prop_assert!(same_order(&base));
        prop_assert!(same_order(&rank_policies(&shifted, true).unwrap()));

        let mut moved = raw.clone();
        moved.log_pref.iter_mut().for_each(|v| *v += shift);
        let moved_model = moved.build();
        let again: Vec<_> = reports.iter().map(|rep| compute_efe(&rep.policy, &moved_model, &q).unwrap()).collect();
        prop_assert!(same_order(&rank_policies(&again, true).unwrap()));
    }

    #[test]
    fn inference_is_deterministic(seed in any::<u64>()) {
        let build = || {
            let mut r = rng(seed);
            let raw = RawModel::random(&mut r);
            let model = raw.build();
            let q = CategoricalDist::new(labels("s", raw.states()), random_weights(&mut r, raw.states())).unwrap();
            let reports: Vec<_> = (0..4).map(|id| compute_efe(&random_policy(&mut r, &raw, id).0, &model, &q).unwrap()).collect();
            let vfe = compute_vfe(&q, &model, "o0").unwrap();
            serde_json::to_string(&(vfe, &reports, rank_policies(&reports, true).unwrap())).unwrap()
        };
        prop_assert_eq!(build(), build());
    }

    #[test]
    fn memories_respect_capacity_and_growth(capacity in 1usize..16, ops in prop::collection::vec(any::<bool>(), 0..80)) {
        let mut wm = WorkingMemory::new(capacity);
        let mut em = EpisodicMemory::new();
        let mut last = 0;
        for (i, push_working) in ops.into_iter().enumerate() {
            if push_working {
                let report = FreeEnergyReport::maximal_surprise("o");
                wm.push(WorkingEntry { observation: format!("o{i}"), action: None, report });
            } else {
                em.write(Episode {
                    task_id: format!("t{i}"),
                    observations: vec![],
                    actions: vec![],
                    outcome: "ok".into(),
                    final_f: 0.0,
                    features: vec![1.0],
                    avoid: false,
                    preference_hash: String::new(),
                });
            }
            prop_assert!(wm.len() <= capacity);
            prop_assert!(em.len() >= last);
            last = em.len();
        }
    }

    #[test]
    fn flow_down_keeps_protected_constraints(
        forbidden in prop::collection::btree_set(0usize..6, 0..4),
        layers in prop::collection::vec((prop::collection::btree_set(0usize..6, 0..3), prop::collection::btree_set(0usize..6, 0..6), -5.0f64..5.0), 0..4),
        flow_lift in prop::collection::btree_set(0usize..6, 0..6),
        precision in 0.0f64..1e4,
    ) {
        let obs = labels("o", 6);
        let name = |s: &BTreeSet<usize>| s.iter().map(|i| format!("o{i}")).collect::<BTreeSet<String>>();
        let seed = PreferenceModel::new(obs.clone(), vec![0.0; 6], name(&forbidden), vec![], 1.0).unwrap();
        let mut stack = PreferenceStack::from_seed(&seed);
        for (i, (add, lift, v)) in layers.iter().enumerate() {
            let fragment = PreferenceFragment {
                log_pref: obs.iter().map(|o| (o.clone(), *v)).collect(),
                hard_constraints: name(add),
                lift_constraints: name(lift),
                precision: 1.0,
            };
            stack.write_layer(i + 1, PreferenceLayer { fragment, provenance: "test".into() }).unwrap();
        }
        let flow = PreferenceFragment {
            log_pref: obs.iter().map(|o| (o.clone(), 1.0)).collect(),
            lift_constraints: name(&flow_lift),
            precision,
            ..PreferenceFragment::default()
        };
        let out = compose_preferences(&flow, &stack).unwrap();
        prop_assert!(out.hard_constraints().is_superset(&name(&forbidden)));
    }

    #[test]
    fn allocation_is_equivariant_and_exact(
        ewmas in prop::collection::vec(prop::option::of(0.0f64..3.0), 1..8),
        budget in 0u64..500,
        rotate in 0usize..8,
    ) {
        let mut ledger = ReputationLedger::default();
        let candidates = labels("a", ewmas.len());
        for (c, e) in candidates.iter().zip(&ewmas) {
            if let Some(f) = e {
                ledger.record(c, *f, 0);
            }
        }
        let params = AllocationParams::default();
        let shares = allocate_resources(&ledger, &candidates, budget, &params);
        prop_assert_eq!(shares.iter().sum::<u64>(), budget);
        let mut perm = candidates.clone();
        perm.rotate_left(rotate % candidates.len());
        perm.reverse();
        let permuted = allocate_resources(&ledger, &perm, budget, &params);
        for (c, s) in perm.iter().zip(&permuted) {
            let i = candidates.iter().position(|x| x == c).unwrap();
            prop_assert_eq!(*s, shares[i]);
        }
    }

    #[test]
    fn topology_stays_a_single_rooted_forest(ops in prop::collection::vec((0u8..3, any::<u16>(), any::<bool>()), 1..60)) {
        let mut t = BlanketTopology::new();
        t.add_root("a0").unwrap();
        let mut next = 1;
        for (op, pick, with_heir) in ops {
            let active: Vec<String> = t.agents().cloned().collect();
            let target = active[pick as usize % active.len()].clone();
            let fresh = format!("a{next}");
            next += 1;
            let _ = match op {
                0 | 1 => t.add_child(&target, &fresh),
                _ => t.retire(&target, with_heir.then_some(fresh.as_str())),
            };
            prop_assert!(t.is_forest_with_single_root());
            prop_assert!(t.agents().all(|a| !t.is_retired(a)));
        }
    }

    #[test]
    fn ledger_replay_reproduces_ewma(reports in prop::collection::vec((0usize..4, 0.0f64..10.0), 1..60)) {
        let mut ledger = ReputationLedger::default();
        let mut trace = TraceLog::new();
        for (agent, f) in reports {
            let id = format!("w{agent}");
            trace.advance_tick();
            let e = ledger.record(&id, f, trace.tick()).clone();
            trace.emit("root", Event::LedgerUpdate { subject: id, reported_f: f, ewma: e.ewma, task_count: e.task_count });
        }
        let replayed = ReputationLedger::replay(trace.records(), aif_core::hierarchy::reputation::DEFAULT_DECAY);
        prop_assert_eq!(replayed.entries(), ledger.entries());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_tasks_follow_their_family(family in 0usize..6, seed in any::<u64>()) {
        let family = Family::ALL[family];
        for task in generate_tasks(family, 3, seed).unwrap() {
            prop_assert!(family.explains(&task.train));
            for pair in task.train.iter().chain(&task.test) {
                let predicted = family.predict(&task.train, &pair.input);
                prop_assert_eq!(predicted.as_ref(), Some(&pair.output));
            }
        }
    }

    #[test]
    fn tabular_provider_is_byte_identical(family in 0usize..6, seed in any::<u64>()) {
        let task = &generate_tasks(Family::ALL[family], 1, seed).unwrap()[0];
        let ctx = TaskContext { task_id: task.id.clone(), examples: task.train.clone(), features: task.tags(), retrieved: vec![] };
        let mut rng = rng(seed);
        let raw = RawModel::random(&mut rng);
        let q = CategoricalDist::new(labels("s", raw.states()), random_weights(&mut rng, raw.states())).unwrap();
        let report = compute_vfe(&q, &raw.build(), "o0").unwrap();
        let run = || {
            let mut p = TabularProvider::default();
            let h = p.propose_hypotheses(&ctx).unwrap();
            let i = p.interpret_report(ReportRef::Vfe(&report)).unwrap();
            let v = p.check_consensus(&i.narrative_form1, &i.narrative_form2).unwrap();
            serde_json::to_string(&(h, i, v, p.units_used())).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metrics_and_modes_replay_identically(seed in 0u64..1000, scenario in 0usize..3) {
        let scenario = [Scenario::Tmaze, Scenario::Corrigibility, Scenario::Arclite][scenario];
        let config = RunConfig { seed, episodes: 4, count: 4, ..RunConfig::for_scenario(scenario) };
        let mut session = Session::new(config).unwrap();
        while !session.is_finished() {
            session.step().unwrap();
        }
        let records = session.trace().records();
        prop_assert_eq!(compute_metrics(records).unwrap(), compute_metrics(records).unwrap());
        for r in records {
            if let Event::ModeSelected(d) = &r.event {
                prop_assert_eq!(select_mode(&d.inputs, &d.thresholds), d.mode);
            }
        }
    }
}
