//! Message passing across Markov blankets: parent/child edges, shared
//! topics and explicit approvals authorize delivery; anything else is
//! refused and logged. Reputation then steers resource allocation.

use aif_core::hierarchy::{allocate_resources, AllocationParams, BlanketTopology, Draft, MessageBus, Payload, ReputationLedger};
use aif_core::trace::TraceLog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut topology = BlanketTopology::new();
    let mut bus = MessageBus::new();
    let mut trace = TraceLog::new();
    topology.add_root("root")?;
    for (parent, child) in [("root", "planner"), ("root", "critic"), ("planner", "w0"), ("planner", "w1")] {
        topology.add_child(parent, child)?;
    }
    topology.register_topic("grids", "root")?;
    topology.subscribe("grids", "planner")?;
    topology.subscribe("grids", "critic")?;

    let note = |text: &str| Payload::Trace { note: text.into() };
    let drafts = [
        Draft::to_agent("planner", "w0", note("parent to child")),
        Draft::to_topic("planner", "grids", note("topic broadcast")),
        Draft::to_agent("w0", "critic", note("nephew to uncle")),
        Draft::to_agent("w0", "w1", note("siblings, no approval")),
    ];
    for d in drafts {
        for r in bus.publish(&mut topology, d, &mut trace)? {
            println!("message {} to {:<7} delivered={} via {:?}", r.message_id, r.receiver, r.delivered, r.authorization);
        }
    }
    let approval = Draft::to_agent("planner", "w0", Payload::Approval { sender: "w0".into(), receiver: "w1".into() });
    let id = bus.publish(&mut topology, approval, &mut trace)?[0].message_id;
    let mut approved = Draft::to_agent("w0", "w1", note("siblings, approved"));
    approved.provenance = vec![id];
    for r in bus.publish(&mut topology, approved, &mut trace)? {
        println!("message {} to {:<7} delivered={} via {:?}", r.message_id, r.receiver, r.delivered, r.authorization);
    }

    let mut ledger = ReputationLedger::default();
    for (tick, (agent, f)) in [("w0", 0.2), ("w1", 2.4), ("w0", 0.1), ("w1", 1.9)].into_iter().enumerate() {
        let e = ledger.record(agent, f, tick as u64);
        println!("ledger {agent}: reported F {f:.1}, ewma {:.3}", e.ewma);
    }
    let candidates = vec!["w0".to_string(), "w1".to_string()];
    let shares = allocate_resources(&ledger, &candidates, 100, &AllocationParams::default());
    println!("budget shares for 100 units: {shares:?}");
    println!("single-rooted forest: {}", topology.is_forest_with_single_root());
    Ok(())
}
