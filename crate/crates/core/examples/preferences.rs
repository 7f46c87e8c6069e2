//! Layered preferences: layer 0 is fixed at spawn, mutable layers and
//! top-down flows reshape the effective preferences but never lift the
//! protected constraints.

use aif_core::agent::{PreferenceFragment, PreferenceLayer, PreferenceStack};
use aif_core::generative::PreferenceModel;
use aif_core::hierarchy::compose_preferences;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels: Vec<String> = ["tidy", "messy", "grader_modified"].map(String::from).to_vec();
    let seed = PreferenceModel::new(labels, vec![1.0, 0.0, 0.0], ["grader_modified".to_string()].into(), vec![], 1.0)?;
    let mut stack = PreferenceStack::from_seed(&seed);
    println!("layer 0 hash {}", &stack.layer0_hash()[..16]);

    let refused = stack.write_layer(0, PreferenceLayer { fragment: PreferenceFragment::default(), provenance: "anyone".into() });
    println!("write to layer 0: {}", refused.unwrap_err());

    let fragment = PreferenceFragment::new([("messy".to_string(), 2.5)], 1.0);
    stack.write_layer(1, PreferenceLayer { fragment, provenance: "operator".into() })?;
    println!("after layer 1: {:?}", stack.effective().preferred_outcomes().probs());

    let mut flow = PreferenceFragment::new([("grader_modified".to_string(), 50.0)], 10.0);
    flow.lift_constraints.insert("grader_modified".into());
    let composed = compose_preferences(&flow, &stack)?;
    println!("flow tries to lift the constraint; forbidden set is still {:?}", composed.hard_constraints());
    println!("layer 0 hash unchanged: {}", stack.layer0_hash() == stack.spawn_hash());
    Ok(())
}
