//! Synthetic grid tasks solved by a root agent delegating to workers that
//! test library rules. Families outside the library end as explicit
//! plateau or postponed records instead of guesses.

use aif_core::harness::grid::render;
use aif_core::harness::{generate_suite, solve_task, Family, GridHierarchy, SolveParams, TopologySpec};
use aif_core::reasoning::{FallbackProvider, TabularProvider};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let withheld = vec![Family::ColorMap.key().to_string()];
    let keys: Vec<String> = Family::ALL.iter().map(|f| f.key().to_string()).filter(|k| !withheld.contains(k)).collect();
    let provider = FallbackProvider::new(Box::new(TabularProvider::withholding(&withheld)), TabularProvider::default());
    let mut h = GridHierarchy::new(&TopologySpec::default(), keys, provider, SolveParams::default())?;

    let tasks = generate_suite(&Family::ALL, 2, 11)?;
    println!("example input / output for {}:", tasks[0].id);
    println!("{}\n{}", render(&tasks[0].train[0].input), render(&tasks[0].train[0].output));
    for task in &tasks {
        let r = solve_task(&mut h, task)?;
        println!(
            "{:<18} family {:<10} {:?} correct={:?} cycles {} units {}",
            r.task_id, r.family, r.status, r.correct, r.cycles, r.units
        );
    }
    for (agent, e) in h.ledger.entries() {
        println!("ledger {agent}: ewma {:.4} over {} tasks", e.ewma, e.task_count);
    }
    Ok(())
}
