//! Runs a scenario, audits its trace, then audits two corrupted copies:
//! one with a forged cross-blanket delivery and one with a tampered
//! layer-0 hash.

use aif_core::runtime::{audit_records, inject_forged_delivery, run_experiment, tamper_layer0, RunConfig, Scenario};
use aif_core::trace::parse_jsonl;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("aif-audit-example");
    let config = RunConfig { scenario: Scenario::Arclite, count: 6, withheld_count: 2, output: dir.clone(), ..RunConfig::default() };
    let outcome = run_experiment(&config)?;
    println!("{}", outcome.metrics.to_table());

    let text = std::fs::read_to_string(dir.join("trace.jsonl"))?;
    let records = parse_jsonl(&text).map_err(|(line, e)| format!("line {line}: {e}"))?;
    let root = records.first().map(|r| r.agent_id.clone()).unwrap_or_default();
    println!("clean trace:\n{}", audit_records(&records)?.to_text());

    let stranger = "unregistered";
    println!("forged delivery:\n{}", audit_records(&inject_forged_delivery(&records, &root, stranger))?.to_text());
    println!("tampered layer 0:\n{}", audit_records(&tamper_layer0(&records, &root))?.to_text());
    Ok(())
}
