//! Reasoning through an OpenAI-compatible chat endpoint configured from
//! AIF_PROVIDER_ENDPOINT, AIF_PROVIDER_MODEL and AIF_PROVIDER_TOKEN. When the
//! endpoint is missing or unreachable, the fallback wrapper answers from the
//! tabular library instead.

use aif_core::harness::{generate_tasks, Family};
use aif_core::reasoning::{ExternalConfig, ExternalProvider, FallbackProvider, ReasoningProvider, TabularProvider, TaskContext};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExternalConfig::load(None)?;
    println!("endpoint: {}", if config.endpoint.is_empty() { "(unset)" } else { &config.endpoint });
    let primary: Box<dyn ReasoningProvider> = match ExternalProvider::new(config) {
        Ok(external) => {
            if let Err(e) = external.probe() {
                println!("probe failed: {e}");
            }
            Box::new(external)
        }
        Err(e) => {
            println!("external provider unavailable: {e}");
            Box::new(TabularProvider::default())
        }
    };
    let mut provider = FallbackProvider::new(primary, TabularProvider::default());

    let task = &generate_tasks(Family::Rotate90, 1, 5)?[0];
    let context = TaskContext { task_id: task.id.clone(), examples: task.train.clone(), features: task.tags(), retrieved: vec![] };
    for h in provider.propose_hypotheses(&context)? {
        println!("hypothesis {:<10} {}", h.key, h.annotation);
    }
    if let Some(reason) = provider.degraded() {
        println!("answered by the tabular library: {reason}");
    }
    println!("units used: {}", provider.units_used());
    Ok(())
}
