//! One agent driven by hand through perceive, mode selection, plan, act and
//! consolidate, with its working and episodic memory afterwards.

use aif_core::agent::ComplexityBudget;
use aif_core::harness::tmaze::{tmaze_agent, TMazeEnv, TMazeParams};
use aif_core::harness::Side;
use aif_core::hierarchy::Pathway;
use aif_core::trace::TraceLog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = TMazeParams::default();
    let mut agent = tmaze_agent("forager", 0.5, &params)?;
    let mut env = TMazeEnv::new(3, params).with_side(Side::Right);
    let mut trace = TraceLog::new();
    agent.announce(&mut trace);

    for episode in 0..3 {
        agent.begin_task(&format!("episode-{episode}"), vec![1.0], Some(ComplexityBudget::new(8, 64)), &mut trace);
        let mut observation = env.reset();
        while !env.finished() {
            trace.advance_tick();
            let p = agent.perceive(&observation, &mut trace)?;
            let plan = agent.plan(&mut trace)?;
            let Some(action) = plan.next_action.clone() else { break };
            println!(
                "ep {episode} saw {:<14} F {:>7.3} mode {:<13} -> {action} ({} policies scored)",
                observation,
                p.report.f_form1,
                format!("{:?}", plan.mode),
                plan.reports.len()
            );
            agent.act(&action, Pathway::DirectExecution, &mut trace)?;
            observation = env.step(&action)?;
        }
        trace.advance_tick();
        agent.perceive(&observation, &mut trace)?;
        let success = observation.ends_with("_reward") && !observation.ends_with("no_reward");
        let c = agent.consolidate(&observation, success, &mut trace);
        println!("ep {episode} outcome {observation}; episode stored at {:?}", c.written);
    }
    println!("working memory {} entries, episodic memory {} episodes", agent.working.len(), agent.episodic.len());
    println!("{} trace events", trace.len());
    Ok(())
}
