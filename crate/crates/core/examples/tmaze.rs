//! A T-maze forager: with an uncertain reward side it visits the cue
//! first; with a confident prior it heads straight for the arm.

use aif_core::harness::tmaze::{run_tmaze, tmaze_agent, TMazeParams};
use aif_core::trace::TraceLog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for prior_left in [0.5, 0.99] {
        let agent = tmaze_agent("forager", prior_left, &TMazeParams::default())?;
        let mut trace = TraceLog::new();
        let episodes = run_tmaze(agent, 6, 7, &mut trace)?;
        println!("prior P(reward left) = {prior_left}");
        for e in &episodes {
            println!(
                "  episode {} reward {:<5} moves {:<22} outcome {}",
                e.episode,
                e.reward_side.name(),
                e.moves.join(" "),
                e.outcome.as_deref().unwrap_or("-")
            );
        }
        println!("  {} trace events", trace.len());
    }
    Ok(())
}
