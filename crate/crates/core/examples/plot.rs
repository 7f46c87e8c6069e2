//! Free-energy trajectories of a T-maze run rendered to SVG.

use aif_core::runtime::{render_svg, run_experiment, series_from_trace, RunConfig, Scenario};
use aif_core::trace::parse_jsonl;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("aif-plot-example");
    let config = RunConfig { output: dir.clone(), ..RunConfig::for_scenario(Scenario::Corrigibility) };
    run_experiment(&config)?;
    let text = std::fs::read_to_string(dir.join("trace.jsonl"))?;
    let records = parse_jsonl(&text).map_err(|(line, e)| format!("line {line}: {e}"))?;
    let series = series_from_trace(&records);
    for s in &series {
        println!("{:<10} {} points", s.label, s.points.len());
    }
    let out = dir.join("fe.svg");
    std::fs::write(&out, render_svg("T-maze free energy", &series, 960, 480))?;
    println!("wrote {}", out.display());
    Ok(())
}
