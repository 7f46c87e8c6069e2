//! Generative models round-trip through a JSON document carrying the
//! matrices and their annotations. Invalid documents are rejected with the
//! offending part named.

use aif_core::generative::ModelDocument;
use aif_core::harness::tmaze::{tmaze_model, TMazeParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = tmaze_model(0.5, &TMazeParams::default())?;
    let text = serde_json::to_string_pretty(&ModelDocument::from_model(&model))?;
    println!("{}", text.lines().take(24).collect::<Vec<_>>().join("\n"));
    println!("... ({} lines)", text.lines().count());

    let back = ModelDocument::from_json(&text)?;
    println!("round trip identical: {}", back == model);

    let mut doc: serde_json::Value = serde_json::from_str(&text)?;
    doc["D"] = serde_json::json!([1.0, -1.0, 0, 0, 0, 0, 0, 0]);
    match ModelDocument::from_json(&doc.to_string()) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
