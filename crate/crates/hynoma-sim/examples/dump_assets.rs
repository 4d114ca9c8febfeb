//! Regenerates the JSON assets bundled into the crate.
//!
//! Run from the workspace root after changing the reference scenario or the
//! built-in codebooks: `cargo run -p hynoma-sim --example dump_assets`.

use std::path::PathBuf;

use hynoma_core::noma::ScmaCodebook;
use hynoma_core::scenario::ScenarioConfig;
use hynoma_sim::io::{codebook_json_string, scenario_json_string};

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets");
    std::fs::create_dir_all(&dir)?;

    let scenario = scenario_json_string(&ScenarioConfig::reference_cell())?;
    std::fs::write(dir.join("default_scenario.json"), scenario)?;

    let bundled = codebook_json_string(&ScmaCodebook::bundled())?;
    std::fs::write(dir.join("scma_codebook.json"), bundled)?;

    let toy = codebook_json_string(&ScmaCodebook::toy_tree())?;
    std::fs::write(dir.join("toy_codebook.json"), toy)?;

    println!("assets written to {}", dir.display());
    Ok(())
}
