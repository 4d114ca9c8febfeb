//! Regenerates `tests/golden/mini.csv`, the frozen output the acceptance
//! suite compares against byte for byte. Run after any intentional change
//! to the record pipeline:
//!
//! ```text
//! cargo run -p hynoma-sim --example freeze_golden
//! ```
//!
//! The experiment built here must stay in sync with `mini_spec` in
//! `tests/acceptance.rs`.

use std::path::Path;

use hynoma_sim::emit::csv_string;
use hynoma_sim::harness::{run, ExperimentSpec, Metric, Receiver, Sweep};

fn main() -> anyhow::Result<()> {
    let json = r#"{
        "antennas": 8,
        "total_delays": 3,
        "code_length": 2,
        "trials": 2,
        "seed": 1,
        "groups": [
            {"users": 2, "rf_chains": 2,
             "mpcs": [
                {"delay_index": 0, "sector_deg": [-6.0, 6.0]},
                {"delay_index": 2, "sector_deg": [10.0, 20.0]}
             ]}
        ]
    }"#;
    let cfg: hynoma_core::scenario::ScenarioConfig = serde_json::from_str(json)?;
    let mut spec = ExperimentSpec::new(cfg.normalized(), Sweep::EbDb(vec![0.0, 10.0]));
    spec.receivers = vec![Receiver::MusaMmseSic, Receiver::Mfb];
    spec.metrics = vec![Metric::Ber, Metric::Air];
    spec.budget = 1000;

    let records = run(&spec)?;
    let csv = csv_string(&records)?;
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mini.csv");
    std::fs::write(&path, &csv)?;
    println!("wrote {} ({} records)", path.display(), records.len());
    Ok(())
}
