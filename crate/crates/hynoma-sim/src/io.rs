//! Scenario and codebook files: JSON schemas, bundled assets, loaders.
//!
//! Assets under `assets/` are generated by `cargo run --example dump_assets`
//! and compiled in, so the CLI runs without any input files.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hynoma_core::noma::ScmaCodebook;
use hynoma_core::scenario::ScenarioConfig;
use hynoma_core::{c64, CVec};

/// Reference cell scenario, as shipped.
pub const DEFAULT_SCENARIO_JSON: &str = include_str!("../assets/default_scenario.json");
/// Six-user sparse codebook, as shipped.
pub const SCMA_CODEBOOK_JSON: &str = include_str!("../assets/scma_codebook.json");
/// Three-user toy codebook used by the exhaustive decoder checks.
pub const TOY_CODEBOOK_JSON: &str = include_str!("../assets/toy_codebook.json");

/// Parses a scenario, applies defaults and validates it.
pub fn parse_scenario(json: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(json).context("parsing scenario json")?;
    let cfg = cfg.normalized();
    cfg.validate().map_err(anyhow::Error::new)?;
    Ok(cfg)
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("in {}", path.display()))
}

/// Canonical JSON for a scenario.
pub fn scenario_json_string(cfg: &ScenarioConfig) -> Result<String> {
    let mut s = serde_json::to_string_pretty(cfg)?;
    s.push('\n');
    Ok(s)
}

/// The bundled reference cell.
pub fn bundled_scenario() -> ScenarioConfig {
    parse_scenario(DEFAULT_SCENARIO_JSON).expect("bundled scenario parses")
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    code_length: usize,
    alphabet_size: usize,
    /// `codewords[user][symbol][chip] = [re, im]`
    codewords: Vec<Vec<Vec<[f64; 2]>>>,
}

/// Parses a sparse codebook from its JSON schema.
pub fn parse_codebook(json: &str) -> Result<ScmaCodebook> {
    let file: CodebookFile = serde_json::from_str(json).context("parsing codebook json")?;
    let codewords: Vec<Vec<CVec>> = file
        .codewords
        .iter()
        .map(|user| {
            user.iter()
                .map(|symbol| {
                    CVec::from_iterator(symbol.len(), symbol.iter().map(|c| c64(c[0], c[1])))
                })
                .collect()
        })
        .collect();
    let cb = ScmaCodebook::new(codewords).map_err(anyhow::Error::new)?;
    anyhow::ensure!(
        cb.code_length() == file.code_length,
        "codeword length {} != declared code_length {}",
        cb.code_length(),
        file.code_length
    );
    anyhow::ensure!(
        cb.alphabet() == file.alphabet_size,
        "codeword count {} != declared alphabet_size {}",
        cb.alphabet(),
        file.alphabet_size
    );
    Ok(cb)
}

/// Loads a sparse codebook file.
pub fn load_codebook(path: &Path) -> Result<ScmaCodebook> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading codebook {}", path.display()))?;
    parse_codebook(&text).with_context(|| format!("in {}", path.display()))
}

/// Canonical JSON for a codebook.
pub fn codebook_json_string(cb: &ScmaCodebook) -> Result<String> {
    let file = CodebookFile {
        code_length: cb.code_length(),
        alphabet_size: cb.alphabet(),
        codewords: (0..cb.users())
            .map(|u| {
                (0..cb.alphabet())
                    .map(|m| {
                        (0..cb.code_length())
                            .map(|r| {
                                let c = cb.chip(u, m, r);
                                [c.re, c.im]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

/// The bundled six-user codebook.
pub fn bundled_codebook() -> ScmaCodebook {
    parse_codebook(SCMA_CODEBOOK_JSON).expect("bundled codebook parses")
}

/// The bundled toy codebook.
pub fn toy_codebook() -> ScmaCodebook {
    parse_codebook(TOY_CODEBOOK_JSON).expect("toy codebook parses")
}
