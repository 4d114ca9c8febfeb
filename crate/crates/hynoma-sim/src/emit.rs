//! Result serialization: CSV with a stable column order, JSON mirrors, and
//! grouped per-metric output files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use crate::harness::ResultRecord;

/// Column order every CSV emission uses.
pub const CSV_HEADER: &str = "sweep,receiver,metric,mean,stderr,n,clamps,config_hash,seed";

/// Renders records as CSV. Floats use the shortest round-trip form, so
/// parsing the output reproduces the records bit for bit.
pub fn csv_string(records: &[ResultRecord]) -> Result<String> {
    ensure!(!records.is_empty(), "refusing to emit an empty record set");
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        ensure!(!r.receiver.contains(','), "receiver label {:?} breaks csv", r.receiver);
        ensure!(!r.metric.contains(','), "metric label {:?} breaks csv", r.metric);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.sweep, r.receiver, r.metric, r.mean, r.stderr, r.n, r.clamps, r.config_hash, r.seed
        ));
    }
    Ok(out)
}

/// Parses CSV produced by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty csv")?;
    ensure!(header == CSV_HEADER, "unexpected header {header:?}");
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        ensure!(fields.len() == 9, "line {}: expected 9 fields, got {}", i + 2, fields.len());
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().with_context(|| format!("line {}: bad {what} {s:?}", i + 2))
        };
        let parse_u = |s: &str, what: &str| -> Result<u64> {
            s.parse().with_context(|| format!("line {}: bad {what} {s:?}", i + 2))
        };
        records.push(ResultRecord {
            sweep: parse_f(fields[0], "sweep")?,
            receiver: fields[1].to_string(),
            metric: fields[2].to_string(),
            mean: parse_f(fields[3], "mean")?,
            stderr: parse_f(fields[4], "stderr")?,
            n: parse_u(fields[5], "n")?,
            clamps: parse_u(fields[6], "clamps")?,
            config_hash: fields[7].to_string(),
            seed: parse_u(fields[8], "seed")?,
        });
    }
    ensure!(!records.is_empty(), "csv had no data rows");
    Ok(records)
}

/// Renders records as pretty JSON.
pub fn json_string(records: &[ResultRecord]) -> Result<String> {
    ensure!(!records.is_empty(), "refusing to emit an empty record set");
    let mut s = serde_json::to_string_pretty(records)?;
    s.push('\n');
    Ok(s)
}

fn metric_file_stem(metric: &str) -> Result<&'static str> {
    match metric {
        "ber" => Ok("ber"),
        "air" | "air-group" => Ok("air"),
        other => bail!("unknown metric {other:?}"),
    }
}

/// Writes one CSV and one JSON file per metric family under `dir` and
/// returns the paths written. Record order within a file follows the input.
pub fn write_outputs(records: &[ResultRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    ensure!(!records.is_empty(), "refusing to emit an empty record set");
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut stems = Vec::new();
    for r in records {
        let stem = metric_file_stem(&r.metric)?;
        if !stems.contains(&stem) {
            stems.push(stem);
        }
    }
    let mut written = Vec::new();
    for stem in stems {
        let group: Vec<ResultRecord> = records
            .iter()
            .filter(|r| metric_file_stem(&r.metric).map(|s| s == stem).unwrap_or(false))
            .cloned()
            .collect();
        let csv_path = dir.join(format!("{stem}.csv"));
        fs::write(&csv_path, csv_string(&group)?)
            .with_context(|| format!("writing {}", csv_path.display()))?;
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&json_path, json_string(&group)?)
            .with_context(|| format!("writing {}", json_path.display()))?;
        written.push(csv_path);
        written.push(json_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<ResultRecord> {
        vec![
            ResultRecord {
                sweep: 0.0,
                receiver: "musa-mmse-sic".into(),
                metric: "ber".into(),
                mean: 0.1234567890123,
                stderr: 0.00125,
                n: 4000,
                clamps: 0,
                config_hash: "00ff00ff00ff00ff".into(),
                seed: 42,
            },
            ResultRecord {
                sweep: 10.0,
                receiver: "mfb".into(),
                metric: "air".into(),
                mean: 0.499999999999,
                stderr: 1e-7,
                n: 2000,
                clamps: 3,
                config_hash: "00ff00ff00ff00ff".into(),
                seed: 42,
            },
            ResultRecord {
                sweep: 10.0,
                receiver: "mfb".into(),
                metric: "air-group".into(),
                mean: 2.999999999994,
                stderr: 6e-7,
                n: 2000,
                clamps: 3,
                config_hash: "00ff00ff00ff00ff".into(),
                seed: 42,
            },
        ]
    }

    #[test]
    fn csv_round_trips_bit_exactly() {
        let records = sample_records();
        let text = csv_string(&records).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, records);
        assert_eq!(csv_string(&back).unwrap(), text);
    }

    #[test]
    fn empty_sets_are_errors() {
        assert!(csv_string(&[]).is_err());
        assert!(json_string(&[]).is_err());
        let dir = std::env::temp_dir().join("hynoma-emit-empty");
        assert!(write_outputs(&[], &dir).is_err());
    }

    #[test]
    fn json_round_trips() {
        let records = sample_records();
        let text = json_string(&records).unwrap();
        let back: Vec<ResultRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn outputs_split_by_metric_family() {
        let records = sample_records();
        let dir = std::env::temp_dir().join(format!("hynoma-emit-{}", std::process::id()));
        let written = write_outputs(&records, &dir).unwrap();
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["ber.csv", "ber.json", "air.csv", "air.json"]);
        let air = parse_csv(&std::fs::read_to_string(dir.join("air.csv")).unwrap()).unwrap();
        assert_eq!(air.len(), 2);
        assert!(air.iter().any(|r| r.metric == "air-group"));
        let ber = parse_csv(&std::fs::read_to_string(dir.join("ber.csv")).unwrap()).unwrap();
        assert_eq!(ber.len(), 1);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("bad,header\n").is_err());
        let text = format!("{CSV_HEADER}\n1,a,ber,nope,0,1,0,h,1\n");
        assert!(parse_csv(&text).is_err());
        let text = format!("{CSV_HEADER}\n");
        assert!(parse_csv(&text).is_err());
    }
}
