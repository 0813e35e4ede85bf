//! Atomic output files. CSV files carry the resolved config as a leading
//! `# config: {...}` comment; JSON files wrap results as
//! `{"config": ..., "result": ...}`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use charblow::{Error, Result};

use crate::config::RunConfig;

pub const CSV_CONFIG_PREFIX: &str = "# config: ";

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a RunConfig,
    result: &'a T,
}

pub fn json_string<T: Serialize>(config: &RunConfig, result: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Envelope { config, result })?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, config: &RunConfig, result: &T) -> Result<()> {
    write_atomic(path, json_string(config, result)?.as_bytes())
}

/// CSV text with the config comment line in front.
pub fn csv_string(config: &RunConfig, header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(charblow::Error::from)?;
    for r in rows {
        w.write_record(r).map_err(charblow::Error::from)?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut out = format!("{CSV_CONFIG_PREFIX}{}\n", serde_json::to_string(config)?);
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn write_csv(path: &Path, config: &RunConfig, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, csv_string(config, header, rows)?.as_bytes())
}

/// Recovers the config echoed into a CSV or JSON output file.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    if let Some(rest) = text.strip_prefix(CSV_CONFIG_PREFIX) {
        let line = rest.lines().next().unwrap_or("");
        return Ok(serde_json::from_str(line)?);
    }
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let cfg = v
        .get("config")
        .ok_or_else(|| Error::Config(format!("{} has no config echo", path.display())))?;
    Ok(serde_json::from_value(cfg.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Command;

    #[test]
    fn csv_and_json_round_trip_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default_for(Command::Data);
        cfg.eps = vec![0.0125, 0.1];
        cfg.params.insert("beta".into(), 0.25);
        let csv_path = dir.path().join("a.csv");
        write_csv(&csv_path, &cfg, &["x".to_string()], &[vec!["1".to_string()]]).unwrap();
        assert_eq!(read_config(&csv_path).unwrap(), cfg);
        let json_path = dir.path().join("a.json");
        write_json(&json_path, &cfg, &vec![1.0, 2.0]).unwrap();
        assert_eq!(read_config(&json_path).unwrap(), cfg);
    }
}
