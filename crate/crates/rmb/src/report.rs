//! Machine-readable outputs: the JSON report envelope shared by every
//! verification subcommand, and the fixed CSV schemas for paths and
//! posterior trajectories.
//!
//! Reports are deterministic for a fixed (config, seed) except for the
//! single `wall_clock_ms` field; determinism checks compare outputs with
//! that field masked.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bridge::RmbPath;
use crate::error::Result;
use crate::statespace::{Posterior, State};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One named check with its value, threshold, and verdict.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    /// value must be <= threshold
    pub fn upper(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    /// value must be >= threshold
    pub fn lower(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }

    pub fn boolean(name: impl Into<String>, pass: bool) -> Self {
        Check {
            name: name.into(),
            value: if pass { 1.0 } else { 0.0 },
            threshold: 1.0,
            pass,
        }
    }
}

/// The report envelope written by every verification subcommand.
#[derive(Clone, Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_clock_ms: u128,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(
        config_hash: &str,
        seed: u64,
        wall_clock_ms: u128,
        checks: Vec<Check>,
        details: T,
    ) -> Self {
        let passed = checks.iter().all(|c| c.pass);
        Report {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            wall_clock_ms,
            passed,
            checks,
            details,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)
            .map_err(|e| crate::error::RmbError::Io(e.into()))?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

/// SHA-256 of the raw config file bytes, hex-encoded.
pub fn config_hash(config_text: &str) -> String {
    hex::encode(Sha256::digest(config_text.as_bytes()))
}

fn state_columns(prefix: &str, dim: usize, finite: bool) -> Vec<String> {
    if finite || dim == 1 {
        vec![prefix.to_string()]
    } else {
        (0..dim).map(|i| format!("{prefix}_{i}")).collect()
    }
}

fn state_cells(s: &State) -> Vec<String> {
    match s {
        State::Label(i) => vec![format!("{i}")],
        State::Point(v) => v.iter().map(|x| format!("{x}")).collect(),
    }
}

/// CSV schema v1 for paths: path_id, t, value components, hidden pin.
/// `meta` is written verbatim as the first line and should carry the
/// config hash and seed.
pub fn write_paths_csv(path: &Path, meta: &str, paths: &[RmbPath]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{meta}")?;
    if let Some(first) = paths.first() {
        let finite = matches!(first.values[0], State::Label(_));
        let dim = state_cells(&first.values[0]).len();
        let mut header = vec!["path_id".to_string(), "t".to_string()];
        header.extend(state_columns("z", dim, finite));
        header.extend(state_columns("x_pin", dim, finite));
        writeln!(out, "{}", header.join(","))?;
        for (id, p) in paths.iter().enumerate() {
            let pin_cells = state_cells(&p.hidden_pin).join(",");
            for (t, v) in p.grid.iter().zip(&p.values) {
                writeln!(out, "{id},{t},{},{pin_cells}", state_cells(v).join(","))?;
            }
        }
    } else {
        writeln!(out, "path_id,t,z,x_pin")?;
    }
    Ok(())
}

/// CSV schema v1 for posterior trajectories: t, atom, weight.
pub fn write_posterior_csv(path: &Path, meta: &str, rows: &[(f64, Posterior)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{meta}")?;
    writeln!(out, "t,atom,weight")?;
    for (t, posterior) in rows {
        for (atom, w) in posterior.support().iter().zip(posterior.weights()) {
            writeln!(out, "{t},{atom},{w}")?;
        }
    }
    Ok(())
}

/// CSV schema v1 for price trajectories: t, price.
pub fn write_price_csv(path: &Path, meta: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{meta}")?;
    writeln!(out, "t,price")?;
    for (t, p) in rows {
        writeln!(out, "{t},{p}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable() {
        assert_eq!(config_hash("abc"), config_hash("abc"));
        assert_ne!(config_hash("abc"), config_hash("abd"));
        assert_eq!(config_hash("abc").len(), 64);
    }

    #[test]
    fn checks_and_envelope() {
        let checks = vec![
            Check::upper("residual", 1e-9, 1e-8),
            Check::boolean("not_diverged", true),
        ];
        let rep = Report::new("deadbeef", 7, 12, checks, serde_json::json!({}));
        assert!(rep.passed);
        let failing = Report::new(
            "deadbeef",
            7,
            12,
            vec![Check::upper("residual", 1.0, 1e-8)],
            serde_json::json!({}),
        );
        assert!(!failing.passed);
    }
}
