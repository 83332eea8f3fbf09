//! Run reports: the resolved configuration, input digests, warnings and
//! results of one command. Reports carry no timestamps, so a re-run with the
//! same configuration writes the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA: &str = "raterkit.report/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub schema: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub warnings: Vec<String>,
    pub results: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

impl RunReport {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunReport {
            tool: "raterkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema: REPORT_SCHEMA.into(),
            command: command.into(),
            config,
            inputs: Vec::new(),
            warnings: Vec::new(),
            results: serde_json::Value::Null,
        }
    }

    /// Record an input file; repeated paths are digested once.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let shown = path.display().to_string();
        if self.inputs.iter().any(|i| i.path == shown) {
            return Ok(());
        }
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputDigest {
            path: shown,
            sha256,
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r: RunReport = serde_json::from_slice(&read_bytes(path)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::format(
                path,
                format!("unsupported report schema `{}`", r.schema),
            ));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        write_bytes(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        write_bytes(&input, b"x").unwrap();
        let mut r = RunReport::new("agree", serde_json::json!({"b": 1, "a": [0.1, 2]}));
        r.add_input(&input).unwrap();
        r.add_input(&input).unwrap();
        assert_eq!(r.inputs.len(), 1);
        let p = dir.path().join("report.json");
        r.write(&p).unwrap();
        assert_eq!(RunReport::read(&p).unwrap(), r);
        let text = r.to_json();
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
    }
}
