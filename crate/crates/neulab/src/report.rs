//! Machine-readable experiment reports: one JSON document per experiment,
//! deterministic for a fixed config and seed (timestamps live in a
//! separate metadata file).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    /// `le` or `ge`: which side of the threshold passes.
    pub direction: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub experiment: String,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
    /// Named measured quantities (constants, deviations, rates).
    pub quantities: BTreeMap<String, f64>,
    /// Refinement series, when the experiment sweeps resolutions.
    pub series: Vec<BTreeMap<String, f64>>,
    pub mesh_hash: Option<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub seed: u64,
}

impl EstimateReport {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            passed: true,
            checks: Vec::new(),
            quantities: BTreeMap::new(),
            series: Vec::new(),
            mesh_hash: None,
            tolerances: BTreeMap::new(),
            seed,
        }
    }

    pub fn quantity(&mut self, name: &str, value: f64) -> &mut Self {
        self.quantities.insert(name.to_string(), value);
        self
    }

    pub fn tolerance(&mut self, name: &str, value: f64) -> &mut Self {
        self.tolerances.insert(name.to_string(), value);
        self
    }

    /// Records `measured <= threshold` as a named pass/fail check.
    pub fn check_le(&mut self, name: &str, measured: f64, threshold: f64) -> bool {
        let passed = measured <= threshold && measured.is_finite();
        self.checks.push(CheckOutcome {
            name: name.to_string(),
            passed,
            measured,
            threshold,
            direction: "le".into(),
        });
        self.passed &= passed;
        passed
    }

    /// Records `measured >= threshold`.
    pub fn check_ge(&mut self, name: &str, measured: f64, threshold: f64) -> bool {
        let passed = measured >= threshold && measured.is_finite();
        self.checks.push(CheckOutcome {
            name: name.to_string(),
            passed,
            measured,
            threshold,
            direction: "ge".into(),
        });
        self.passed &= passed;
        passed
    }

    pub fn check_true(&mut self, name: &str, ok: bool) -> bool {
        self.checks.push(CheckOutcome {
            name: name.to_string(),
            passed: ok,
            measured: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
            direction: "ge".into(),
        });
        self.passed &= ok;
        ok
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.report.json", self.experiment));
        let mut file = std::fs::File::create(&path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        Ok(path)
    }
}

/// SHA-256 hex digest of a canonical JSON value, for run directories.
pub fn config_hash(value: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(value).unwrap_or_default();
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    let digest = h.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_gate_pass_flag() {
        let mut r = EstimateReport::new("demo", 7);
        assert!(r.check_le("small", 1e-12, 1e-10));
        assert!(!r.check_ge("gap", 5.0, 10.0));
        assert!(!r.passed);
        let txt = r.to_json().unwrap();
        assert!(txt.contains("\"experiment\": \"demo\""));
    }

    #[test]
    fn hash_is_stable() {
        let v = serde_json::json!({"a": 1, "b": [1, 2]});
        assert_eq!(config_hash(&v), config_hash(&v));
    }
}
