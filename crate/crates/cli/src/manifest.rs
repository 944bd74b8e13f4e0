use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct SubRun {
    pub h: f64,
    pub config_hash: String,
    pub result_hash: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub elapsed_ms: u128,
    pub outputs: Vec<OutputFile>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sub_runs: Vec<SubRun>,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Collects outputs and checks for one command run.
pub struct Run {
    pub out: PathBuf,
    started: Instant,
    manifest: RunManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    pub fn new(command: &str, cfg: &ExperimentConfig, out: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        Ok(Run {
            out: out.to_path_buf(),
            started: Instant::now(),
            manifest: RunManifest {
                tool: "conewave",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                scenario: cfg.scenario.clone(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                elapsed_ms: 0,
                outputs: Vec::new(),
                checks: Vec::new(),
                sub_runs: Vec::new(),
                status: "pass",
                error: None,
            },
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let p = self.out.join(name);
        std::fs::write(&p, contents).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.record(name)
    }

    /// Register a file already written under the output directory.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let p = self.out.join(name);
        let bytes = std::fs::read(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.manifest.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn check(&mut self, name: &str, passed: bool, value: impl Serialize) {
        self.manifest.checks.push(Check {
            name: name.to_string(),
            passed,
            value: serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        });
    }

    pub fn sub_run(&mut self, s: SubRun) {
        self.manifest.sub_runs.push(s);
    }

    pub fn passed(&self) -> bool {
        self.manifest.checks.iter().all(|c| c.passed)
    }

    /// Write `manifest.json`; a failed check or `error` marks the run failed.
    pub fn finish(mut self, error: Option<String>) -> Result<bool, CliError> {
        let ok = error.is_none() && self.passed();
        self.manifest.status = if ok { "pass" } else { "fail" };
        self.manifest.error = error;
        self.manifest.elapsed_ms = self.started.elapsed().as_millis();
        let p = self.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        Ok(ok)
    }
}
