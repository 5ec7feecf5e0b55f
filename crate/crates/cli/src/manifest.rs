use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Provenance record attached to every output of one command.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub scenario: String,
    /// sha256 of the canonical argument list; equal args give equal hashes.
    pub config_hash: String,
    pub version: &'static str,
    pub timestamp: u64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, scenario: &str, canonical_args: &[(&str, String)]) -> Self {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(scenario.as_bytes());
        for (k, v) in canonical_args {
            h.update([0]);
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
        }
        RunManifest {
            command: command.to_string(),
            scenario: scenario.to_string(),
            config_hash: format!("{:x}", h.finalize()),
            version: env!("CARGO_PKG_VERSION"),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "scenario": self.scenario,
            "config_hash": self.config_hash,
            "version": self.version,
            "timestamp": self.timestamp,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        })
    }

    /// Writes JSON with the manifest embedded under `"manifest"`.
    pub fn write_json(&mut self, path: &Path, mut body: Value) -> std::io::Result<()> {
        if let Value::Object(m) = &mut body {
            m.insert("manifest".into(), json!({ "config_hash": self.config_hash, "command": self.command, "scenario": self.scenario }));
        }
        self.write_text(path, &serde_json::to_string_pretty(&body).unwrap())
    }

    pub fn write_text(&mut self, path: &Path, text: &str) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, text)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// `manifest.json` next to the outputs.
    pub fn finish(&self, out_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&self.to_json()).unwrap())
    }
}
