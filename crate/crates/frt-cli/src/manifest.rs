//! Run manifests: every command records the exact inputs that determine its
//! outputs. No timestamps, so repeated runs produce identical files.

use std::path::Path;

use frt_core::Result;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, master_seed: u64, config: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed,
            config: config.clone(),
            artifacts: Vec::new(),
        }
    }

    pub fn push_artifact(&mut self, name: impl Into<String>) {
        self.artifacts.push(name.into());
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("generate", 42, &RunConfig::default());
        m.push_artifact("grids/grid_0000.json");
        m.save(dir.path()).unwrap();
        let a = std::fs::read(dir.path().join("manifest_generate.json")).unwrap();
        m.save(dir.path()).unwrap();
        let b = std::fs::read(dir.path().join("manifest_generate.json")).unwrap();
        assert_eq!(a, b);
    }
}
