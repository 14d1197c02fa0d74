//! Run configuration file: one JSON object with optional `train`, `synth`
//! and `solver` sections. Missing sections and fields take defaults.

use std::path::Path;

use qcgm::{Error, FwInferConfig, Result, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: Option<SynthConfig>,
    pub solver: FwInferConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        cfg.train.validate()?;
        cfg.solver.validate()?;
        if let Some(s) = &cfg.synth {
            s.validate()?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"epochs": 3}, "solver": {"outer": 2}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.solver.outer, 2);
        assert_eq!(cfg.solver.max_inner, 50);
        assert!(cfg.synth.is_none());
    }

    #[test]
    fn unknown_section_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"trian": {}}"#).unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"learning_rate": -1}}"#).unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }
}
