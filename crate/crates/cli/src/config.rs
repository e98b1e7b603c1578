//! `run.toml`: one declarative file drives every stage.
//!
//! Relative paths are resolved against the directory holding the file. The
//! top-level `seed` is the only seed; it overrides `[synth].seed` and
//! `[experiment].seed`.

use std::path::{Path, PathBuf};

use crowdspeak::evaluation::{ExperimentConfig, Method};
use crowdspeak::synth::SceneConfig;
use crowdspeak::trajectories::TrajectoryParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory holding `manifest.json`.
    pub data: PathBuf,
    /// Where stage artifacts go.
    pub output: PathBuf,
    pub synth: SceneConfig,
    pub frames: FramesConfig,
    pub extract: TrajectoryParams,
    pub experiment: ExperimentConfig,
    pub stages: StageConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: "data".into(),
            output: "out".into(),
            synth: SceneConfig::default(),
            frames: FramesConfig::default(),
            extract: TrajectoryParams::default(),
            experiment: ExperimentConfig::default(),
            stages: StageConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Raw-frame rendering by `synth` (feeds `extract`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FramesConfig {
    pub enabled: bool,
    pub width: usize,
    pub height: usize,
    pub blob_radius: f64,
    pub max_frames: Option<usize>,
}

impl Default for FramesConfig {
    fn default() -> Self {
        FramesConfig {
            enabled: false,
            width: 320,
            height: 240,
            blob_radius: 4.0,
            max_frames: None,
        }
    }
}

/// Settings of the single-model stages (`encode`, `train`, `score`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    /// Video method encoded and trained by the staged path.
    pub method: Method,
    /// Keypoint filter radius (pixels at the reference point).
    pub radius: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            method: Method::FvHandsAndHead,
            radius: 32.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// GMM sizes for the AUC-vs-components sweep; empty skips it.
    pub gmm_sweep: Vec<usize>,
}

impl RunConfig {
    /// Reads, applies the seed override and validates.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.into(),
            msg: e.to_string(),
        })?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data = base.join(&cfg.data);
        cfg.output = base.join(&cfg.output);
        cfg.apply_seed();
        cfg.validate().map_err(|e| CliError::Config {
            path: path.into(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn apply_seed(&mut self) {
        self.synth.seed = self.seed;
        self.experiment.seed = self.seed;
    }

    pub fn validate(&self) -> crowdspeak::Result<()> {
        self.synth.validate()?;
        self.extract.validate()?;
        self.experiment.validate()?;
        if !self.stages.method.is_video() {
            return Err(crowdspeak::Error::Config(
                "stages.method must be an FV method".into(),
            ));
        }
        if self.stages.radius.is_nan() || self.stages.radius <= 0.0 {
            return Err(crowdspeak::Error::Config(
                "stages.radius must be positive".into(),
            ));
        }
        if self.evaluate.gmm_sweep.contains(&0) {
            return Err(crowdspeak::Error::Config(
                "gmm_sweep sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, paths excluded so the same
    /// settings hash the same wherever they run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.data = PathBuf::new();
        c.output = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 1\n[experiment]\nfolds = 3\nbogus = 2\n").unwrap();
        let err = RunConfig::load(&p, None).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn seed_override_reaches_every_stream_and_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 1\ndata = \"d\"\n[synth]\nn_agents = 4\n").unwrap();
        let a = RunConfig::load(&p, None).unwrap();
        let b = RunConfig::load(&p, Some(9)).unwrap();
        assert_eq!((b.synth.seed, b.experiment.seed), (9, 9));
        assert_eq!(a.data, dir.path().join("d"));
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::load(&p, None).unwrap().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
