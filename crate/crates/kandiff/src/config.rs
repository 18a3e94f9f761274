//! Run configuration: TOML sections mirroring the module layout, with
//! precedence defaults < file < command-line flags. Every resolved run
//! writes a frozen copy of its config next to its checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::frequency::FreqLossConfig;
use crate::unet::DenoiserConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub freq: FreqSection,
    pub data: DataConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            freq: FreqSection::default(),
            data: DataConfig::default(),
            io: IoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            kind: ScheduleKind::Cosine,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: u8,
    pub steps: u64,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: 1,
            steps: 2000,
            batch: 8,
            patch: 96,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// How the training timestep is drawn each step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TDrawPolicy {
    /// t ~ Uniform{1..T} every step.
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FreqSection {
    pub gamma1: f64,
    pub gamma2: f64,
    pub pad_to_pow2: bool,
    pub t_draw: TDrawPolicy,
}

impl Default for FreqSection {
    fn default() -> Self {
        let f = FreqLossConfig::default();
        FreqSection {
            gamma1: f.gamma1,
            gamma2: f.gamma2,
            pad_to_pow2: f.pad_to_pow2,
            t_draw: TDrawPolicy::Uniform,
        }
    }
}

impl FreqSection {
    pub fn loss_config(&self) -> FreqLossConfig {
        FreqLossConfig {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            pad_to_pow2: self.pad_to_pow2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root holding low/ and high/ subdirectories.
    pub root: PathBuf,
    /// Optional subdirectory under root (e.g. "train"); empty means root
    /// itself holds low/ and high/.
    pub split: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: PathBuf::from("data"),
            split: String::new(),
        }
    }
}

impl DataConfig {
    pub fn resolved_root(&self) -> PathBuf {
        if self.split.is_empty() {
            self.root.clone()
        } else {
            self.root.join(&self.split)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub checkpoint_dir: PathBuf,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            checkpoint_dir: PathBuf::from("runs/default"),
            log_interval: 50,
            checkpoint_interval: 500,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub phase: Option<u8>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub data_root: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Full-scale settings matching the published training protocol
    /// (T=1000 linear schedule, 1e6 phase-1 steps). Not the default;
    /// desk-scale presets are.
    pub fn paper_preset() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.schedule = ScheduleConfig {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            kind: ScheduleKind::Linear,
        };
        cfg.train.steps = 1_000_000;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// defaults < file < flags.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
        let mut cfg = match file {
            None => RunConfig::default(),
            Some(path) => {
                if !path.exists() {
                    return Err(Error::MissingFile(path.to_path_buf()));
                }
                RunConfig::from_toml_str(&std::fs::read_to_string(path)?)?
            }
        };
        if let Some(v) = flags.phase {
            cfg.train.phase = v;
        }
        if let Some(v) = flags.steps {
            cfg.train.steps = v;
        }
        if let Some(v) = flags.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = flags.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = &flags.data_root {
            cfg.data.root = v.clone();
        }
        if let Some(v) = &flags.checkpoint_dir {
            cfg.io.checkpoint_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !matches!(self.train.phase, 1 | 2) {
            return fail(format!("train.phase must be 1 or 2, got {}", self.train.phase));
        }
        if self.train.batch == 0 || self.train.steps == 0 {
            return fail("train.batch and train.steps must be positive".into());
        }
        if self.train.lr <= 0.0 {
            return fail(format!("train.lr must be positive, got {}", self.train.lr));
        }
        let div = self.model.divisor();
        if self.train.patch == 0 || self.train.patch % div != 0 {
            return fail(format!(
                "train.patch {} must be a positive multiple of {div} (model depth {})",
                self.train.patch,
                self.model.depth()
            ));
        }
        if self.schedule.timesteps == 0 {
            return fail("schedule.timesteps must be positive".into());
        }
        if !(self.schedule.beta_start > 0.0 && self.schedule.beta_end < 1.0) {
            return fail(format!(
                "schedule betas must satisfy 0 < start <= end < 1, got [{}, {}]",
                self.schedule.beta_start, self.schedule.beta_end
            ));
        }
        if self.freq.gamma1 < 0.0 || self.freq.gamma2 < 0.0 {
            return fail("freq.gamma1/gamma2 must be non-negative".into());
        }
        Ok(())
    }

    /// Write the frozen resolved config beside the checkpoints.
    pub fn save_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml_string())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_defaults_file_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nlr = 0.5\nsteps = 111\n").unwrap();
        let flags = Overrides {
            steps: Some(999),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(cfg.train.lr, 0.5, "file overrides default");
        assert_eq!(cfg.train.steps, 999, "flag overrides file");
        assert_eq!(cfg.train.batch, TrainConfig::default().batch, "untouched keys keep defaults");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_toml_str("[train]\nlrr = 0.5\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("lrr"), "error should name the bad key: {msg}");
    }

    #[test]
    fn validation_rejects_bad_phase_and_patch() {
        let mut cfg = RunConfig::default();
        cfg.train.phase = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.patch = 7; // not a multiple of the down/up factor
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolved_copy_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = RunConfig::resolve(Some(Path::new("/nonexistent/x.toml")), &Overrides::default());
        assert!(err.is_err());
    }
}
