//! TOML run configuration for the training driver.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomSpec;
use crate::schedule::ScheduleConfig;
use crate::trainer::{AugmentationSpec, AxisPolicy, Mode, SupervisedLoss, TrainerConfig};

fn two() -> usize {
    2
}

fn one() -> usize {
    1
}

fn lambda_disp() -> f64 {
    0.25
}

fn momentum() -> f64 {
    0.9
}

fn weight_decay() -> f64 {
    1e-4
}

fn noise_sigma() -> f64 {
    0.1
}

fn noise_clamp() -> f64 {
    0.2
}

fn init_scale() -> f64 {
    0.01
}

fn random_axis() -> AxisPolicy {
    AxisPolicy::Random
}

fn full() -> Mode {
    Mode::Full
}

fn iters() -> u64 {
    1000
}

fn eval_interval() -> u64 {
    100
}

fn labeled() -> usize {
    4
}

fn unlabeled() -> usize {
    16
}

fn eval_cases() -> usize {
    8
}

/// Everything `train` needs. Only `p` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Falls back to the command line or the environment when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "random_axis")]
    pub axis: AxisPolicy,
    /// Slice-block / layer thickness; deliberately without a default.
    pub p: usize,
    #[serde(default = "two")]
    pub n: usize,
    #[serde(default = "two")]
    pub k: usize,
    #[serde(default = "lambda_disp")]
    pub lambda_disp: f64,
    #[serde(default = "full")]
    pub mode: Mode,
    #[serde(default = "iters")]
    pub iters: u64,
    #[serde(default = "eval_interval")]
    pub eval_interval: u64,
    /// Labeled (and unlabeled) cases per batch.
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "momentum")]
    pub momentum: f64,
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "noise_sigma")]
    pub teacher_noise_sigma: f64,
    #[serde(default = "noise_clamp")]
    pub teacher_noise_clamp: f64,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub supervised_loss: SupervisedLoss,
    #[serde(default = "init_scale")]
    pub init_scale: f64,
    /// Phantom spec TOML; the built-in desk phantom when absent.
    #[serde(default)]
    pub phantom: Option<PathBuf>,
    #[serde(default = "labeled")]
    pub labeled: usize,
    #[serde(default = "unlabeled")]
    pub unlabeled: usize,
    #[serde(default = "eval_cases")]
    pub eval_cases: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = RunConfig::from_toml(&std::fs::read_to_string(path)?)?;
        // Relative phantom paths are resolved against the config file.
        if let (Some(p), Some(dir)) = (cfg.phantom.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn trainer_config(&self, seed: u64) -> Result<TrainerConfig> {
        let cfg = TrainerConfig {
            schedule: self.schedule.clone(),
            lambda_disp: self.lambda_disp,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            axis: self.axis,
            thickness: self.p,
            grid: self.n,
            top_k: self.k,
            mode: self.mode,
            teacher_noise_sigma: self.teacher_noise_sigma,
            teacher_noise_clamp: self.teacher_noise_clamp,
            augmentation: self.augmentation.clone(),
            supervised_loss: self.supervised_loss,
            init_scale: self.init_scale,
            seed,
            fixed_alpha: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn phantom_spec(&self, seed: u64) -> Result<PhantomSpec> {
        match &self.phantom {
            Some(path) => load_phantom_spec(path),
            None => Ok(PhantomSpec::desk(seed)),
        }
    }
}

pub fn load_phantom_spec(path: impl AsRef<Path>) -> Result<PhantomSpec> {
    let spec: PhantomSpec =
        toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}
