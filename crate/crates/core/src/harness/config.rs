use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmvae::CmvaeConfig;
use crate::controller::ControllerConfig;
use crate::datagen::{episode_seed, DatasetConfig};
use crate::ddpm::DdpmConfig;
use crate::planner::PlannerConfig;
use crate::world::{RobotPose, WorldConfig};
use crate::{Error, Result};

/// Largest seed a config file can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub data: u64,
    pub cmvae: u64,
    pub ddpm: u64,
    pub eval: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self::from_base(0)
    }
}

impl SeedConfig {
    /// Distinct per-stage seeds derived from one base seed, kept below
    /// 2^63 so they fit a TOML integer.
    pub fn from_base(base: u64) -> Self {
        let derive = |i| episode_seed(base, i) & MAX_SEED;
        Self {
            data: derive(1),
            cmvae: derive(2),
            ddpm: derive(3),
            eval: derive(4),
        }
    }

    fn all(&self) -> [u64; 4] {
        [self.data, self.cmvae, self.ddpm, self.eval]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl From<PoseSpec> for RobotPose {
    fn from(p: PoseSpec) -> Self {
        RobotPose::new(p.x, p.y, p.psi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Start pose of the standard fixture; the target is the target-view pose.
    pub start: PoseSpec,
    pub resolution: f64,
    /// Largest allowed decoded-distance jump between consecutive columns.
    pub smoothness_threshold: f64,
    /// Largest allowed decoded distance at the last free column.
    pub convergence_threshold: f64,
    pub seed: u64,
    /// Plans per sweep level; a level is judged by the medians over them.
    pub level_plans: usize,
    /// Plans per return level for the ordering statistics.
    pub ordering_plans: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start: PoseSpec {
                x: 2.5,
                y: 1.5,
                psi: -std::f64::consts::FRAC_PI_2,
            },
            resolution: 0.2,
            smoothness_threshold: 0.75,
            convergence_threshold: 0.5,
            seed: 7,
            level_plans: 8,
            ordering_plans: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub name: String,
    pub start: PoseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub invisible_episodes: usize,
    pub visible_episodes: usize,
    /// Samples per open-loop batch on each fixture.
    pub open_loop_samples: usize,
    pub fixtures: Vec<Fixture>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            invisible_episodes: 50,
            visible_episodes: 20,
            open_loop_samples: 100,
            fixtures: vec![
                Fixture {
                    name: "behind".into(),
                    start: PoseSpec {
                        x: 2.5,
                        y: 1.5,
                        psi: -std::f64::consts::FRAC_PI_2,
                    },
                },
                Fixture {
                    name: "far-corner".into(),
                    start: PoseSpec {
                        x: 1.0,
                        y: 4.0,
                        psi: std::f64::consts::PI,
                    },
                },
                Fixture {
                    name: "in-view".into(),
                    start: PoseSpec {
                        x: 1.5,
                        y: 2.0,
                        psi: 0.2,
                    },
                },
            ],
        }
    }
}

/// Complete experiment description; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: SeedConfig,
    pub world: WorldConfig,
    pub dataset: DatasetConfig,
    pub cmvae: CmvaeConfig,
    pub ddpm: DdpmConfig,
    pub planner: PlannerConfig,
    pub controller: ControllerConfig,
    pub sweep: SweepConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            output_dir: PathBuf::from("runs/default"),
            seeds: SeedConfig::default(),
            world: WorldConfig::default(),
            dataset: DatasetConfig::default(),
            cmvae: CmvaeConfig::default(),
            ddpm: DdpmConfig::default(),
            planner: PlannerConfig::default(),
            controller: ControllerConfig::default(),
            sweep: SweepConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let tag = |block: &str, r: std::result::Result<(), String>| {
            r.map_err(|e| Error::Config(format!("[{block}] {e}")))
        };
        tag("world", self.world.validate())?;
        tag("dataset", self.dataset.validate())?;
        tag("cmvae", self.cmvae.validate())?;
        tag("ddpm", self.ddpm.validate())?;
        tag("controller", self.controller.validate(self.ddpm.horizon))?;
        if self.world.image_height % 8 != 0 || self.world.image_width % 8 != 0 {
            return Err(Error::Config("[world] image sizes must be multiples of 8".into()));
        }
        let p = &self.planner;
        if !(0.0 < p.v_min && p.v_min < p.v_max) {
            return Err(Error::Config("[planner] need 0 < v_min < v_max".into()));
        }
        if let Some(r) = p.return_override {
            if !(-1.0..=1.0).contains(&r) {
                return Err(Error::Config("[planner] return_override outside [-1, 1]".into()));
            }
        }
        if self.seeds.all().iter().chain([&self.sweep.seed]).any(|&s| s > MAX_SEED) {
            return Err(Error::Config(format!("[seeds] seeds must not exceed {MAX_SEED}")));
        }
        if !(self.sweep.resolution > 0.0 && self.sweep.resolution <= 2.0) {
            return Err(Error::Config("[sweep] resolution must be in (0, 2]".into()));
        }
        Ok(())
    }
}
