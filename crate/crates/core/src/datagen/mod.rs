//! Expert trajectory corpus: rollouts, discounted returns, return
//! normalization, fixed-horizon windows, and the on-disk container.

mod expert;
mod io;
mod window;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::world::{Action, FeaturePose, Image, RobotPose, World};
use crate::{Error, Result};

pub use expert::{expert_action, expert_rollout, spawn_pose};
pub use io::{read_dataset, write_dataset, DATASET_VERSION};
pub use window::{window_starts, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub discount: f64,
    /// Fraction of episodes spawned with the target outside the field of view.
    pub invisible_fraction: f64,
    /// Std-dev of the Gaussian noise added to the linear velocity commands.
    pub noise_linear: f64,
    /// Std-dev of the Gaussian noise added to the yaw-rate command.
    pub noise_yaw: f64,
    /// Episodes end once the robot is this close to the target-view pose...
    pub arrival_distance: f64,
    /// ...and its heading is within this many radians of the view heading.
    pub arrival_yaw: f64,
    pub yaw_gain: f64,
    pub position_gain: f64,
    /// Spawns closer than this to the target-view pose are redrawn.
    pub min_spawn_distance: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            max_steps: 100,
            discount: 0.99,
            invisible_fraction: 0.4,
            noise_linear: 0.05,
            noise_yaw: 0.05,
            arrival_distance: 0.3,
            arrival_yaw: 0.3,
            yaw_gain: 2.0,
            position_gain: 1.0,
            min_spawn_distance: 0.6,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err("discount must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.invisible_fraction) {
            return Err("invisible_fraction must be in [0, 1]".into());
        }
        if self.max_steps == 0 {
            return Err("max_steps must be positive".into());
        }
        if self.noise_linear < 0.0 || self.noise_yaw < 0.0 {
            return Err("noise levels must be non-negative".into());
        }
        Ok(())
    }
}

/// One expert episode. `actions[k]` moves `poses[k]` to `poses[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub images: Vec<Image>,
    pub feature_poses: Vec<FeaturePose>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub poses: Vec<RobotPose>,
    pub raw_return: f64,
    pub norm_return: f64,
    /// Whether the episode reached the target view before `max_steps`.
    pub arrived: bool,
}

impl TrajectoryRecord {
    /// Number of actions `L`; every per-frame channel has `L + 1` entries.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let n = self.actions.len() + 1;
        if self.images.len() != n
            || self.feature_poses.len() != n
            || self.rewards.len() != n
            || self.poses.len() != n
        {
            return Err(format!(
                "record {}: inconsistent channel lengths for {} actions",
                self.seed,
                self.actions.len()
            ));
        }
        if !(-1.0..=1.0).contains(&self.norm_return) {
            return Err(format!("record {}: norm_return {}", self.seed, self.norm_return));
        }
        Ok(())
    }

    /// Mean speed over the episode (path length over duration).
    pub fn mean_speed(&self, dt: f64) -> Option<f64> {
        if self.actions.is_empty() {
            return None;
        }
        let path: f64 = self.poses.windows(2).map(|w| w[0].distance_to(&w[1])).sum();
        Some(path / (self.actions.len() as f64 * dt))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<TrajectoryRecord>,
    pub return_min: f64,
    pub return_max: f64,
    pub discount: f64,
}

impl Dataset {
    pub fn normalizer(&self) -> ReturnNormalizer {
        ReturnNormalizer {
            min: self.return_min,
            max: self.return_max,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.records.iter().map(|r| r.images.len()).sum()
    }

    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.records
            .first()
            .and_then(|r| r.images.first())
            .map(|i| (i.height(), i.width()))
    }
}

/// `sum_k discount^k * rewards[k]`.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    let mut acc = 0.0;
    let mut w = 1.0;
    for r in rewards {
        acc += w * r;
        w *= discount;
    }
    acc
}

/// Affine map sending `[min, max]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnNormalizer {
    pub min: f64,
    pub max: f64,
}

impl ReturnNormalizer {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut count = 0;
        for v in values {
            min = min.min(v);
            max = max.max(v);
            count += 1;
        }
        if count < 2 || !(max > min) {
            return Err(Error::DegenerateReturns {
                count,
                value: if count == 0 { f64::NAN } else { min },
            });
        }
        Ok(Self { min, max })
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        2.0 * (raw - self.min) / (self.max - self.min) - 1.0
    }

    pub fn denormalize(&self, norm: f64) -> f64 {
        self.min + (norm + 1.0) / 2.0 * (self.max - self.min)
    }
}

/// Rescales every record's raw return to `[-1, 1]` and stores the map.
pub fn normalize_returns(mut dataset: Dataset) -> Result<Dataset> {
    let norm = ReturnNormalizer::fit(dataset.records.iter().map(|r| r.raw_return))?;
    for r in &mut dataset.records {
        r.norm_return = norm.normalize(r.raw_return).clamp(-1.0, 1.0);
    }
    dataset.return_min = norm.min;
    dataset.return_max = norm.max;
    Ok(dataset)
}

/// Mixes a base seed and an episode index into an episode seed.
pub fn episode_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rolls out `episodes` expert episodes in parallel and normalizes returns.
pub fn generate_dataset(
    world: &World,
    cfg: &DatasetConfig,
    base_seed: u64,
    episodes: usize,
) -> Result<Dataset> {
    let records: Vec<TrajectoryRecord> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| expert_rollout(world, cfg, episode_seed(base_seed, i)))
        .collect();
    normalize_returns(Dataset {
        records,
        return_min: 0.0,
        return_max: 0.0,
        discount: cfg.discount,
    })
}
