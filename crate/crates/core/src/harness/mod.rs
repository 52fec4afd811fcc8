//! Experiment recipes, metrics and figure outputs wired on top of the
//! trained components.

pub mod config;
pub mod eval;
pub mod figures;
pub mod metrics;
pub mod pipeline;
pub mod sweep;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmvae::{holdout_split, Cmvae};
use crate::controller::{run_closed_loop, run_open_loop, Components, ControllerConfig, EpisodeResult};
use crate::datagen::{episode_seed, spawn_pose, Dataset, DatasetConfig};
use crate::ddpm::Diffuser;
use crate::planner::{Planner, PlannerConfig, VelocityModel};
use crate::world::{wrap_angle, World};
use crate::{Error, Result};

pub use config::{ExperimentConfig, EvalConfig, Fixture, PoseSpec, SeedConfig, SweepConfig};
pub use eval::{run_eval, EvalReport};
pub use metrics::{Metrics, MetricsRow};
pub use pipeline::{run_pipeline, Manifest, PipelineOutcome, StageName};
pub use sweep::{run_sweep, SweepReport};

/// All trained components needed to plan and act.
pub struct Stack {
    pub world: World,
    pub cmvae: Cmvae,
    pub diffuser: Diffuser,
    pub velocity: VelocityModel,
    pub planner_config: PlannerConfig,
}

impl Stack {
    /// Loads the trained components a pipeline run left in `cfg.output_dir`.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let path = |s: StageName| {
            let p = cfg.output_dir.join(s.artifact());
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::MissingArtifact(p))
            }
        };
        let (cmvae, _) = Cmvae::load(&path(StageName::TrainCmvae)?)?;
        let diffuser = Diffuser::load(&path(StageName::TrainDdpm)?)?;
        let velocity = load_velocity(&path(StageName::FitVelocity)?)?;
        Ok(Self {
            world: World::new(cfg.world.clone()),
            cmvae,
            diffuser,
            velocity,
            planner_config: cfg.planner.clone(),
        })
    }

    pub fn planner(&self) -> Planner<'_> {
        Planner {
            cmvae: &self.cmvae,
            diffuser: &self.diffuser,
            velocity: &self.velocity,
            config: &self.planner_config,
        }
    }

    pub fn components(&self) -> Components<'_> {
        Components {
            world: &self.world,
            planner: self.planner(),
        }
    }
}

pub fn save_velocity(model: &VelocityModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(model).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_velocity(path: &Path) -> Result<VelocityModel> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute errors of the decoded feature pose on held-out frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureErrors {
    pub frames: usize,
    pub median_r: f64,
    pub median_theta: f64,
    pub median_phi: f64,
    pub median_gamma: f64,
    /// Median camera-position error implied by the decoded features.
    pub median_position: f64,
}

/// Evaluates the feature decoder on the episodes held out from training.
pub fn cmvae_feature_errors(dataset: &Dataset, cmvae: &Cmvae, holdout_fraction: f64) -> Result<FeatureErrors> {
    let split = holdout_split(dataset.records.len(), holdout_fraction);
    let held = &dataset.records[split..];
    let images: Vec<_> = held.iter().flat_map(|r| r.images.iter()).collect();
    let truth: Vec<_> = held.iter().flat_map(|r| r.feature_poses.iter()).collect();
    let zs = cmvae.encode_means(&images, 64)?;
    let decoded = cmvae.latent_features(&zs)?;
    let mut errs: [Vec<f64>; 5] = Default::default();
    for (d, t) in decoded.iter().zip(&truth) {
        errs[0].push((d.r - t.r).abs());
        errs[1].push(wrap_angle(d.theta - t.theta).abs());
        errs[2].push(wrap_angle(d.phi - t.phi).abs());
        errs[3].push(wrap_angle(d.gamma - t.gamma).abs());
        errs[4].push(d.position_distance(t));
    }
    let [r, th, ph, g, p] = errs.map(median);
    Ok(FeatureErrors {
        frames: truth.len(),
        median_r: r,
        median_theta: th,
        median_phi: ph,
        median_gamma: g,
        median_position: p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutMode {
    Closed,
    Open,
}

/// Runs `episodes` episodes from random starts toward the target view. A
/// start is target-invisible with probability `dataset.invisible_fraction`.
/// Open-loop episodes execute the first plan the matching closed-loop
/// episode would make.
pub fn run_rollouts(
    stack: &Stack,
    dataset: &DatasetConfig,
    controller: &ControllerConfig,
    mode: RolloutMode,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeResult>> {
    use rand::Rng;
    let comps = stack.components();
    let target = stack.world.target_view_pose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let visible = rng.gen::<f64>() >= dataset.invisible_fraction;
        let start = spawn_pose(&stack.world, dataset, &mut rng, visible);
        let s = episode_seed(seed, i as u64);
        let r = match mode {
            RolloutMode::Closed => run_closed_loop(&comps, start, target, controller, s)?,
            RolloutMode::Open => run_open_loop(&comps, start, target, controller, s)?,
        };
        out.push(r);
    }
    Ok(out)
}

/// One line per episode in the rollout summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub start_x: f64,
    pub start_y: f64,
    pub start_psi: f64,
    pub success: bool,
    pub replans: usize,
    pub steps: usize,
    pub final_position_error: f64,
    pub final_yaw_error: f64,
    pub returns_nondecreasing: bool,
    pub return_trend: f64,
    pub failure: String,
}

impl From<&EpisodeResult> for EpisodeRow {
    fn from(r: &EpisodeResult) -> Self {
        Self {
            seed: r.seed,
            start_x: r.start.x,
            start_y: r.start.y,
            start_psi: r.start.psi,
            success: r.success,
            replans: r.replans,
            steps: r.steps_executed,
            final_position_error: r.final_position_error,
            final_yaw_error: r.final_yaw_error,
            returns_nondecreasing: r.returns_nondecreasing(),
            return_trend: r.return_trend(),
            failure: r.failure.clone().unwrap_or_default(),
        }
    }
}

/// Writes one JSON record per episode and a per-episode CSV.
pub fn write_episodes(results: &[EpisodeResult], jsonl: &Path, csv_path: &Path) -> Result<()> {
    let mut text = String::new();
    for r in results {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Other(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(jsonl, text)?;
    let mut w = csv::Writer::from_path(csv_path).map_err(metrics::csv_err)?;
    for r in results {
        w.serialize(EpisodeRow::from(r)).map_err(metrics::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
