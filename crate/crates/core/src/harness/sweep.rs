//! Return-condition sweep between a fixed start and the target view.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SweepConfig;
use super::figures::write_image_grid;
use super::metrics::{csv_err, Metrics};
use super::{median, write_json, Stack};
use crate::datagen::episode_seed;
use crate::planner::Plan;
use crate::world::RobotPose;
use crate::Result;

/// Return levels `-1, -1 + res, ..., 1`.
pub fn sweep_levels(resolution: f64) -> Vec<f64> {
    let n = (2.0 / resolution).round() as usize;
    (0..=n)
        .map(|i| {
            let v = -1.0 + i as f64 * resolution;
            (v * 1e9).round() / 1e9
        })
        .filter(|v| *v <= 1.0 + 1e-9)
        .collect()
}

/// One return level; every statistic is the median over the level's plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub condition: f64,
    /// Largest change of decoded distance to the goal between consecutive columns.
    pub max_distance_jump: f64,
    /// Decoded distance to the goal view at the last free column.
    pub terminal_distance: f64,
    pub mean_distance: f64,
    pub max_latent_jump: f64,
    pub smooth: bool,
    pub converged: bool,
}

impl SweepLevel {
    pub fn admissible(&self) -> bool {
        self.smooth && self.converged
    }
}

/// Batch statistics of `count` plans at one return level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingStat {
    pub label: String,
    pub condition: f64,
    pub plans: usize,
    /// Mean over plans of the mean decoded per-column distance to the goal.
    pub mean_distance: f64,
    /// Mean over plans of the largest consecutive-column latent distance.
    pub mean_max_latent_jump: f64,
    pub mean_terminal_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub start: RobotPose,
    pub target: RobotPose,
    pub estimated_raw: f64,
    pub estimated_normalized: f64,
    pub estimate_out_of_range: bool,
    pub levels: Vec<SweepLevel>,
    /// Smallest interval holding every admissible level.
    pub admissible: Option<(f64, f64)>,
    pub estimate_admissible: bool,
    pub ordering: Vec<OrderingStat>,
}

impl SweepReport {
    pub fn ordering(&self, label: &str) -> Option<&OrderingStat> {
        self.ordering.iter().find(|o| o.label == label)
    }

    pub fn to_metrics(&self, m: &mut Metrics) {
        m.push("sweep.levels", self.levels.len() as f64, "count");
        m.push("sweep.estimate_normalized", self.estimated_normalized, "");
        m.push("sweep.estimate_raw", self.estimated_raw, "");
        if let Some((lo, hi)) = self.admissible {
            m.push("sweep.admissible_lo", lo, "");
            m.push("sweep.admissible_hi", hi, "");
        }
        m.push("sweep.estimate_admissible", f64::from(u8::from(self.estimate_admissible)), "bool");
        for l in &self.levels {
            m.push(format!("sweep.level[{:+.1}].max_jump", l.condition), l.max_distance_jump, "m");
            m.push(format!("sweep.level[{:+.1}].terminal_distance", l.condition), l.terminal_distance, "m");
        }
        for o in &self.ordering {
            m.push(format!("ordering.{}.mean_distance", o.label), o.mean_distance, "m");
            m.push(format!("ordering.{}.max_latent_jump", o.label), o.mean_max_latent_jump, "");
        }
    }
}

fn ordering_stat(label: &str, condition: f64, plans: &[Plan]) -> OrderingStat {
    let n = plans.len().max(1) as f64;
    OrderingStat {
        label: label.to_string(),
        condition,
        plans: plans.len(),
        mean_distance: plans.iter().map(|p| p.diagnostics.mean_distance()).sum::<f64>() / n,
        mean_max_latent_jump: plans.iter().map(|p| p.trajectory.max_column_jump()).sum::<f64>() / n,
        mean_terminal_distance: plans.iter().map(|p| p.diagnostics.terminal_distance()).sum::<f64>() / n,
    }
}

/// Plans once per return level, judges smoothness and convergence, and
/// compares the admissible levels with the heuristic estimate. With
/// `out_dir`, writes the report, a CSV and a decoded image strip.
pub fn run_sweep(stack: &Stack, cfg: &SweepConfig, out_dir: Option<&Path>) -> Result<SweepReport> {
    let planner = stack.planner();
    let start: RobotPose = cfg.start.into();
    let target = stack.world.target_view_pose();
    let ends = planner.endpoints(&stack.world.render(&start), &stack.world.render(&target))?;
    let est = planner.estimate(&ends)?;

    let level_seeds: Vec<u64> = (0..cfg.level_plans.max(1) as u64)
        .map(|i| episode_seed(cfg.seed ^ 0x5eed, i))
        .collect();
    let mut levels = Vec::new();
    let mut strips = Vec::new();
    for c in sweep_levels(cfg.resolution) {
        let plans = planner.plan_batch(&ends, Some(c), &level_seeds)?;
        let med = |f: &dyn Fn(&Plan) -> f64| median(plans.iter().map(f).collect());
        let jump = med(&|p| p.diagnostics.max_distance_jump());
        let terminal = med(&|p| p.diagnostics.terminal_distance());
        let level = SweepLevel {
            condition: c,
            max_distance_jump: jump,
            terminal_distance: terminal,
            mean_distance: med(&|p| p.diagnostics.mean_distance()),
            max_latent_jump: med(&|p| p.trajectory.max_column_jump()),
            smooth: jump < cfg.smoothness_threshold,
            converged: terminal < cfg.convergence_threshold,
        };
        if out_dir.is_some() {
            strips.push(stack.cmvae.decode_images(&plans[0].trajectory.columns)?);
        }
        levels.push(level);
    }
    let ok: Vec<f64> = levels.iter().filter(|l| l.admissible()).map(|l| l.condition).collect();
    let admissible = ok.first().map(|&lo| (lo, *ok.last().unwrap()));
    let estimate_admissible = admissible.is_some_and(|(lo, hi)| lo <= est.normalized && est.normalized <= hi);

    let seeds: Vec<u64> = (0..cfg.ordering_plans as u64).map(|i| episode_seed(cfg.seed, i)).collect();
    let mut ordering = Vec::new();
    for (label, c) in [("low", -1.0), ("zero", 0.0), ("estimate", est.normalized), ("high", 1.0)] {
        let plans = planner.plan_batch(&ends, Some(c), &seeds)?;
        ordering.push(ordering_stat(label, c, &plans));
    }

    let report = SweepReport {
        start,
        target,
        estimated_raw: est.raw,
        estimated_normalized: est.normalized,
        estimate_out_of_range: est.out_of_range,
        levels,
        admissible,
        estimate_admissible,
        ordering,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&report, &dir.join("sweep.json"))?;
        write_image_grid(&strips, 2, &dir.join("sweep_strips.png"))?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv")).map_err(csv_err)?;
        for l in &report.levels {
            w.serialize(l).map_err(csv_err)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("ordering.csv")).map_err(csv_err)?;
        for o in &report.ordering {
            w.serialize(o).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_levels_at_resolution_two_tenths() {
        let l = sweep_levels(0.2);
        assert_eq!(l.len(), 11);
        assert_eq!(l[0], -1.0);
        assert_eq!(l[5], 0.0);
        assert_eq!(l[10], 1.0);
    }
}
