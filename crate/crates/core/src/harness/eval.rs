//! Closed- and open-loop evaluation over randomized starts and fixtures.

use std::path::Path;

use image::Rgb;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::figures::{Histogram, RoomPlot};
use super::metrics::{csv_err, Metrics};
use super::{write_episodes, write_json, Stack};
use crate::controller::{run_closed_loop, run_open_loop, run_open_loop_batch, EpisodeResult};
use crate::datagen::{episode_seed, spawn_pose};
use crate::world::RobotPose;
use crate::Result;

/// Final-error histograms span `[0, HIST_MAX)` meters.
pub const HIST_MAX: f64 = 2.0;
pub const HIST_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub episodes: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub mean_position_error: f64,
    pub std_position_error: f64,
    pub mean_yaw_error: f64,
}

impl ModeSummary {
    pub fn of(results: &[EpisodeResult]) -> Self {
        let ok: Vec<&EpisodeResult> = results.iter().filter(|r| r.failure.is_none()).collect();
        let n = ok.len().max(1) as f64;
        let mean = ok.iter().map(|r| r.final_position_error).sum::<f64>() / n;
        let var = ok.iter().map(|r| (r.final_position_error - mean).powi(2)).sum::<f64>() / n;
        Self {
            episodes: results.len(),
            failures: results.len() - ok.len(),
            success_rate: results.iter().filter(|r| r.success).count() as f64 / results.len().max(1) as f64,
            mean_position_error: mean,
            std_position_error: var.sqrt(),
            mean_yaw_error: ok.iter().map(|r| r.final_yaw_error).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub name: String,
    pub target_visible: bool,
    pub closed: ModeSummary,
    /// Single-plan runs from the same starts with the same first-plan seeds.
    pub open: ModeSummary,
    pub mean_replans: f64,
    /// Fraction of successful closed-loop episodes whose per-replan return
    /// estimates never decrease.
    pub returns_nondecreasing: f64,
    /// Fraction of successful closed-loop episodes whose return estimates
    /// have a non-negative least-squares slope over the replans.
    pub returns_trend_nondecreasing: f64,
    /// Fraction of closed-loop episodes ending within the arrival thresholds
    /// of the target-view pose in simulator coordinates.
    pub true_arrival_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureReport {
    pub name: String,
    pub start: RobotPose,
    pub open_loop: ModeSummary,
    /// Lower edge of the most populated final-error histogram bin.
    pub histogram_mode: f64,
    pub closed_loop_success: bool,
    pub closed_loop_position_error: f64,
    pub raw_returns: Vec<f64>,
    pub normalized_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strata: Vec<StratumReport>,
    pub fixtures: Vec<FixtureReport>,
}

impl EvalReport {
    pub fn stratum(&self, visible: bool) -> Option<&StratumReport> {
        self.strata.iter().find(|s| s.target_visible == visible)
    }

    pub fn to_metrics(&self, m: &mut Metrics) {
        for s in &self.strata {
            for (mode, sum) in [("closed", &s.closed), ("open", &s.open)] {
                let p = format!("eval.{}.{mode}", s.name);
                m.push(format!("{p}.episodes"), sum.episodes as f64, "count");
                m.push(format!("{p}.success_rate"), sum.success_rate, "fraction");
                m.push(format!("{p}.mean_position_error"), sum.mean_position_error, "m");
                m.push(format!("{p}.std_position_error"), sum.std_position_error, "m");
                m.push(format!("{p}.mean_yaw_error"), sum.mean_yaw_error, "rad");
            }
            m.push(format!("eval.{}.mean_replans", s.name), s.mean_replans, "count");
            m.push(format!("eval.{}.returns_nondecreasing", s.name), s.returns_nondecreasing, "fraction");
            m.push(format!("eval.{}.returns_trend_nondecreasing", s.name), s.returns_trend_nondecreasing, "fraction");
            m.push(format!("eval.{}.true_arrival_rate", s.name), s.true_arrival_rate, "fraction");
        }
        for f in &self.fixtures {
            let p = format!("fixture.{}", f.name);
            m.push(format!("{p}.open.mean_position_error"), f.open_loop.mean_position_error, "m");
            m.push(format!("{p}.open.success_rate"), f.open_loop.success_rate, "fraction");
            m.push(format!("{p}.histogram_mode"), f.histogram_mode, "m");
            m.push(format!("{p}.closed.position_error"), f.closed_loop_position_error, "m");
            m.push(format!("{p}.closed.replans"), f.normalized_returns.len() as f64, "count");
        }
    }
}

fn stratum(
    stack: &Stack,
    cfg: &ExperimentConfig,
    visible: bool,
    episodes: usize,
) -> Result<(StratumReport, Vec<EpisodeResult>, Vec<EpisodeResult>)> {
    let comps = stack.components();
    let target = stack.world.target_view_pose();
    let base = episode_seed(cfg.seeds.eval, u64::from(visible));
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    let (mut closed, mut open) = (Vec::new(), Vec::new());
    for i in 0..episodes {
        let start = spawn_pose(&stack.world, &cfg.dataset, &mut rng, visible);
        let seed = episode_seed(base, i as u64);
        closed.push(run_closed_loop(&comps, start, target, &cfg.controller, seed)?);
        open.push(run_open_loop(&comps, start, target, &cfg.controller, seed)?);
        log::debug!("{} episode {i}: success {}", if visible { "visible" } else { "invisible" }, closed[i].success);
    }
    let successes: Vec<&EpisodeResult> = closed.iter().filter(|r| r.success).collect();
    let frac = |f: &dyn Fn(&EpisodeResult) -> bool| {
        successes.iter().filter(|r| f(r)).count() as f64 / successes.len().max(1) as f64
    };
    let c = &cfg.controller;
    let true_arrivals = closed
        .iter()
        .filter(|r| r.final_position_error < c.arrival_distance && r.final_yaw_error < c.arrival_yaw)
        .count();
    let report = StratumReport {
        name: if visible { "visible" } else { "invisible" }.into(),
        target_visible: visible,
        closed: ModeSummary::of(&closed),
        open: ModeSummary::of(&open),
        mean_replans: closed.iter().map(|r| r.replans as f64).sum::<f64>() / episodes.max(1) as f64,
        returns_nondecreasing: frac(&|r| r.returns_nondecreasing()),
        returns_trend_nondecreasing: frac(&|r| r.returns_trend_nondecreasing()),
        true_arrival_rate: true_arrivals as f64 / episodes.max(1) as f64,
    };
    Ok((report, closed, open))
}

/// Runs both strata and every fixture. With `out_dir`, writes episode
/// records, histograms, path plots and the per-replan return table.
pub fn run_eval(stack: &Stack, cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<EvalReport> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut strata = Vec::new();
    for (visible, n) in [(false, cfg.eval.invisible_episodes), (true, cfg.eval.visible_episodes)] {
        let (report, closed, open) = stratum(stack, cfg, visible, n)?;
        if let Some(dir) = out_dir {
            let name = &report.name;
            write_episodes(&closed, &dir.join(format!("{name}_closed.jsonl")), &dir.join(format!("{name}_closed.csv")))?;
            write_episodes(&open, &dir.join(format!("{name}_open.jsonl")), &dir.join(format!("{name}_open.csv")))?;
            let errs: Vec<f64> = closed.iter().map(|r| r.final_position_error).collect();
            let h = Histogram::new(&errs, HIST_BINS, 0.0, HIST_MAX);
            h.write_csv(&dir.join(format!("{name}_closed_hist.csv")))?;
            h.write_png(&dir.join(format!("{name}_closed_hist.png")))?;
        }
        strata.push(report);
    }

    let comps = stack.components();
    let target = stack.world.target_view_pose();
    let mut fixtures = Vec::new();
    for (k, fx) in cfg.eval.fixtures.iter().enumerate() {
        let start: RobotPose = fx.start.into();
        let seed = episode_seed(cfg.seeds.eval, 100 + k as u64);
        let batch = run_open_loop_batch(&comps, start, target, cfg.eval.open_loop_samples, &cfg.controller, seed)?;
        let errs: Vec<f64> = batch
            .results
            .iter()
            .filter(|r| r.failure.is_none())
            .map(|r| r.final_position_error)
            .collect();
        let hist = Histogram::new(&errs, HIST_BINS, 0.0, HIST_MAX);
        let closed = run_closed_loop(&comps, start, target, &cfg.controller, seed)?;
        if let Some(dir) = out_dir {
            let name = &fx.name;
            hist.write_csv(&dir.join(format!("{name}_open_hist.csv")))?;
            hist.write_png(&dir.join(format!("{name}_open_hist.png")))?;
            write_paths(stack, &batch.results, &batch.mean_path, &batch.std_path, &closed, dir, name)?;
        }
        fixtures.push(FixtureReport {
            name: fx.name.clone(),
            start,
            open_loop: ModeSummary::of(&batch.results),
            histogram_mode: hist.mode_lower_edge(),
            closed_loop_success: closed.success,
            closed_loop_position_error: closed.final_position_error,
            raw_returns: closed.estimated_returns.clone(),
            normalized_returns: closed.normalized_returns.clone(),
        });
    }
    let report = EvalReport { strata, fixtures };
    if let Some(dir) = out_dir {
        write_json(&report, &dir.join("eval.json"))?;
        write_return_table(&report, &dir.join("returns_table.csv"))?;
    }
    Ok(report)
}

fn write_paths(
    stack: &Stack,
    runs: &[EpisodeResult],
    mean: &[[f64; 2]],
    std: &[[f64; 2]],
    closed: &EpisodeResult,
    dir: &Path,
    name: &str,
) -> Result<()> {
    let mut plot = RoomPlot::new(stack.world.config().room_size, 400);
    for r in runs {
        let pts: Vec<[f64; 2]> = r.poses.iter().map(|p| [p.x, p.y]).collect();
        plot.path(&pts, Rgb([190, 190, 220]));
    }
    plot.path(mean, Rgb([30, 60, 200]));
    let cl: Vec<[f64; 2]> = closed.poses.iter().map(|p| [p.x, p.y]).collect();
    plot.path(&cl, Rgb([200, 40, 40]));
    let t = stack.world.target_view_pose();
    plot.marker([t.x, t.y], Rgb([0, 150, 0]));
    if let Some(s) = runs.first() {
        plot.marker([s.start.x, s.start.y], Rgb([0, 0, 0]));
    }
    plot.save(&dir.join(format!("{name}_paths.png")))?;
    let mut w = csv::Writer::from_path(dir.join(format!("{name}_paths.csv"))).map_err(csv_err)?;
    w.write_record(["step", "mean_x", "mean_y", "std_x", "std_y"]).map_err(csv_err)?;
    for (k, (m, s)) in mean.iter().zip(std).enumerate() {
        w.write_record([k.to_string(), m[0].to_string(), m[1].to_string(), s[0].to_string(), s[1].to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per fixture: the normalized return estimate at each replan.
fn write_return_table(report: &EvalReport, path: &Path) -> Result<()> {
    let width = report.fixtures.iter().map(|f| f.normalized_returns.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["fixture".to_string()];
    header.extend((0..width).map(|k| format!("replan_{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for f in &report.fixtures {
        let mut row = vec![f.name.clone()];
        row.extend((0..width).map(|k| f.normalized_returns.get(k).map(|v| format!("{v:.4}")).unwrap_or_default()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
