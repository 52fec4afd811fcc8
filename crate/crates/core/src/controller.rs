//! Receding-horizon execution of plans in the simulator.

use serde::{Deserialize, Serialize};

use crate::planner::{Endpoints, Planner};
use crate::world::{wrap_angle, Action, FeaturePose, Image, RobotPose, World};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Actions executed from each plan before replanning.
    pub n_exec: usize,
    pub max_replans: usize,
    /// Arrival when the decoded camera distance to the goal view is below
    /// this many meters...
    pub arrival_distance: f64,
    /// ...and the decoded relative yaw error is below this many radians.
    pub arrival_yaw: f64,
    pub record_trace: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            n_exec: 5,
            max_replans: 20,
            arrival_distance: 0.5,
            arrival_yaw: 0.4,
            record_trace: false,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, horizon: usize) -> std::result::Result<(), String> {
        if self.n_exec < 1 || self.n_exec > horizon {
            return Err(format!("n_exec must be in 1..={horizon}"));
        }
        if self.arrival_distance <= 0.0 || self.arrival_yaw <= 0.0 {
            return Err("arrival thresholds must be positive".into());
        }
        Ok(())
    }

    pub fn arrived(&self, current: &FeaturePose, goal: &FeaturePose) -> bool {
        current.position_distance(goal) < self.arrival_distance && current.yaw_error(goal) < self.arrival_yaw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanRecord {
    pub pose: RobotPose,
    pub raw_return: f64,
    pub normalized_return: f64,
    /// Every action of the plan, executed or not.
    pub planned: Vec<Action>,
    pub executed: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub start: RobotPose,
    pub steps_executed: usize,
    pub replans: usize,
    /// Raw return estimate logged at each replan.
    pub estimated_returns: Vec<f64>,
    pub normalized_returns: Vec<f64>,
    pub final_pose: RobotPose,
    pub final_position_error: f64,
    pub final_yaw_error: f64,
    pub success: bool,
    /// Stage name when a component failed and the episode was aborted.
    pub failure: Option<String>,
    pub poses: Vec<RobotPose>,
    pub replan_log: Vec<ReplanRecord>,
    #[serde(skip)]
    pub images: Vec<Image>,
}

impl EpisodeResult {
    fn new(seed: u64, start: RobotPose) -> Self {
        Self {
            seed,
            start,
            steps_executed: 0,
            replans: 0,
            estimated_returns: Vec::new(),
            normalized_returns: Vec::new(),
            final_pose: start,
            final_position_error: f64::NAN,
            final_yaw_error: f64::NAN,
            success: false,
            failure: None,
            poses: vec![start],
            replan_log: Vec::new(),
            images: Vec::new(),
        }
    }

    fn finish(&mut self, pose: RobotPose, target: &RobotPose) {
        self.final_pose = pose;
        self.final_position_error = pose.distance_to(target);
        self.final_yaw_error = wrap_angle(pose.psi - target.psi).abs();
    }

    /// True when the logged return estimates never decrease.
    pub fn returns_nondecreasing(&self) -> bool {
        self.estimated_returns.windows(2).all(|w| w[1] >= w[0])
    }

    /// Least-squares slope of the logged return estimates against the replan
    /// index; zero for fewer than two replans.
    pub fn return_trend(&self) -> f64 {
        let y = &self.estimated_returns;
        let n = y.len() as f64;
        if y.len() < 2 {
            return 0.0;
        }
        let mx = (n - 1.0) / 2.0;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, v) in y.iter().enumerate() {
            let dx = i as f64 - mx;
            sxy += dx * (v - my);
            sxx += dx * dx;
        }
        sxy / sxx
    }

    /// The return estimates trend upward (non-negative fitted slope).
    pub fn returns_trend_nondecreasing(&self) -> bool {
        self.return_trend() >= 0.0
    }
}

/// Simulator plus trained planning stack.
#[derive(Debug, Clone, Copy)]
pub struct Components<'a> {
    pub world: &'a World,
    pub planner: Planner<'a>,
}

fn plan_seed(seed: u64, replan: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(replan as u64)
}

fn stage_label(e: &Error) -> String {
    match e {
        Error::SamplerDiverged { .. } => format!("sampling: {e}"),
        Error::Shape { .. } => format!("encoding: {e}"),
        _ => format!("planning: {e}"),
    }
}

/// Plans from the live render, executes the first `n_exec` actions, and
/// repeats until decoded arrival or the replan budget runs out. The target
/// latent is encoded once and reused.
pub fn run_closed_loop(
    comps: &Components<'_>,
    start: RobotPose,
    target_pose: RobotPose,
    cfg: &ControllerConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    cfg.validate(comps.planner.diffuser.horizon()).map_err(Error::Config)?;
    let world = comps.world;
    let dt = world.config().dt;
    let target_image = world.render(&target_pose);
    let (z_goal, goal_feature) = comps.planner.encode(&target_image)?;
    let mut res = EpisodeResult::new(seed, start);
    let mut pose = start;
    loop {
        let image = world.render(&pose);
        let (z, fp) = match comps.planner.encode(&image) {
            Ok(v) => v,
            Err(e) => {
                res.failure = Some(stage_label(&e));
                break;
            }
        };
        if cfg.record_trace {
            res.images.push(image);
        }
        if cfg.arrived(&fp, &goal_feature) {
            res.success = true;
            break;
        }
        if res.replans == cfg.max_replans {
            break;
        }
        let ends = Endpoints {
            z_start: z,
            z_goal: z_goal.clone(),
            start_feature: fp,
            goal_feature,
        };
        let plan = match comps.planner.plan_batch(&ends, None, &[plan_seed(seed, res.replans)]) {
            Ok(mut p) => p.remove(0),
            Err(e) => {
                res.failure = Some(stage_label(&e));
                break;
            }
        };
        res.replans += 1;
        res.estimated_returns.push(plan.diagnostics.raw_return);
        res.normalized_returns.push(plan.diagnostics.normalized_return);
        let executed: Vec<Action> = plan.actions[..cfg.n_exec].to_vec();
        res.replan_log.push(ReplanRecord {
            pose,
            raw_return: plan.diagnostics.raw_return,
            normalized_return: plan.diagnostics.normalized_return,
            planned: plan.actions.clone(),
            executed: executed.clone(),
        });
        for a in executed {
            pose = world.step(pose, a, dt).pose;
            res.poses.push(pose);
            res.steps_executed += 1;
        }
    }
    res.finish(pose, &target_pose);
    Ok(res)
}

/// Executes a whole plan without replanning.
fn execute_open_loop(
    comps: &Components<'_>,
    start: RobotPose,
    target_pose: &RobotPose,
    actions: &[Action],
    goal_feature: &FeaturePose,
    cfg: &ControllerConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    let world = comps.world;
    let mut res = EpisodeResult::new(seed, start);
    let mut pose = start;
    for &a in actions {
        pose = world.step(pose, a, world.config().dt).pose;
        res.poses.push(pose);
        res.steps_executed += 1;
    }
    let (_, fp) = comps.planner.encode(&world.render(&pose))?;
    res.success = cfg.arrived(&fp, goal_feature);
    res.finish(pose, target_pose);
    Ok(res)
}

/// Executes in full the plan that `run_closed_loop` with the same `seed`
/// makes first, so open- and closed-loop runs are matched.
pub fn run_open_loop(
    comps: &Components<'_>,
    start: RobotPose,
    target_pose: RobotPose,
    cfg: &ControllerConfig,
    seed: u64,
) -> Result<EpisodeResult> {
    let world = comps.world;
    let (z_goal, goal_feature) = comps.planner.encode(&world.render(&target_pose))?;
    let (z_start, start_feature) = comps.planner.encode(&world.render(&start))?;
    let ends = Endpoints {
        z_start,
        z_goal,
        start_feature,
        goal_feature,
    };
    let plan = comps.planner.plan_batch(&ends, None, &[plan_seed(seed, 0)])?.remove(0);
    let mut r = execute_open_loop(comps, start, &target_pose, &plan.actions, &goal_feature, cfg, seed)?;
    r.replans = 1;
    r.estimated_returns.push(plan.diagnostics.raw_return);
    r.normalized_returns.push(plan.diagnostics.normalized_return);
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopBatch {
    pub results: Vec<EpisodeResult>,
    pub mean_position_error: f64,
    pub std_position_error: f64,
    pub mean_yaw_error: f64,
    pub success_rate: f64,
    /// Per-step mean and standard deviation of `(x, y)` over runs.
    pub mean_path: Vec<[f64; 2]>,
    pub std_path: Vec<[f64; 2]>,
}

/// Seed of run `i` of an open-loop batch.
pub fn open_loop_seed(batch_seed: u64, i: usize) -> u64 {
    plan_seed(batch_seed ^ 0x0be1_1007, i)
}

/// Samples `count` plans with distinct seeds from one start and executes each
/// in full. A failed sample is recorded and the batch continues.
pub fn run_open_loop_batch(
    comps: &Components<'_>,
    start: RobotPose,
    target_pose: RobotPose,
    count: usize,
    cfg: &ControllerConfig,
    batch_seed: u64,
) -> Result<OpenLoopBatch> {
    let world = comps.world;
    let (z_start, start_feature) = comps.planner.encode(&world.render(&start))?;
    let (z_goal, goal_feature) = comps.planner.encode(&world.render(&target_pose))?;
    let ends = Endpoints {
        z_start,
        z_goal,
        start_feature,
        goal_feature,
    };
    let seeds: Vec<u64> = (0..count).map(|i| open_loop_seed(batch_seed, i)).collect();
    let mut results = Vec::with_capacity(count);
    for chunk in seeds.chunks(25) {
        match comps.planner.plan_batch(&ends, None, chunk) {
            Ok(plans) => {
                for (plan, &seed) in plans.iter().zip(chunk) {
                    let mut r = execute_open_loop(comps, start, &target_pose, &plan.actions, &goal_feature, cfg, seed)?;
                    r.replans = 1;
                    r.estimated_returns.push(plan.diagnostics.raw_return);
                    r.normalized_returns.push(plan.diagnostics.normalized_return);
                    results.push(r);
                }
            }
            Err(e) => {
                for &seed in chunk {
                    let mut r = EpisodeResult::new(seed, start);
                    r.failure = Some(stage_label(&e));
                    r.finish(start, &target_pose);
                    results.push(r);
                }
            }
        }
    }
    Ok(summarize_open_loop(results))
}

pub fn summarize_open_loop(results: Vec<EpisodeResult>) -> OpenLoopBatch {
    let ok: Vec<&EpisodeResult> = results.iter().filter(|r| r.failure.is_none()).collect();
    let n = ok.len().max(1) as f64;
    let mean = ok.iter().map(|r| r.final_position_error).sum::<f64>() / n;
    let var = ok
        .iter()
        .map(|r| (r.final_position_error - mean).powi(2))
        .sum::<f64>()
        / n;
    let steps = ok.iter().map(|r| r.poses.len()).max().unwrap_or(0);
    let mut mean_path = Vec::with_capacity(steps);
    let mut std_path = Vec::with_capacity(steps);
    for k in 0..steps {
        let pts: Vec<[f64; 2]> = ok
            .iter()
            .map(|r| {
                let p = r.poses[k.min(r.poses.len() - 1)];
                [p.x, p.y]
            })
            .collect();
        let m = [
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        let s = [
            (pts.iter().map(|p| (p[0] - m[0]).powi(2)).sum::<f64>() / n).sqrt(),
            (pts.iter().map(|p| (p[1] - m[1]).powi(2)).sum::<f64>() / n).sqrt(),
        ];
        mean_path.push(m);
        std_path.push(s);
    }
    OpenLoopBatch {
        mean_position_error: mean,
        std_position_error: var.sqrt(),
        mean_yaw_error: ok.iter().map(|r| r.final_yaw_error).sum::<f64>() / n,
        success_rate: ok.iter().filter(|r| r.success).count() as f64 / n,
        mean_path,
        std_path,
        results,
    }
}
