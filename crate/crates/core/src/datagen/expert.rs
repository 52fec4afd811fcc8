use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{discounted_return, DatasetConfig, TrajectoryRecord};
use crate::world::{wrap_angle, Action, RobotPose, World};

const MAX_SPAWN_TRIES: usize = 10_000;

/// Draws a start pose uniformly in the room (away from the target-view pose)
/// whose first image does or does not contain the target, as requested.
pub fn spawn_pose<R: Rng + ?Sized>(
    world: &World,
    cfg: &DatasetConfig,
    rng: &mut R,
    target_visible: bool,
) -> RobotPose {
    let wc = world.config();
    let (lo, hi) = (wc.wall_margin, wc.room_size - wc.wall_margin);
    let goal = world.target_view_pose();
    for _ in 0..MAX_SPAWN_TRIES {
        let x = rng.gen_range(lo..hi);
        let y = rng.gen_range(lo..hi);
        let psi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pose = RobotPose::new(x, y, psi);
        if pose.distance_to(&goal) < cfg.min_spawn_distance {
            continue;
        }
        if world.target_visible(&pose) == target_visible {
            return pose;
        }
    }
    panic!("could not draw a spawn pose with target_visible = {target_visible}");
}

/// Noise-free scripted command: turn toward the target center while
/// translating straight toward the target-view position.
pub fn expert_action(world: &World, cfg: &DatasetConfig, pose: &RobotPose) -> Action {
    let [tx, ty, _] = world.target_center();
    let goal = world.target_view_pose();
    let bearing = (ty - pose.y).atan2(tx - pose.x);
    let omega = cfg.yaw_gain * wrap_angle(bearing - pose.psi);
    let (mut vx, mut vy) = (
        cfg.position_gain * (goal.x - pose.x),
        cfg.position_gain * (goal.y - pose.y),
    );
    let speed = vx.hypot(vy);
    let vmax = world.config().max_linear_speed;
    if speed > vmax {
        vx *= vmax / speed;
        vy *= vmax / speed;
    }
    let (s, c) = pose.psi.sin_cos();
    world.clamp_action(Action::new(c * vx + s * vy, -s * vx + c * vy, omega)).0
}

fn arrived(world: &World, cfg: &DatasetConfig, pose: &RobotPose) -> bool {
    let goal = world.target_view_pose();
    pose.distance_to(&goal) < cfg.arrival_distance && pose.yaw_error_to(&goal) < cfg.arrival_yaw
}

/// One noisy expert episode. Identical seeds give identical records.
pub fn expert_rollout(world: &World, cfg: &DatasetConfig, seed: u64) -> TrajectoryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let invisible = rng.gen_bool(cfg.invisible_fraction);
    let mut pose = spawn_pose(world, cfg, &mut rng, !invisible);
    let lin = Normal::new(0.0, cfg.noise_linear).expect("noise_linear >= 0");
    let yaw = Normal::new(0.0, cfg.noise_yaw).expect("noise_yaw >= 0");
    let dt = world.config().dt;

    let mut poses = vec![pose];
    let mut actions = Vec::new();
    let mut done = false;
    while actions.len() < cfg.max_steps {
        let a = expert_action(world, cfg, &pose);
        let noisy = Action::new(
            a.v_fwd + lin.sample(&mut rng),
            a.v_lat + lin.sample(&mut rng),
            a.omega + yaw.sample(&mut rng),
        );
        let out = world.step(pose, noisy, dt);
        pose = out.pose;
        actions.push(out.action);
        poses.push(pose);
        if arrived(world, cfg, &pose) {
            done = true;
            break;
        }
    }
    let images = poses.iter().map(|p| world.render(p)).collect();
    let feature_poses = poses.iter().map(|p| world.feature_pose(p)).collect();
    let rewards: Vec<f64> = poses.iter().map(|p| world.reward(p)).collect();
    let raw_return = discounted_return(&rewards, cfg.discount);
    TrajectoryRecord {
        seed,
        images,
        feature_poses,
        actions,
        rewards,
        poses,
        raw_return,
        norm_return: 0.0,
        arrived: done,
    }
}
