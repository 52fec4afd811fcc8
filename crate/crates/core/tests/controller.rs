use diffservo::cmvae::{Cmvae, CmvaeArch};
use diffservo::controller::{run_closed_loop, run_open_loop_batch, Components, ControllerConfig};
use diffservo::datagen::ReturnNormalizer;
use diffservo::ddpm::{Diffuser, DiffuserArch, DiffuserNet, DiffusionSchedule, LatentScaler};
use diffservo::planner::{Planner, PlannerConfig, VelocityMode, VelocityModel};
use diffservo::world::{RobotPose, World, WorldConfig};

struct Fixture {
    world: World,
    cmvae: Cmvae,
    diffuser: Diffuser,
    velocity: VelocityModel,
    config: PlannerConfig,
}

impl Fixture {
    fn new() -> Self {
        let world = World::new(WorldConfig {
            image_width: 16,
            image_height: 8,
            ..WorldConfig::default()
        });
        let cmvae = Cmvae::new(
            CmvaeArch {
                image_height: 8,
                image_width: 16,
                latent_dim: 6,
                channels: [2, 2, 2],
                hidden: 8,
                feature_hidden: 8,
            },
            4,
        )
        .unwrap();
        let net = DiffuserNet::new(
            DiffuserArch {
                latent_dim: 6,
                columns: 9,
                channels: 8,
                embed_dim: 8,
                kernel: 3,
                dilations: vec![1],
                inverse_hidden: 8,
            },
            5,
        );
        let diffuser = Diffuser {
            net,
            schedule: DiffusionSchedule::cosine(10).unwrap(),
            omega: 1.2,
            cond_dropout: 0.25,
            scaler: LatentScaler::identity(6),
            returns: ReturnNormalizer { min: -60.0, max: -10.0 },
            discount: 0.99,
            action_limits: (1.0, 1.0),
        };
        let velocity = VelocityModel {
            mode: VelocityMode::Average,
            v_avg: 0.6,
            coefficients: [0.0, 0.0, 0.6],
            v_min: 0.05,
            v_max: 1.0,
        };
        Self {
            world,
            cmvae,
            diffuser,
            velocity,
            config: PlannerConfig::default(),
        }
    }

    fn components(&self) -> Components<'_> {
        Components {
            world: &self.world,
            planner: Planner {
                cmvae: &self.cmvae,
                diffuser: &self.diffuser,
                velocity: &self.velocity,
                config: &self.config,
            },
        }
    }
}

/// Arrival thresholds no untrained stack can meet, so the loop runs to budget.
fn unreachable(n_exec: usize, max_replans: usize) -> ControllerConfig {
    ControllerConfig {
        n_exec,
        max_replans,
        arrival_distance: 1e-12,
        arrival_yaw: 1e-12,
        record_trace: false,
    }
}

#[test]
fn executed_actions_are_the_plan_prefix() {
    let fx = Fixture::new();
    let comps = fx.components();
    let target = fx.world.target_view_pose();
    for n_exec in [1, 3, 8] {
        let cfg = unreachable(n_exec, 4);
        let res = run_closed_loop(&comps, RobotPose::new(1.0, 1.5, 0.8), target, &cfg, 21).unwrap();
        assert_eq!(res.replans, 4);
        assert_eq!(res.replan_log.len(), 4);
        assert_eq!(res.steps_executed, 4 * n_exec);
        let mut pose = res.start;
        let mut k = 0;
        for rec in &res.replan_log {
            assert_eq!(rec.planned.len(), 8);
            assert_eq!(rec.executed, rec.planned[..n_exec]);
            assert_eq!(rec.pose, pose);
            for a in &rec.executed {
                pose = fx.world.step(pose, *a, fx.world.config().dt).pose;
                k += 1;
                assert_eq!(res.poses[k], pose);
            }
        }
        assert_eq!(res.final_pose, pose);
    }
}

#[test]
fn replans_never_exceed_the_budget() {
    let fx = Fixture::new();
    let comps = fx.components();
    let target = fx.world.target_view_pose();
    for budget in [0, 1, 5] {
        let res = run_closed_loop(&comps, RobotPose::new(2.0, 4.0, -2.0), target, &unreachable(2, budget), 3).unwrap();
        assert_eq!(res.replans, budget);
        assert_eq!(res.estimated_returns.len(), res.replans);
        assert_eq!(res.normalized_returns.len(), res.replans);
        assert!(!res.success);
    }
}

#[test]
fn starting_at_the_target_view_arrives_without_moving() {
    let fx = Fixture::new();
    let comps = fx.components();
    let target = fx.world.target_view_pose();
    let res = run_closed_loop(&comps, target, target, &ControllerConfig::default(), 1).unwrap();
    assert!(res.success);
    assert!(res.replans <= 1);
    assert_eq!(res.final_position_error, 0.0);
}

#[test]
fn invalid_n_exec_is_rejected() {
    let fx = Fixture::new();
    let comps = fx.components();
    let target = fx.world.target_view_pose();
    assert!(run_closed_loop(&comps, target, target, &unreachable(0, 3), 1).is_err());
    assert!(run_closed_loop(&comps, target, target, &unreachable(9, 3), 1).is_err());
}

#[test]
fn open_loop_batch_is_seeded_and_distinct() {
    let fx = Fixture::new();
    let comps = fx.components();
    let target = fx.world.target_view_pose();
    let start = RobotPose::new(1.2, 2.2, 0.3);
    let cfg = ControllerConfig::default();
    let a = run_open_loop_batch(&comps, start, target, 30, &cfg, 77).unwrap();
    let b = run_open_loop_batch(&comps, start, target, 30, &cfg, 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.results.len(), 30);
    let mut seeds: Vec<u64> = a.results.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 30);
    assert!(a.results.iter().all(|r| r.steps_executed == 8));
}
