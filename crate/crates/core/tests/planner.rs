mod common;

use diffservo::cmvae::{Cmvae, CmvaeArch, LatentVector};
use diffservo::datagen::ReturnNormalizer;
use diffservo::ddpm::{Diffuser, DiffuserArch, DiffuserNet, DiffusionSchedule, LatentScaler, ReturnCondition};
use diffservo::planner::{
    estimate_return, estimate_return_cartesian, fit_velocity_samples, inpaint_sample_batch, PlanRequest,
    Planner, PlannerConfig, SpeedSample, VelocityMode, VelocityModel,
};
use diffservo::world::{FeaturePose, World, WorldConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{norm3, slide_return, target_frame};

#[test]
fn brute_force_agrees_on_a_thousand_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let mut pose = || FeaturePose {
            r: rng.gen_range(0.2..6.0),
            theta: rng.gen_range(-3.1..3.1),
            phi: rng.gen_range(-0.5..0.5),
            gamma: rng.gen_range(-3.1..3.1),
        };
        let (a, b) = (pose(), pose());
        let v = rng.gen_range(0.05..2.0);
        let discount = rng.gen_range(0.5..1.0);
        let n = rng.gen_range(1..40);
        let got = estimate_return(&a, &b, v, discount, n).unwrap();
        let want = slide_return(target_frame(&a), target_frame(&b), discount, n);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn stationary_case_is_exact() {
    let fp = FeaturePose {
        r: 2.7,
        theta: 0.4,
        phi: -0.1,
        gamma: 1.1,
    };
    let (discount, n) = (std::hint::black_box(0.9f64), 31);
    let weights: f64 = (0..=n).map(|k| discount.powi(k as i32)).sum();
    let want = -norm3(target_frame(&fp)) * weights;
    assert_eq!(estimate_return(&fp, &fp, 0.5, discount, n).unwrap(), want);
}

#[test]
fn linear_slide_fixture() {
    let got = estimate_return_cartesian([4.0, 0.0, 0.0], [1.0, 0.0, 0.0], 1.0, 1.0, 3).unwrap();
    assert!((got + 10.0).abs() < 1e-12);
}

#[test]
fn invalid_speed_or_horizon_is_rejected() {
    assert!(estimate_return_cartesian([1.0, 0.0, 0.0], [0.0; 3], 0.0, 0.9, 3).is_err());
    assert!(estimate_return_cartesian([1.0, 0.0, 0.0], [0.0; 3], 1.0, 0.9, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn estimate_does_not_depend_on_speed(
        r0 in prop::array::uniform3(-5.0f64..5.0),
        rn in prop::array::uniform3(-5.0f64..5.0),
        v1 in 0.05f64..3.0, v2 in 0.05f64..3.0,
        discount in 0.5f64..1.0, n in 1usize..40,
    ) {
        let a = estimate_return_cartesian(r0, rn, v1, discount, n).unwrap();
        let b = estimate_return_cartesian(r0, rn, v2, discount, n).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    /// Moving the start outward along its ray lowers the estimate whenever
    /// the goal offset does not point against that ray.
    #[test]
    fn farther_start_lowers_the_estimate(
        dir in prop::array::uniform3(-1.0f64..1.0),
        rn in prop::array::uniform3(-4.0f64..4.0),
        near in 0.1f64..4.0, extra in 0.05f64..4.0,
        discount in 0.5f64..1.0, n in 1usize..40,
    ) {
        let len = norm3(dir);
        prop_assume!(len > 1e-3);
        let u = [dir[0] / len, dir[1] / len, dir[2] / len];
        let dot = u[0] * rn[0] + u[1] * rn[1] + u[2] * rn[2];
        let rn = if dot < 0.0 { [-rn[0], -rn[1], -rn[2]] } else { rn };
        let at = |s: f64| estimate_return_cartesian([s * u[0], s * u[1], s * u[2]], rn, 1.0, discount, n).unwrap();
        prop_assert!(at(near + extra) < at(near));
    }
}

#[test]
fn regression_recovers_linear_speeds() {
    let (a, b, c) = (0.12, -0.07, 0.41);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<SpeedSample> = (0..60)
        .map(|_| {
            let d_lin = rng.gen_range(0.5..6.0);
            let d_yaw = rng.gen_range(0.0..3.0);
            SpeedSample {
                d_lin,
                d_yaw,
                speed: a * d_lin + b * d_yaw + c,
            }
        })
        .collect();
    let m = fit_velocity_samples(&samples, VelocityMode::Regression, 0.05, 1.0).unwrap();
    assert_eq!(m.mode, VelocityMode::Regression);
    for (got, want) in m.coefficients.iter().zip([a, b, c]) {
        assert!((got - want).abs() < 1e-6);
    }
    assert_eq!(m.predict(1e6, 0.0), 1.0);
    assert_eq!(m.predict(-1e6, 0.0), 0.05);
}

fn diffuser(d: usize, columns: usize) -> Diffuser {
    let net = DiffuserNet::new(
        DiffuserArch {
            latent_dim: d,
            columns,
            channels: 8,
            embed_dim: 8,
            kernel: 3,
            dilations: vec![1, 2],
            inverse_hidden: 8,
        },
        3,
    );
    Diffuser {
        net,
        schedule: DiffusionSchedule::cosine(20).unwrap(),
        omega: 1.2,
        cond_dropout: 0.25,
        scaler: LatentScaler {
            mean: (0..d).map(|i| 0.3 * i as f64 - 0.7).collect(),
            std: (0..d).map(|i| 0.5 + 0.25 * i as f64).collect(),
        },
        returns: ReturnNormalizer { min: -80.0, max: -20.0 },
        discount: 0.99,
        action_limits: (1.0, 1.0),
    }
}

fn random_latent(rng: &mut ChaCha8Rng, d: usize) -> LatentVector {
    LatentVector((0..d).map(|_| rng.gen_range(-3.0..3.0)).collect())
}

#[test]
fn inpainted_endpoints_are_exact_at_every_step() {
    let (d, l) = (6, 9);
    let dif = diffuser(d, l);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let requests: Vec<PlanRequest> = (0..8)
        .map(|seed| PlanRequest {
            z_start: random_latent(&mut rng, d),
            z_goal: random_latent(&mut rng, d),
            return_condition: ReturnCondition::new(rng.gen_range(-1.0..1.0)).unwrap(),
            omega: 1.2,
            seed,
        })
        .collect();
    let anchors: Vec<(Vec<f64>, Vec<f64>)> = requests
        .iter()
        .map(|r| (dif.scaler.standardize(&r.z_start.0), dif.scaler.standardize(&r.z_goal.0)))
        .collect();
    let mut steps = 0;
    let mut observer = |_t: usize, x: &[f64]| {
        steps += 1;
        for (b, (s, g)) in anchors.iter().enumerate() {
            let row = &x[b * d * l..(b + 1) * d * l];
            for i in 0..d {
                assert_eq!(row[i * l].to_bits(), s[i].to_bits());
                assert_eq!(row[i * l + l - 1].to_bits(), g[i].to_bits());
            }
        }
    };
    let out = inpaint_sample_batch(&requests, &dif, Some(&mut observer)).unwrap();
    assert_eq!(steps, 20);
    for (traj, req) in out.iter().zip(&requests) {
        assert_eq!(traj.columns.len(), l);
        assert_eq!(traj.columns[0], req.z_start);
        assert_eq!(traj.columns[l - 1], req.z_goal);
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let dif = diffuser(4, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let req = PlanRequest {
        z_start: random_latent(&mut rng, 4),
        z_goal: random_latent(&mut rng, 4),
        return_condition: ReturnCondition::new(0.2).unwrap(),
        omega: 1.2,
        seed: 11,
    };
    let other = PlanRequest { seed: 12, ..req.clone() };
    let a = inpaint_sample_batch(&[req.clone(), other.clone()], &dif, None).unwrap();
    let b = inpaint_sample_batch(&[req], &dif, None).unwrap();
    let c = inpaint_sample_batch(&[other], &dif, None).unwrap();
    assert_eq!(a[0], b[0]);
    assert_eq!(a[1], c[0]);
    assert_ne!(a[0], a[1]);
}

#[test]
fn plan_has_consistent_shapes_and_clamped_condition() {
    let wc = WorldConfig {
        image_width: 16,
        image_height: 8,
        ..WorldConfig::default()
    };
    let world = World::new(wc);
    let cmvae = Cmvae::new(
        CmvaeArch {
            image_height: 8,
            image_width: 16,
            latent_dim: 6,
            channels: [2, 2, 2],
            hidden: 8,
            feature_hidden: 8,
        },
        1,
    )
    .unwrap();
    let dif = diffuser(6, 8);
    let velocity = VelocityModel {
        mode: VelocityMode::Average,
        v_avg: 0.5,
        coefficients: [0.0, 0.0, 0.5],
        v_min: 0.05,
        v_max: 1.0,
    };
    let config = PlannerConfig::default();
    let planner = Planner {
        cmvae: &cmvae,
        diffuser: &dif,
        velocity: &velocity,
        config: &config,
    };
    let start = world.render(&diffservo::world::RobotPose::new(2.0, 2.0, 0.3));
    let target = world.render(&world.target_view_pose());
    let plan = planner.plan(&start, &target, 4).unwrap();
    let d = &plan.diagnostics;
    assert_eq!(plan.trajectory.columns.len(), 8);
    assert_eq!(plan.actions.len(), 7);
    assert_eq!(d.column_distances.len(), 8);
    assert!((-1.0..=1.0).contains(&d.condition));
    assert_eq!(d.return_out_of_range, !(-1.0..=1.0).contains(&dif.returns.normalize(d.raw_return)));
    assert_eq!(planner.plan(&start, &target, 4).unwrap(), plan);
}
