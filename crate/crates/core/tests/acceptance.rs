//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-8 run on small fixtures. Criteria 9-15 train the default
//! stack once (cached under the cargo target directory; set
//! `DIFFSERVO_ACCEPTANCE_DIR` to use another location) and read the
//! pipeline's reports.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use diffservo::cmvae::{kl_to_standard_normal, Cmvae, CmvaeArch, CmvaeBatch, LatentVector};
use diffservo::datagen::ReturnNormalizer;
use diffservo::ddpm::{
    forward_sample, joint_loss_graph, joint_training_loss, unconditional_loss, Diffuser, DiffuserArch,
    DiffuserNet, DiffusionSchedule, JointRandomness, LatentScaler, ReturnCondition, TrajectoryBatch,
};
use diffservo::harness::{run_pipeline, EvalReport, ExperimentConfig, Stack, StageName, SweepReport};
use diffservo::planner::{estimate_return, estimate_return_cartesian, inpaint_sample_batch, PlanRequest};
use diffservo::world::{FeaturePose, Image};
use diffservo_nn::gradcheck::check_gradients;
use diffservo_nn::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use common::{energy_statistic, kl_numeric_1d, norm3, slide_return, target_frame};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn small_diffuser(d: usize, columns: usize, steps: usize, seed: u64) -> Diffuser {
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
        seed,
    );
    Diffuser {
        net,
        schedule: DiffusionSchedule::cosine(steps).unwrap(),
        omega: 1.2,
        cond_dropout: 0.25,
        scaler: LatentScaler {
            mean: (0..d).map(|i| 0.2 * i as f64 - 0.5).collect(),
            std: (0..d).map(|i| 0.6 + 0.2 * i as f64).collect(),
        },
        returns: ReturnNormalizer { min: -1.0, max: 1.0 },
        discount: 0.99,
        action_limits: (1.0, 1.0),
    }
}

fn random_batch(rng: &mut ChaCha8Rng, size: usize, d: usize, l: usize) -> TrajectoryBatch {
    TrajectoryBatch {
        size,
        x0: (0..size * d * l).map(|_| StandardNormal.sample(rng)).collect(),
        returns: (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        actions: (0..size * (l - 1) * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn schedule_identity() -> Outcome {
    let start = Instant::now();
    let s = DiffusionSchedule::cosine(100).unwrap();
    let mut prod = 1.0;
    let mut worst: f64 = 0.0;
    let mut decreasing = true;
    for t in 1..=100 {
        prod *= 1.0 - s.beta(t);
        worst = worst.max((s.alpha_bar(t) - prod).abs());
        decreasing &= s.alpha_bar(t) < s.alpha_bar(t - 1);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && decreasing && s.alpha_bar(100) < 0.01 && secs < 1.0,
        format!("max |diff| {worst:.1e}, decreasing {decreasing}, final {:.2e}, {secs:.3} s", s.alpha_bar(100)),
    )
}

fn forward_marginal() -> Outcome {
    let start = Instant::now();
    let s = DiffusionSchedule::cosine(100).unwrap();
    let (t, n, sub) = (40, 10_000, 1500);
    let x0 = [1.5, -0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let iterated: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let mut x = x0;
            for k in 1..=t {
                let b = s.beta(k);
                for v in &mut x {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v = (1.0 - b).sqrt() * *v + b.sqrt() * e;
                }
            }
            x
        })
        .collect();
    let closed: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let e = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            let v = forward_sample(&s, &x0, t, &e).unwrap();
            [v[0], v[1]]
        })
        .collect();
    let stat = energy_statistic(&iterated, &closed);
    let mut pool: Vec<[f64; 2]> = iterated[..sub].iter().chain(&closed[..sub]).copied().collect();
    let mut null: Vec<f64> = (0..199)
        .map(|_| {
            for i in (1..pool.len()).rev() {
                let j = rng.gen_range(0..=i);
                pool.swap(i, j);
            }
            energy_statistic(&pool[..sub], &pool[sub..])
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let critical = null[(0.99 * null.len() as f64) as usize];
    let secs = start.elapsed().as_secs_f64();
    outcome(
        stat < critical && secs < 30.0,
        format!("energy statistic {stat:.3} vs 1% critical {critical:.3}, {secs:.1} s"),
    )
}

fn dropout_reduction() -> Outcome {
    let dif = small_diffuser(3, 6, 20, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut all = true;
    for _ in 0..10 {
        let batch = random_batch(&mut rng, 5, 3, 6);
        let mut rnd = JointRandomness::draw(&mut rng, 5, 18, 20, 0.25);
        rnd.drop = vec![true; 5];
        let joint = joint_training_loss(&dif.net, &dif.schedule, &batch, &rnd);
        let plain = unconditional_loss(&dif.net, &dif.schedule, &batch, &rnd.t, &rnd.noise);
        all &= joint.diffusion.to_bits() == plain.to_bits();
    }
    outcome(all, "10 batches, diffusion term bit-identical")
}

fn guidance_affinity() -> Outcome {
    let dif = small_diffuser(4, 8, 10, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for t in [1, 5, 10] {
        let x: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = ReturnCondition::new(rng.gen_range(-1.0..1.0)).unwrap();
        let at = |w: f64| dif.guided_noise_with(&x, r, t, w).unwrap();
        let (e0, e1) = (at(0.0), at(1.0));
        for w in [0.0, 0.5, 1.0, 2.0] {
            let ew = at(w);
            for i in 0..x.len() {
                worst = worst.max((ew[i] - e0[i] - w * (e1[i] - e0[i])).abs());
            }
        }
    }
    outcome(worst <= 1e-9, format!("max deviation {worst:.1e}"))
}

fn kl_closed_form() -> Outcome {
    let unit = kl_to_standard_normal(&[1.0], &[0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.gen_range(1..4);
        let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let log_var: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.0)).collect();
        let numeric: f64 = mean
            .iter()
            .zip(&log_var)
            .map(|(m, lv)| kl_numeric_1d(*m, (0.5 * lv).exp()))
            .sum();
        worst = worst.max((kl_to_standard_normal(&mean, &log_var) - numeric).abs());
    }
    outcome(
        unit == 0.5 && worst < 1e-6,
        format!("unit case {unit}, max |closed - numeric| {worst:.1e} over 50 draws"),
    )
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let worst = |entries: &[diffservo_nn::gradcheck::GradCheckEntry]| {
        entries
            .iter()
            .filter(|e| e.analytic.abs().max(e.numeric.abs()) > 1e-7)
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    };

    let vae = Cmvae::new(
        CmvaeArch {
            image_height: 8,
            image_width: 8,
            latent_dim: 6,
            channels: [2, 3, 3],
            hidden: 8,
            feature_hidden: 6,
        },
        5,
    )
    .unwrap();
    let images: Vec<Image> = (0..3)
        .map(|_| {
            let p: Vec<f64> = (0..3 * 64).map(|_| rng.gen::<f64>()).collect();
            Image::from_planar(8, 8, &p)
        })
        .collect();
    let poses: Vec<FeaturePose> = (0..3)
        .map(|_| FeaturePose {
            r: rng.gen_range(0.5..4.0),
            theta: rng.gen_range(-3.0..3.0),
            phi: rng.gen_range(-0.4..0.4),
            gamma: rng.gen_range(-3.0..3.0),
        })
        .collect();
    let refs: Vec<&Image> = images.iter().collect();
    let batch = CmvaeBatch::new(&refs, &poses);
    let noise: Vec<f64> = (0..18).map(|_| StandardNormal.sample(&mut rng)).collect();
    let weights = [1.0, 1.0, 0.1];
    let mut g = Graph::new();
    let (total, _) = vae.loss_graph(&mut g, vae.params(), &batch, &noise, weights);
    let grads = g.backward(total);
    let mut store = vae.params().clone();
    let ids: Vec<_> = store.ids().collect();
    let cm = check_gradients(&mut store, &ids, &grads, 3, 1e-5, &mut rng, |p| {
        let mut g = Graph::no_grad();
        vae.loss_graph(&mut g, p, &batch, &noise, weights).1.total
    });

    let dif = small_diffuser(3, 6, 20, 8);
    let tb = random_batch(&mut rng, 3, 3, 6);
    let rnd = JointRandomness::draw(&mut rng, 3, 18, 20, 0.5);
    let mut g = Graph::new();
    let (total, _) = joint_loss_graph(&dif.net, &dif.schedule, &mut g, dif.net.params(), &tb, &rnd);
    let grads = g.backward(total);
    let mut store = dif.net.params().clone();
    let ids: Vec<_> = store.ids().collect();
    let jt = check_gradients(&mut store, &ids, &grads, 3, 1e-5, &mut rng, |p| {
        let mut g = Graph::no_grad();
        joint_loss_graph(&dif.net, &dif.schedule, &mut g, p, &tb, &rnd).1.total
    });
    let (a, b) = (worst(&cm), worst(&jt));
    outcome(
        a <= 1e-3 && b <= 1e-3 && !cm.is_empty() && !jt.is_empty(),
        format!("cmvae max rel {a:.1e} ({} entries), joint max rel {b:.1e} ({} entries)", cm.len(), jt.len()),
    )
}

fn return_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst: f64 = 0.0;
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
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    let fp = FeaturePose {
        r: 2.7,
        theta: 0.4,
        phi: -0.1,
        gamma: 1.1,
    };
    let (discount, n) = (std::hint::black_box(0.9f64), 31);
    let weights: f64 = (0..=n).map(|k| discount.powi(k as i32)).sum();
    let stationary = estimate_return(&fp, &fp, 0.5, discount, n).unwrap() == -norm3(target_frame(&fp)) * weights;
    let slide = estimate_return_cartesian([4.0, 0.0, 0.0], [1.0, 0.0, 0.0], 1.0, 1.0, 3).unwrap();
    outcome(
        worst <= 1e-9 && stationary && (slide + 10.0).abs() < 1e-12,
        format!("1000 fixtures max rel {worst:.1e}, stationary exact {stationary}, slide {slide}"),
    )
}

fn inpainting_exact(requests: &[PlanRequest], dif: &Diffuser) -> bool {
    let (d, l) = (dif.latent_dim(), dif.horizon() + 1);
    let anchors: Vec<(Vec<f64>, Vec<f64>)> = requests
        .iter()
        .map(|r| (dif.scaler.standardize(&r.z_start.0), dif.scaler.standardize(&r.z_goal.0)))
        .collect();
    let mut ok = true;
    let mut observer = |_t: usize, x: &[f64]| {
        for (b, (s, g)) in anchors.iter().enumerate() {
            let row = &x[b * d * l..(b + 1) * d * l];
            for i in 0..d {
                ok &= row[i * l].to_bits() == s[i].to_bits() && row[i * l + l - 1].to_bits() == g[i].to_bits();
            }
        }
    };
    let out = inpaint_sample_batch(requests, dif, Some(&mut observer)).unwrap();
    ok && out
        .iter()
        .zip(requests)
        .all(|(t, r)| t.columns[0] == r.z_start && t.columns[l - 1] == r.z_goal)
}

fn requests_for(rng: &mut ChaCha8Rng, d: usize, count: usize) -> Vec<PlanRequest> {
    (0..count as u64)
        .map(|seed| PlanRequest {
            z_start: LatentVector((0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()),
            z_goal: LatentVector((0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()),
            return_condition: ReturnCondition::new(rng.gen_range(-1.0..1.0)).unwrap(),
            omega: 1.2,
            seed,
        })
        .collect()
}

fn inpainting(stack: Option<&Stack>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let small = small_diffuser(6, 9, 20, 3);
    let mut runs = 0;
    let mut ok = true;
    for _ in 0..5 {
        ok &= inpainting_exact(&requests_for(&mut rng, 6, 8), &small);
        runs += 8;
    }
    if let Some(s) = stack {
        ok &= inpainting_exact(&requests_for(&mut rng, s.diffuser.latent_dim(), 8), &s.diffuser);
        runs += 8;
    }
    outcome(ok, format!("{runs} sampled trajectories, endpoints bit-equal at every step"))
}

fn acceptance_config(dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        name: "acceptance".into(),
        output_dir: dir,
        ..ExperimentConfig::default()
    }
}

fn metric(rows: &[diffservo::harness::MetricsRow], name: &str) -> f64 {
    rows.iter().find(|r| r.metric == name).map_or(f64::NAN, |r| r.value)
}

fn read_json<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "schedule identity", schedule_identity()),
        (2, "forward marginal equivalence", forward_marginal()),
        (3, "classifier-free reduction", dropout_reduction()),
        (4, "guidance affinity", guidance_affinity()),
        (5, "KL closed form", kl_closed_form()),
        (6, "gradient checks", gradient_checks()),
        (7, "return-estimation oracle", return_oracle()),
    ];

    let dir = std::env::var_os("DIFFSERVO_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    let cfg = acceptance_config(dir.clone());
    let start = Instant::now();
    let pipeline = run_pipeline(&cfg);
    let trained = match pipeline {
        Ok(outcome) => {
            println!(
                "trained stack in {} (ran {:?}, cached {:?}) after {:.0} s",
                dir.display(),
                outcome.ran,
                outcome.skipped,
                start.elapsed().as_secs_f64()
            );
            Some((outcome, Stack::load(&cfg).expect("artifacts after a successful run")))
        }
        Err(e) => {
            println!("pipeline failed: {e}");
            None
        }
    };
    results.push((8, "inpainting exactness", inpainting(trained.as_ref().map(|t| &t.1))));

    let trained_results: Vec<(usize, &str, Outcome)> = match &trained {
        None => (9..=15)
            .map(|i| (i, "trained stack", outcome(false, "pipeline did not complete")))
            .collect(),
        Some((run, _)) => {
            let rows = &run.metrics;
            let sweep: SweepReport = read_json(dir.join(StageName::Sweep.artifact()));
            let eval: EvalReport = read_json(dir.join(StageName::Eval.artifact()));
            let (r, th) = (metric(rows, "cmvae.median_r_error"), metric(rows, "cmvae.median_theta_error"));
            let (mse, var) = (metric(rows, "ddpm.inverse_holdout_mse"), metric(rows, "ddpm.action_variance"));
            let low = sweep.ordering("low").unwrap();
            let est = sweep.ordering("estimate").unwrap();
            let high = sweep.ordering("high").unwrap();
            let inv = eval.stratum(false).unwrap();
            let all_closed: f64 = eval
                .strata
                .iter()
                .map(|s| s.closed.mean_position_error * s.closed.episodes as f64)
                .sum::<f64>()
                / eval.strata.iter().map(|s| s.closed.episodes as f64).sum::<f64>();
            let all_open: f64 = eval
                .strata
                .iter()
                .map(|s| s.open.mean_position_error * s.open.episodes as f64)
                .sum::<f64>()
                / eval.strata.iter().map(|s| s.open.episodes as f64).sum::<f64>();
            vec![
                (
                    9,
                    "CM-VAE feature decoding",
                    outcome(r < 0.2 && th < 0.1, format!("median held-out r error {r:.3} m, theta error {th:.3} rad")),
                ),
                (
                    10,
                    "inverse dynamics",
                    outcome(mse < 0.1 * var, format!("held-out MSE {mse:.4} vs 10% of variance {:.4}", 0.1 * var)),
                ),
                (
                    11,
                    "return-conditioning ordering",
                    outcome(
                        low.mean_distance > est.mean_distance && high.mean_max_latent_jump > est.mean_max_latent_jump,
                        format!(
                            "{} plans/level; mean distance low {:.3} vs estimate {:.3}; max jump high {:.3} vs estimate {:.3}",
                            est.plans, low.mean_distance, est.mean_distance, high.mean_max_latent_jump, est.mean_max_latent_jump
                        ),
                    ),
                ),
                (
                    12,
                    "sweep consistency",
                    outcome(
                        sweep.estimate_admissible,
                        format!("estimate {:.3}, admissible interval {:?}", sweep.estimated_normalized, sweep.admissible),
                    ),
                ),
                (
                    13,
                    "invisible-start servoing",
                    outcome(
                        inv.closed.episodes >= 50 && inv.closed.success_rate >= 0.7,
                        format!(
                            "{} episodes, success {:.2} (true-pose arrival {:.2})",
                            inv.closed.episodes, inv.closed.success_rate, inv.true_arrival_rate
                        ),
                    ),
                ),
                (
                    14,
                    "return trend",
                    outcome(
                        inv.returns_trend_nondecreasing >= 0.8,
                        format!(
                            "nondecreasing trend in {:.2} of successes (step-by-step {:.2})",
                            inv.returns_trend_nondecreasing, inv.returns_nondecreasing
                        ),
                    ),
                ),
                (
                    15,
                    "closed vs open loop",
                    outcome(
                        all_closed < all_open,
                        format!("mean final position error closed {all_closed:.3} m vs open {all_open:.3} m"),
                    ),
                ),
            ]
        }
    };
    results.extend(trained_results);

    println!();
    let mut failed = 0;
    for (i, name, o) in &results {
        println!("criterion {i:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
