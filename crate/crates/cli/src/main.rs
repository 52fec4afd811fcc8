use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffservo::cmvae::{train_cmvae, Cmvae};
use diffservo::controller::EpisodeResult;
use diffservo::datagen::{generate_dataset, read_dataset, write_dataset};
use diffservo::ddpm::{encode_dataset, inverse_holdout_mse, train_diffuser_encoded, Diffuser};
use diffservo::harness::eval::ModeSummary;
use diffservo::harness::figures::write_image_grid;
use diffservo::harness::pipeline::{gen_data_metrics, StageName};
use diffservo::harness::{
    cmvae_feature_errors, load_velocity, run_eval, run_pipeline, run_rollouts, run_sweep, save_velocity,
    write_episodes, write_json, ExperimentConfig, Metrics, RolloutMode, SeedConfig, Stack,
};
use diffservo::planner::{fit_velocity_model, VelocityMode};
use diffservo::world::{RobotPose, World};
use diffservo::Error;

#[derive(Parser)]
#[command(name = "diffservo", version, about = "Latent diffusion visual servoing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct StackPaths {
    #[arg(long)]
    cmvae: Option<PathBuf>,
    #[arg(long)]
    ddpm: Option<PathBuf>,
    /// Fitted velocity model; fitted from `--data` when absent.
    #[arg(long)]
    velocity: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the expert dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the cross-modal VAE.
    TrainCmvae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the latent diffuser and inverse dynamics.
    TrainDdpm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        cmvae: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fit the velocity model used by the return heuristic.
    FitVelocity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        cmvae: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<VelocityArg>,
    },
    /// Plan once from a start pose to the target view.
    Plan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        paths: StackPaths,
        /// Start pose as `x,y,psi`.
        #[arg(long, value_parser = parse_pose)]
        start_pose: RobotPose,
        /// Normalized return in [-1, 1], or `auto` for the heuristic.
        #[arg(long, default_value = "auto")]
        r#return: String,
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Run closed- or open-loop episodes from random starts.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        paths: StackPaths,
        #[arg(long, value_enum, default_value = "closed")]
        mode: ModeArg,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        nexec: Option<usize>,
    },
    /// Sweep the return condition on the standard fixture.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        paths: StackPaths,
    },
    /// Evaluate closed and open loop over strata and fixtures.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        paths: StackPaths,
    },
    /// Run every stage with artifact reuse.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VelocityArg {
    Average,
    Regression,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Closed,
    Open,
}

fn parse_pose(s: &str) -> Result<RobotPose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p}: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, psi] => Ok(RobotPose::new(*x, *y, *psi)),
        _ => Err("expected x,y,psi".into()),
    }
}

/// Exit codes by failure class.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 3,
        Error::MissingArtifact(_) | Error::Io(_) => 4,
        Error::DatasetVersion { .. }
        | Error::DatasetTruncated { .. }
        | Error::DatasetChecksum
        | Error::DatasetFormat(_)
        | Error::DegenerateReturns { .. }
        | Error::Checkpoint { .. } => 5,
        Error::TrainingDiverged { .. } => 6,
        Error::SamplerDiverged { .. } | Error::DiffusionStep { .. } => 7,
        Error::Shape { .. } | Error::Stage { .. } | Error::Other(_) => 1,
    }
}

type Res<T> = diffservo::Result<T>;

fn load_config(common: &Common) -> Res<ExperimentConfig> {
    match &common.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn require(path: PathBuf) -> Res<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn artifact(explicit: &Option<PathBuf>, cfg: &ExperimentConfig, stage: StageName) -> Res<PathBuf> {
    require(explicit.clone().unwrap_or_else(|| cfg.output_dir.join(stage.artifact())))
}

fn out_path(common: &Common, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.output_dir.join(default))
}

fn write_metrics(m: &Metrics, out: &Path, stage: StageName) -> Res<()> {
    let dir = if out.is_dir() {
        out.to_path_buf()
    } else {
        out.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    m.write_csv(&dir.join(stage.metrics_file()))
}

fn load_stack(paths: &StackPaths, cfg: &ExperimentConfig) -> Res<Stack> {
    let (cmvae, _) = Cmvae::load(&artifact(&paths.cmvae, cfg, StageName::TrainCmvae)?)?;
    let diffuser = Diffuser::load(&artifact(&paths.ddpm, cfg, StageName::TrainDdpm)?)?;
    let default_velocity = cfg.output_dir.join(StageName::FitVelocity.artifact());
    let velocity = match (&paths.velocity, &paths.data) {
        (Some(v), _) => load_velocity(v)?,
        (None, Some(d)) => {
            let ds = read_dataset(&require(d.clone())?)?;
            let p = &cfg.planner;
            fit_velocity_model(&ds, &cmvae, cfg.world.dt, p.velocity_mode, p.v_min, p.v_max)?
        }
        (None, None) => load_velocity(&require(default_velocity)?)?,
    };
    Ok(Stack {
        world: World::new(cfg.world.clone()),
        cmvae,
        diffuser,
        velocity,
        planner_config: cfg.planner.clone(),
    })
}

fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::GenData { common, episodes } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = episodes {
                cfg.dataset.episodes = e;
            }
            let seed = common.seed.unwrap_or(cfg.seeds.data);
            let out = out_path(&common, &cfg, StageName::GenData.artifact());
            let ds = generate_dataset(&World::new(cfg.world.clone()), &cfg.dataset, seed, cfg.dataset.episodes)?;
            write_dataset(&ds, &out)?;
            let mut m = Metrics::new(&cfg.name, seed);
            gen_data_metrics(&ds, cfg.world.dt, &mut m);
            write_metrics(&m, &out, StageName::GenData)?;
            println!("wrote {} episodes ({} frames) to {}", ds.records.len(), ds.num_frames(), out.display());
        }
        Command::TrainCmvae { common, data, epochs } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.cmvae.epochs = e;
            }
            let seed = common.seed.unwrap_or(cfg.seeds.cmvae);
            let ds = read_dataset(&artifact(&data, &cfg, StageName::GenData)?)?;
            let out = out_path(&common, &cfg, StageName::TrainCmvae.artifact());
            let (model, log) = train_cmvae(&ds, &cfg.cmvae, seed)?;
            model.save(&out, &cfg.cmvae)?;
            let fe = cmvae_feature_errors(&ds, &model, cfg.cmvae.holdout_fraction)?;
            let mut m = Metrics::new(&cfg.name, seed);
            if let Some(last) = log.epochs.last() {
                m.push("cmvae.final_loss", last.train.total, "");
            }
            m.push("cmvae.median_r_error", fe.median_r, "m");
            m.push("cmvae.median_theta_error", fe.median_theta, "rad");
            write_metrics(&m, &out, StageName::TrainCmvae)?;
            println!("median held-out r error {:.3} m, theta error {:.3} rad", fe.median_r, fe.median_theta);
        }
        Command::TrainDdpm { common, data, cmvae, steps } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.ddpm.steps = s;
            }
            let seed = common.seed.unwrap_or(cfg.seeds.ddpm);
            let ds = read_dataset(&artifact(&data, &cfg, StageName::GenData)?)?;
            let (vae, _) = Cmvae::load(&artifact(&cmvae, &cfg, StageName::TrainCmvae)?)?;
            let out = out_path(&common, &cfg, StageName::TrainDdpm.artifact());
            let enc = encode_dataset(&ds, &vae, cfg.ddpm.holdout_fraction, cfg.ddpm.sample_latents, seed)?;
            let (dif, log) = train_diffuser_encoded(&ds, &enc, &cfg.world, &cfg.ddpm, seed)?;
            dif.save(&out, diffservo::checkpoint::fingerprint(&cfg.ddpm))?;
            let (mse, var) = inverse_holdout_mse(&dif, &ds, &enc)?;
            let mut m = Metrics::new(&cfg.name, seed);
            if let Some(last) = log.curve.last() {
                m.push("ddpm.final_loss", last.loss.total, "");
            }
            m.push("ddpm.inverse_holdout_mse", mse, "");
            m.push("ddpm.action_variance", var, "");
            write_metrics(&m, &out, StageName::TrainDdpm)?;
            println!("inverse dynamics held-out mse {mse:.4} (action variance {var:.4})");
        }
        Command::FitVelocity { common, data, cmvae, mode } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = mode {
                cfg.planner.velocity_mode = match m {
                    VelocityArg::Average => VelocityMode::Average,
                    VelocityArg::Regression => VelocityMode::Regression,
                };
            }
            let ds = read_dataset(&artifact(&data, &cfg, StageName::GenData)?)?;
            let (vae, _) = Cmvae::load(&artifact(&cmvae, &cfg, StageName::TrainCmvae)?)?;
            let out = out_path(&common, &cfg, StageName::FitVelocity.artifact());
            let p = &cfg.planner;
            let v = fit_velocity_model(&ds, &vae, cfg.world.dt, p.velocity_mode, p.v_min, p.v_max)?;
            save_velocity(&v, &out)?;
            println!("{}", serde_json::to_string(&v).unwrap_or_default());
        }
        Command::Plan {
            common,
            paths,
            start_pose,
            r#return,
            omega,
        } => {
            let mut cfg = load_config(&common)?;
            if omega.is_some() {
                cfg.planner.omega = omega;
            }
            let condition = match r#return.as_str() {
                "auto" => None,
                v => Some(v.parse::<f64>().map_err(|e| Error::Config(format!("--return {v}: {e}")))?),
            };
            let stack = load_stack(&paths, &cfg)?;
            let dir = out_path(&common, &cfg, "plan");
            std::fs::create_dir_all(&dir)?;
            let planner = stack.planner();
            let target = stack.world.target_view_pose();
            let ends = planner.endpoints(&stack.world.render(&start_pose), &stack.world.render(&target))?;
            let seed = common.seed.unwrap_or(cfg.sweep.seed);
            let plan = planner.plan_batch(&ends, condition, &[seed])?.remove(0);
            write_json(&plan.trajectory, &dir.join("trajectory.json"))?;
            write_json(&plan.actions, &dir.join("actions.json"))?;
            write_json(&plan.diagnostics, &dir.join("diagnostics.json"))?;
            write_image_grid(&[stack.cmvae.decode_images(&plan.trajectory.columns)?], 3, &dir.join("strip.png"))?;
            println!(
                "return estimate {:.3} (condition {:.3}), final decoded distance {:.3} m",
                plan.diagnostics.normalized_return,
                plan.diagnostics.condition,
                plan.diagnostics.terminal_distance()
            );
        }
        Command::Rollout {
            common,
            paths,
            mode,
            episodes,
            nexec,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = nexec {
                cfg.controller.n_exec = n;
            }
            cfg.validate()?;
            let stack = load_stack(&paths, &cfg)?;
            let dir = out_path(&common, &cfg, "rollout");
            std::fs::create_dir_all(&dir)?;
            let mode = match mode {
                ModeArg::Closed => RolloutMode::Closed,
                ModeArg::Open => RolloutMode::Open,
            };
            let seed = common.seed.unwrap_or(cfg.seeds.eval);
            let results: Vec<EpisodeResult> =
                run_rollouts(&stack, &cfg.dataset, &cfg.controller, mode, episodes, seed)?;
            write_episodes(&results, &dir.join("episodes.jsonl"), &dir.join("episodes.csv"))?;
            let s = ModeSummary::of(&results);
            let mut m = Metrics::new(&cfg.name, seed);
            m.push("rollout.success_rate", s.success_rate, "fraction");
            m.push("rollout.mean_position_error", s.mean_position_error, "m");
            m.push("rollout.std_position_error", s.std_position_error, "m");
            m.push("rollout.mean_yaw_error", s.mean_yaw_error, "rad");
            m.write_csv(&dir.join("summary.csv"))?;
            println!(
                "success {:.2}, mean position error {:.3} m over {} episodes",
                s.success_rate, s.mean_position_error, s.episodes
            );
        }
        Command::Sweep { common, paths } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.sweep.seed = s;
            }
            let stack = load_stack(&paths, &cfg)?;
            let dir = out_path(&common, &cfg, "sweep");
            let report = run_sweep(&stack, &cfg.sweep, Some(&dir))?;
            let mut m = Metrics::new(&cfg.name, cfg.sweep.seed);
            report.to_metrics(&mut m);
            m.write_csv(&dir.join(StageName::Sweep.metrics_file()))?;
            println!(
                "estimate {:.3}, admissible {:?}, inside {}",
                report.estimated_normalized, report.admissible, report.estimate_admissible
            );
        }
        Command::Eval { common, paths } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.seeds.eval = s;
            }
            let stack = load_stack(&paths, &cfg)?;
            let dir = out_path(&common, &cfg, "eval");
            let report = run_eval(&stack, &cfg, Some(&dir))?;
            let mut m = Metrics::new(&cfg.name, cfg.seeds.eval);
            report.to_metrics(&mut m);
            m.write_csv(&dir.join(StageName::Eval.metrics_file()))?;
            for s in &report.strata {
                println!(
                    "{}: closed success {:.2} error {:.3} m, open error {:.3} m",
                    s.name, s.closed.success_rate, s.closed.mean_position_error, s.open.mean_position_error
                );
            }
        }
        Command::Pipeline { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.seeds = SeedConfig::from_base(s);
            }
            if let Some(o) = common.out {
                cfg.output_dir = o;
            }
            let outcome = run_pipeline(&cfg)?;
            for s in &outcome.ran {
                println!("ran {s}");
            }
            for s in &outcome.skipped {
                println!("skipped {s}");
            }
            println!("{} metric rows in {}", outcome.metrics.len(), cfg.output_dir.join("metrics.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
