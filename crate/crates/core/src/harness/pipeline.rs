//! Stage orchestration with fingerprint-based artifact reuse.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::run_eval;
use super::metrics::{csv_err, Metrics, MetricsRow};
use super::sweep::run_sweep;
use super::{cmvae_feature_errors, load_velocity, save_velocity, Stack};
use crate::checkpoint::{file_hash, fingerprint};
use crate::cmvae::{train_cmvae, Cmvae};
use crate::datagen::{generate_dataset, read_dataset, write_dataset, Dataset};
use crate::ddpm::{encode_dataset, inverse_holdout_mse, train_diffuser_encoded, Diffuser};
use crate::planner::{fit_velocity_model, VelocityModel};
use crate::world::World;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    GenData,
    TrainCmvae,
    TrainDdpm,
    FitVelocity,
    Sweep,
    Eval,
}

impl StageName {
    pub const ALL: [StageName; 6] = [
        StageName::GenData,
        StageName::TrainCmvae,
        StageName::TrainDdpm,
        StageName::FitVelocity,
        StageName::Sweep,
        StageName::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::GenData => "gen-data",
            StageName::TrainCmvae => "train-cmvae",
            StageName::TrainDdpm => "train-ddpm",
            StageName::FitVelocity => "fit-velocity",
            StageName::Sweep => "sweep",
            StageName::Eval => "eval",
        }
    }

    /// Artifact whose content hash is recorded, relative to the output dir.
    pub fn artifact(self) -> &'static str {
        match self {
            StageName::GenData => "dataset.bin",
            StageName::TrainCmvae => "cmvae.ckpt",
            StageName::TrainDdpm => "ddpm.ckpt",
            StageName::FitVelocity => "velocity.json",
            StageName::Sweep => "sweep/sweep.json",
            StageName::Eval => "eval/eval.json",
        }
    }

    pub fn upstream(self) -> &'static [StageName] {
        use StageName::*;
        match self {
            GenData => &[],
            TrainCmvae => &[GenData],
            TrainDdpm => &[GenData, TrainCmvae],
            FitVelocity => &[GenData, TrainCmvae],
            Sweep => &[TrainCmvae, TrainDdpm, FitVelocity],
            Eval => &[TrainCmvae, TrainDdpm, FitVelocity],
        }
    }

    pub fn metrics_file(self) -> String {
        format!("{}.metrics.csv", self.as_str())
    }
}

impl std::fmt::Display for StageName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageName,
    pub fingerprint: String,
    pub artifact: String,
    /// SHA-256 of the artifact bytes.
    pub hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_fingerprint: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Other(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_json(self, path)
    }

    pub fn get(&self, stage: StageName) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn set(&mut self, rec: StageRecord) {
        self.stages.retain(|r| r.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|r| StageName::ALL.iter().position(|s| *s == r.stage));
    }
}

/// Fingerprint of the configuration a stage depends on, chained with the
/// fingerprints of its upstream stages.
pub fn stage_fingerprint(cfg: &ExperimentConfig, stage: StageName) -> String {
    let own = match stage {
        StageName::GenData => fingerprint(&(&cfg.world, &cfg.dataset, cfg.seeds.data)),
        StageName::TrainCmvae => fingerprint(&(&cfg.cmvae, cfg.seeds.cmvae)),
        StageName::TrainDdpm => fingerprint(&(&cfg.ddpm, cfg.seeds.ddpm)),
        StageName::FitVelocity => fingerprint(&(&cfg.planner.velocity_mode, cfg.planner.v_min, cfg.planner.v_max)),
        StageName::Sweep => fingerprint(&(&cfg.planner, &cfg.sweep)),
        StageName::Eval => fingerprint(&(&cfg.planner, &cfg.controller, &cfg.eval, &cfg.dataset, cfg.seeds.eval)),
    };
    let up: Vec<String> = stage.upstream().iter().map(|s| stage_fingerprint(cfg, *s)).collect();
    fingerprint(&(stage.as_str(), own, up))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub ran: Vec<StageName>,
    pub skipped: Vec<StageName>,
    pub manifest: Manifest,
    pub metrics: Vec<MetricsRow>,
}

/// Lazily loaded artifacts shared between stages.
struct Artifacts<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    world: World,
    dataset: Option<Dataset>,
    cmvae: Option<Cmvae>,
    diffuser: Option<Diffuser>,
    velocity: Option<VelocityModel>,
}

impl<'a> Artifacts<'a> {
    fn path(&self, stage: StageName) -> PathBuf {
        self.dir.join(stage.artifact())
    }

    fn dataset(&mut self) -> Result<&Dataset> {
        if self.dataset.is_none() {
            self.dataset = Some(read_dataset(&self.path(StageName::GenData))?);
        }
        Ok(self.dataset.as_ref().unwrap())
    }

    fn cmvae(&mut self) -> Result<&Cmvae> {
        if self.cmvae.is_none() {
            self.cmvae = Some(Cmvae::load(&self.path(StageName::TrainCmvae))?.0);
        }
        Ok(self.cmvae.as_ref().unwrap())
    }

    fn stack(&mut self) -> Result<Stack> {
        self.cmvae()?;
        let diffuser = match self.diffuser.take() {
            Some(d) => d,
            None => Diffuser::load(&self.path(StageName::TrainDdpm))?,
        };
        let velocity = match self.velocity.take() {
            Some(v) => v,
            None => load_velocity(&self.path(StageName::FitVelocity))?,
        };
        Ok(Stack {
            world: self.world.clone(),
            cmvae: self.cmvae.take().unwrap(),
            diffuser,
            velocity,
            planner_config: self.cfg.planner.clone(),
        })
    }

    fn restore(&mut self, stack: Stack) {
        self.cmvae = Some(stack.cmvae);
        self.diffuser = Some(stack.diffuser);
        self.velocity = Some(stack.velocity);
    }

    fn run(&mut self, stage: StageName) -> Result<Metrics> {
        let cfg = self.cfg;
        let mut m = Metrics::new(&cfg.name, stage_seed(cfg, stage));
        let out = self.path(stage);
        match stage {
            StageName::GenData => {
                let ds = generate_dataset(&self.world, &cfg.dataset, cfg.seeds.data, cfg.dataset.episodes)?;
                write_dataset(&ds, &out)?;
                gen_data_metrics(&ds, cfg.world.dt, &mut m);
                self.dataset = Some(ds);
            }
            StageName::TrainCmvae => {
                let ds = self.dataset()?.clone();
                let (model, log) = train_cmvae(&ds, &cfg.cmvae, cfg.seeds.cmvae)?;
                model.save(&out, &cfg.cmvae)?;
                if let Some(last) = log.epochs.last() {
                    m.push("cmvae.final_loss", last.train.total, "");
                    m.push("cmvae.final_image_rec", last.train.image_rec, "");
                    m.push("cmvae.final_feature_rec", last.train.feature_rec, "");
                    m.push("cmvae.final_kl", last.train.kl, "nats");
                }
                m.push("cmvae.train_frames", log.train_frames as f64, "count");
                let fe = cmvae_feature_errors(&ds, &model, cfg.cmvae.holdout_fraction)?;
                m.push("cmvae.holdout_frames", fe.frames as f64, "count");
                m.push("cmvae.median_r_error", fe.median_r, "m");
                m.push("cmvae.median_theta_error", fe.median_theta, "rad");
                m.push("cmvae.median_phi_error", fe.median_phi, "rad");
                m.push("cmvae.median_gamma_error", fe.median_gamma, "rad");
                m.push("cmvae.median_position_error", fe.median_position, "m");
                self.cmvae = Some(model);
            }
            StageName::TrainDdpm => {
                self.dataset()?;
                self.cmvae()?;
                let (ds, vae) = (self.dataset.as_ref().unwrap(), self.cmvae.as_ref().unwrap());
                let enc = encode_dataset(ds, vae, cfg.ddpm.holdout_fraction, cfg.ddpm.sample_latents, cfg.seeds.ddpm)?;
                let (dif, log) = train_diffuser_encoded(ds, &enc, &cfg.world, &cfg.ddpm, cfg.seeds.ddpm)?;
                dif.save(&out, stage_fingerprint(cfg, stage))?;
                let (mse, var) = inverse_holdout_mse(&dif, ds, &enc)?;
                if let Some(last) = log.curve.last() {
                    m.push("ddpm.final_loss", last.loss.total, "");
                    m.push("ddpm.final_diffusion_loss", last.loss.diffusion, "");
                    m.push("ddpm.final_inverse_loss", last.loss.inverse, "");
                }
                m.push("ddpm.windows", log.windows as f64, "count");
                m.push(
                    "ddpm.dropout_frequency",
                    log.dropped_conditions as f64 / log.total_conditions.max(1) as f64,
                    "fraction",
                );
                m.push("ddpm.inverse_holdout_mse", mse, "");
                m.push("ddpm.action_variance", var, "");
                write_curve(&log.curve, &self.dir.join("ddpm_curve.csv"))?;
                self.diffuser = Some(dif);
            }
            StageName::FitVelocity => {
                self.dataset()?;
                self.cmvae()?;
                let v = fit_velocity_model(
                    self.dataset.as_ref().unwrap(),
                    self.cmvae.as_ref().unwrap(),
                    cfg.world.dt,
                    cfg.planner.velocity_mode,
                    cfg.planner.v_min,
                    cfg.planner.v_max,
                )?;
                save_velocity(&v, &out)?;
                m.push("velocity.average", v.v_avg, "m/s");
                for (k, c) in v.coefficients.iter().enumerate() {
                    m.push(format!("velocity.coefficient[{k}]"), *c, "");
                }
                self.velocity = Some(v);
            }
            StageName::Sweep => {
                let stack = self.stack()?;
                let r = run_sweep(&stack, &cfg.sweep, out.parent());
                self.restore(stack);
                r?.to_metrics(&mut m);
            }
            StageName::Eval => {
                let stack = self.stack()?;
                let r = run_eval(&stack, cfg, out.parent());
                self.restore(stack);
                r?.to_metrics(&mut m);
            }
        }
        Ok(m)
    }
}

fn stage_seed(cfg: &ExperimentConfig, stage: StageName) -> u64 {
    match stage {
        StageName::GenData => cfg.seeds.data,
        StageName::TrainCmvae => cfg.seeds.cmvae,
        StageName::TrainDdpm | StageName::FitVelocity => cfg.seeds.ddpm,
        StageName::Sweep => cfg.sweep.seed,
        StageName::Eval => cfg.seeds.eval,
    }
}

pub fn gen_data_metrics(ds: &Dataset, dt: f64, m: &mut Metrics) {
    let n = ds.records.len().max(1) as f64;
    m.push("data.episodes", ds.records.len() as f64, "count");
    m.push("data.frames", ds.num_frames() as f64, "count");
    m.push("data.arrival_rate", ds.records.iter().filter(|r| r.arrived).count() as f64 / n, "fraction");
    m.push("data.return_min", ds.return_min, "");
    m.push("data.return_max", ds.return_max, "");
    let speeds: Vec<f64> = ds.records.iter().filter_map(|r| r.mean_speed(dt)).collect();
    m.push("data.mean_speed", speeds.iter().sum::<f64>() / speeds.len().max(1) as f64, "m/s");
}

fn write_curve(curve: &[crate::ddpm::DdpmLogEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "total", "diffusion", "inverse"]).map_err(csv_err)?;
    for e in curve {
        w.write_record([
            e.step.to_string(),
            e.loss.total.to_string(),
            e.loss.diffusion.to_string(),
            e.loss.inverse.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn is_current(dir: &Path, manifest: &Manifest, stage: StageName, fp: &str) -> bool {
    let Some(rec) = manifest.get(stage) else {
        return false;
    };
    if rec.fingerprint != fp || !dir.join(stage.metrics_file()).exists() {
        return false;
    }
    matches!(file_hash(&dir.join(&rec.artifact)), Ok(h) if h == rec.hash)
}

/// Runs every stage in order into `cfg.output_dir`. A stage is skipped when
/// its recorded fingerprint matches, its artifact is intact and none of its
/// upstream stages ran. The manifest is saved after each stage so partial
/// progress survives a failure, which is reported with the stage name.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = Manifest::load(&manifest_path).unwrap_or_default();
    manifest.config_fingerprint = fingerprint(cfg);
    let mut arts = Artifacts {
        cfg,
        dir: dir.clone(),
        world: World::new(cfg.world.clone()),
        dataset: None,
        cmvae: None,
        diffuser: None,
        velocity: None,
    };
    let (mut ran, mut skipped) = (Vec::new(), Vec::new());
    for stage in StageName::ALL {
        let fp = stage_fingerprint(cfg, stage);
        let upstream_ran = stage.upstream().iter().any(|s| ran.contains(s));
        if !upstream_ran && is_current(&dir, &manifest, stage, &fp) {
            log::info!("{stage}: up to date");
            skipped.push(stage);
            continue;
        }
        log::info!("{stage}: running");
        if let Some(parent) = arts.path(stage).parent() {
            std::fs::create_dir_all(parent)?;
        }
        let m = arts.run(stage).map_err(|e| Error::Stage {
            stage: stage.as_str(),
            source: Box::new(e),
        })?;
        m.write_csv(&dir.join(stage.metrics_file()))?;
        manifest.set(StageRecord {
            stage,
            fingerprint: fp,
            artifact: stage.artifact().to_string(),
            hash: file_hash(&arts.path(stage))?,
        });
        manifest.save(&manifest_path)?;
        ran.push(stage);
    }
    manifest.save(&manifest_path)?;
    let mut all = Metrics::new(&cfg.name, 0);
    for stage in StageName::ALL {
        all.extend(Metrics::read_csv(&dir.join(stage.metrics_file()))?);
    }
    all.write_csv(&dir.join(METRICS_FILE))?;
    Ok(PipelineOutcome {
        ran,
        skipped,
        manifest,
        metrics: all.rows().to_vec(),
    })
}
